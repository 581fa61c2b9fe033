#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cbox/box.hpp"
#include "cbox/metrics.hpp"
#include "cbox/rng.hpp"
#include "cbox/space.hpp"
#include "cbox/vocab.hpp"

namespace cbox {

// Which conditional orderings an unordered concept pair contributes to the
// objective: both Q(y1|y2) and Q(y2|y1), or only the canonical one where the
// lower concept id is conditioned on the higher.
enum class PairOrdering { both, canonical };

std::string to_string(PairOrdering ordering);
PairOrdering pair_ordering_from_string(const std::string& s);

struct ConceptTrainConfig {
    double lr = 1e-3;
    int batch = 256;
    int epochs = 2;
    double weight_decay = 1e-2;
    std::uint64_t seed = 0;
    double init_min_lo = 0.0;
    double init_min_hi = 1.0;
    double init_delta_lo = 0.1;
    double init_delta_hi = 0.9;
    NegativePolicy neg_policy = NegativePolicy::same_family;
    int neg_k = 5;
    PairOrdering ordering = PairOrdering::both;

    void validate() const;
};

struct FitReport {
    std::vector<double> epoch_mean_loss;
    double final_dkl = 0.0;       // mean Bernoulli KL over all target pairs
    double max_abs_error = 0.0;   // max |Q - P| over all target pairs
    double baseline_dkl = 0.0;    // same metric on the untrained space
    std::int64_t skipped_pairs = 0;
    double wall_time_s = 0.0;
};

struct FitResult {
    ConceptSpace space;
    FitReport report;
};

// Boxes with min ~ U[init_min_lo, init_min_hi) and
// delta ~ U[init_delta_lo, init_delta_hi) per coordinate.
ConceptSpace init_space(const Vocabulary& vocab, const KnowledgeSpaceConfig& kcfg,
                        const ConceptTrainConfig& cfg, Rng& rng);

// Bernoulli KL between target p and prediction q:
// p ln(p/q) + (1-p) ln((1-p)/(1-q)), with p clamped into [eps, 1-eps] and q
// assumed already clamped. Zero exactly when p == q.
double kl_pair_loss(double p_target, double q_pred, double eps);

// Mean over label sets of the per-sample pair objective
// 1/(2 |C(y,2)|) * sum over pairs of the selected ordered KL terms.
// Label sets must already include their negative concepts. Pairs whose
// conditioning concept has zero count are skipped and counted. When `grads`
// is non-null it must hold one BoxGrad per concept; gradients are
// accumulated into it.
double concept_loss(std::span<const std::vector<int>> label_sets, const ConceptSpace& space,
                    const GroundTruthStats& stats, PairOrdering ordering,
                    std::vector<BoxGrad>* grads, std::int64_t* skipped_pairs);

// Mean Bernoulli KL over explicit ordered pair targets.
double pair_table_loss(std::span<const PairTarget> entries, const ConceptSpace& space,
                       std::vector<BoxGrad>* grads);

// Fits a concept space to count-derived entailment targets with AdamW.
// Negatives are drawn once per sample before training. Extrema are
// recomputed from the concept boxes at every step.
FitResult fit_concept_space(std::span<const AnnotatedSample> samples, const Vocabulary& vocab,
                            const GroundTruthStats& stats, const KnowledgeSpaceConfig& kcfg,
                            const ConceptTrainConfig& cfg, MetricsWriter* metrics = nullptr);

// Same loop driven by an explicit pair-probability table (hierarchy pathway).
FitResult fit_concept_space(const PairTable& table, const Vocabulary& vocab,
                            const KnowledgeSpaceConfig& kcfg, const ConceptTrainConfig& cfg,
                            MetricsWriter* metrics = nullptr);

struct ProbeRow {
    std::string name1;
    std::string name2;
    double predicted = 0.0;
    std::optional<double> target;
};

// Predicted (and, given stats, target) entailments for explicit pairs. With
// normalize_within_family, predictions of attribute concepts that share a
// family and a conditioning concept are SoftMax-normalized to sum to 1.
std::vector<ProbeRow> probe(const ConceptSpace& space,
                            std::span<const std::pair<std::string, std::string>> pairs,
                            bool normalize_within_family,
                            const GroundTruthStats* stats = nullptr);

}  // namespace cbox
