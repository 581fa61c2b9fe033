#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cbox/datagen.hpp"
#include "cbox/encoder.hpp"
#include "cbox/metrics.hpp"
#include "cbox/space.hpp"
#include "cbox/trainer.hpp"

namespace cbox {

enum class PairProvenance { original, sentence_swap, attribute_swap };

std::string to_string(PairProvenance provenance);

// One image-text pair for matching; labels are the vision side's ground
// truth. Negatives record which construction produced them.
struct PairedSample {
    std::vector<double> vision;
    std::string text;
    std::vector<int> labels;
    bool positive = true;
    PairProvenance provenance = PairProvenance::original;
};

enum class ItmSwapMode { sentence_swap, attribute_swap };

std::string to_string(ItmSwapMode mode);
ItmSwapMode itm_swap_mode_from_string(const std::string& s);

// Negative-pair construction. sentence_swap replaces the sentences of a
// `fraction` share with another sample's sentence through a derangement
// restricted to differing label sets (an unresolvable position falls back to
// a positive pair). attribute_swap rewrites one attribute to a different
// same-family value and regenerates the sentence.
std::vector<PairedSample> make_itm_pairs(std::span<const AnnotatedSample> samples, ItmSwapMode mode,
                                         double fraction, Rng& rng, const Vocabulary& vocab,
                                         const GeneratorConfig& gen_config);

// Generator config equivalent to a dataset header, for sentence regeneration.
GeneratorConfig config_from_header(const DatasetHeader& header);

// ---------------------------------------------------------------------------
// Joint loss and scoring
// ---------------------------------------------------------------------------

// 1 - [P(a|b) + P(b|a)] / 2 with clamped entailments, so minimization grows
// the mutual overlap. Zero-adjacent when the boxes coincide.
double joint_loss(const Box& a, const Box& b, const GlobalExtrema& extrema, double eps);

// Alternative log form: -[ln P(a|b) + ln P(b|a)] / 2.
double joint_loss_log(const Box& a, const Box& b, const GlobalExtrema& extrema, double eps);

// Adds w * d joint_loss / d(fields) into both gradients.
void add_d_joint_loss(const Box& a, const Box& b, const GlobalExtrema& extrema, double eps, double w,
                      bool log_form, BoxGrad& grad_a, BoxGrad& grad_b);

// Mean cross entailment of the two projections, in [eps, 1-eps].
double itm_score(std::span<const double> vision_payload, const std::string& text,
                 const FeatureEncoder& vision_enc, const FeatureEncoder& text_enc,
                 const ConceptSpace& space);

// ---------------------------------------------------------------------------
// Joint training (Fig. 4 analogue)
// ---------------------------------------------------------------------------

struct JointTrainConfig {
    double lr = 1e-4;
    int batch = 256;
    int steps = 500;
    double beta = 1.0;  // 0 disables concept-space updates
    double pos_weight = 3.0;
    bool log_form = false;
    std::uint64_t seed = 0;
    NegativePolicy neg_policy = NegativePolicy::same_family;
    int neg_k = 5;

    void validate() const;
};

struct JointTrainResult {
    std::vector<double> step_loss;
    std::vector<double> cross_entailment_curve;  // on the eval positives, per step
};

// Minimizes mean joint_loss plus both modalities' projection losses, plus
// beta times the concept KL loss. The concept space is updated only when
// beta > 0; extrema are refreshed from concept boxes every step.
JointTrainResult joint_train(std::span<const AnnotatedSample> paired, FeatureEncoder& vision_enc,
                             FeatureEncoder& text_enc, ConceptSpace& space,
                             const GroundTruthStats& stats, const JointTrainConfig& cfg,
                             std::span<const AnnotatedSample> eval_positives = {},
                             MetricsWriter* metrics = nullptr);

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct ItmReport {
    std::string mode;
    double accuracy = 0.0;
    double threshold = 0.5;
    std::int64_t n_pos = 0;
    std::int64_t n_neg = 0;
};

ItmReport evaluate_itm(std::span<const PairedSample> pairs, const FeatureEncoder& vision_enc,
                       const FeatureEncoder& text_enc, const ConceptSpace& space,
                       const std::string& mode_name, double threshold = 0.5, int threads = 1);

}  // namespace cbox
