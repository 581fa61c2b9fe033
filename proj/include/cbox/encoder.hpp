#pragma once

#include <cstdint>
#include <map>
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

// Row-major dense matrix, all the linear algebra these toy encoders need.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), 0.0) {}
    double& at(int r, int c) { return a[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c)]; }
    double at(int r, int c) const { return a[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c)]; }
};

enum class Modality { vision, text };

std::string to_string(Modality modality);
Modality modality_from_string(const std::string& s);

// Fixed token table for the text modality; payloads are bags of token counts.
struct TokenTable {
    std::vector<std::string> tokens;  // sorted, unique

    static TokenTable build(std::span<const AnnotatedSample> samples);
    std::vector<double> counts(const std::string& text) const;
    int size() const { return static_cast<int>(tokens.size()); }
};

// One-layer ReLU encoder into an E-dim embedding, split in half, two linear
// heads producing omega_min and ReLU-rectified omega_delta.
struct FeatureEncoder {
    Modality modality = Modality::vision;
    int feat_dim = 0;   // F
    int embed_dim = 0;  // E, even
    int out_dim = 0;    // d

    Mat enc_w;                      // E x F
    std::vector<double> enc_b;      // E
    Mat min_w;                      // d x E/2
    std::vector<double> min_b;      // d
    Mat delta_w;                    // d x E/2
    std::vector<double> delta_b;    // d

    std::vector<std::string> tokens;  // text modality only

    static FeatureEncoder init(Modality modality, int feat_dim, int embed_dim, int out_dim, Rng& rng);

    std::size_t param_count() const;
    void validate() const;
};

// Encoder weights file: versioned record {modality, F, E, d, matrices
// row-major, biases, token table for the text modality}. Bit-exact round
// trip.
void save_encoder(const FeatureEncoder& encoder, const std::string& path);
FeatureEncoder load_encoder(const std::string& path);

// Sample payload for the encoder's modality: the vision feature vector, or
// token counts of the sentence.
std::vector<double> encoder_payload(const FeatureEncoder& encoder, const AnnotatedSample& sample);

Box encode(std::span<const double> payload, const FeatureEncoder& encoder);

// Forward pass keeping the intermediates backprop needs.
struct EncodeTrace {
    std::vector<double> pre_embed;  // E, before the encoder ReLU
    std::vector<double> embed;      // E
    std::vector<double> pre_delta;  // d, before the width ReLU
    Box box;
};
EncodeTrace encode_trace(std::span<const double> payload, const FeatureEncoder& encoder);

// Gradient accumulator with the encoder's shape.
struct EncoderGrad {
    Mat enc_w;
    std::vector<double> enc_b;
    Mat min_w;
    std::vector<double> min_b;
    Mat delta_w;
    std::vector<double> delta_b;

    explicit EncoderGrad(const FeatureEncoder& enc);
    void reset();
};

// Pushes a loss gradient on the projected box back through ReLU, heads and
// encoder, accumulating into `grad`. ReLU'(0) is taken as 0.
void backprop_encoder(const FeatureEncoder& encoder, std::span<const double> payload,
                      const EncodeTrace& trace, const BoxGrad& dbox, EncoderGrad& grad);

// ---------------------------------------------------------------------------
// Losses (projected box against the concept space)
// ---------------------------------------------------------------------------

// Weighted binary cross-entropy over all attribute concepts; positives get
// weight `pos_weight`, the negative term is -log(1 - P).
double attr_loss(std::span<const int> labels, const Box& projected, const ConceptSpace& space,
                 double pos_weight);

// Multi-class cross-entropy with SoftMax over exp(P(y|x)) across category
// concepts. Samples without a category label contribute 0 (counted by the
// caller via has_category_label).
double cat_loss(std::span<const int> labels, const Box& projected, const ConceptSpace& space);

bool has_category_label(std::span<const int> labels, const Vocabulary& vocab);

// Loss plus gradient with respect to the projected box.
double attr_loss_grad(std::span<const int> labels, const Box& projected, const ConceptSpace& space,
                      double pos_weight, BoxGrad& dbox, std::vector<BoxGrad>* concept_grads = nullptr);
double cat_loss_grad(std::span<const int> labels, const Box& projected, const ConceptSpace& space,
                     BoxGrad& dbox, std::vector<BoxGrad>* concept_grads = nullptr);

// ---------------------------------------------------------------------------
// Prediction and calibration
// ---------------------------------------------------------------------------

enum class PredictionRule { per_family_argmax, threshold_plus_category_argmax };

struct ThresholdTable {
    std::map<int, double> by_concept;  // attribute concept id -> threshold

    double at(int concept_id) const;
};

// per_family_argmax: one attribute per family (lowest id wins ties).
// threshold_plus_category_argmax: attributes with P >= threshold plus the
// category argmax; requires thresholds.
std::vector<int> predict(const Box& projected, const ConceptSpace& space, PredictionRule rule,
                         const ThresholdTable* thresholds = nullptr);

struct AttributeScores {
    int concept_id = -1;
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;  // 1 positive, 0 negative
};

// Per attribute, the grid threshold {0.05, ..., 0.95} maximizing F1, ties
// toward the smallest value; attributes without positives default to 0.5.
ThresholdTable calibrate_thresholds(std::span<const AttributeScores> scores);

// Convenience: scores from encoding a validation split.
ThresholdTable calibrate_thresholds(std::span<const AnnotatedSample> validation,
                                    const ConceptSpace& space, const FeatureEncoder& encoder);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct ProjectionTrainConfig {
    double lr = 1e-4;
    int batch = 256;
    int epochs = 1;
    double pos_weight = 3.0;
    double warmup_frac = -1.0;  // fraction of total steps; < 0 means one epoch
    double decay_floor = 0.1;   // linear decay ends at decay_floor * lr
    std::uint64_t seed = 0;

    void validate() const;
};

// Warm-up then linear decay to decay_floor * peak.
double scheduled_lr(double peak, std::int64_t step, std::int64_t total_steps,
                    std::int64_t warmup_steps, double decay_floor);

struct ProjectionEval {
    double attr_accuracy = 0.0;  // per-family argmax, micro over (object, family)
    double cat_accuracy = 0.0;
    double attr_f1 = 0.0;        // micro F1 under thresholds, when supplied
    std::int64_t samples = 0;
};

ProjectionEval evaluate_projection(std::span<const AnnotatedSample> samples, const ConceptSpace& space,
                                   const FeatureEncoder& encoder, PredictionRule rule,
                                   const ThresholdTable* thresholds = nullptr);

struct ProjectionMetrics {
    std::vector<double> step_loss;
    std::vector<double> epoch_attr_accuracy;  // on the eval split when given
    std::int64_t skipped_category = 0;        // samples with no category label
};

// AdamW on the encoder weights only; the concept space is frozen.
ProjectionMetrics train_projection(std::span<const AnnotatedSample> train, const ConceptSpace& space,
                                   FeatureEncoder& encoder, const ProjectionTrainConfig& cfg,
                                   std::span<const AnnotatedSample> eval_split = {},
                                   MetricsWriter* metrics = nullptr);

// ---------------------------------------------------------------------------
// Ablation (pretrained frozen space vs joint from-scratch training)
// ---------------------------------------------------------------------------

struct AblationConfig {
    ProjectionTrainConfig proj;
    double concept_lr = 1e-3;
    double concept_weight_decay = 1e-2;
    NegativePolicy neg_policy = NegativePolicy::same_family;
    int neg_k = 5;
    KnowledgeSpaceConfig kspace;
    double target_accuracy = 0.95;
    std::uint64_t space_seed = 0;  // arm B's fresh space init
};

struct AblationCurves {
    std::vector<double> arm_a_accuracy;  // held-out accuracy per step
    std::vector<double> arm_b_accuracy;
    int steps_to_target_a = -1;  // -1: never reached
    int steps_to_target_b = -1;
};

// Arm A trains the encoder against the pretrained frozen space; arm B trains
// the same encoder init jointly with a freshly initialized space under
// loss + concept KL. Seeds and batch order are shared.
AblationCurves ablation_run(std::span<const AnnotatedSample> train,
                            std::span<const AnnotatedSample> eval_split, const Vocabulary& vocab,
                            const GroundTruthStats& stats, const ConceptSpace& pretrained,
                            const AblationConfig& cfg, MetricsWriter* metrics = nullptr);

}  // namespace cbox
