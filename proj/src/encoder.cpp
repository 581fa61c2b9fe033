#include "cbox/encoder.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <stdexcept>

#include "cbox/optim.hpp"
#include "cbox/trainer.hpp"

namespace cbox {

std::string to_string(Modality modality) {
    return modality == Modality::vision ? "vision" : "text";
}

Modality modality_from_string(const std::string& s) {
    if (s == "vision") return Modality::vision;
    if (s == "text") return Modality::text;
    throw std::invalid_argument("unknown modality: '" + s + "'");
}

// ---------------------------------------------------------------------------
// TokenTable
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_tokens(const std::string& text) {
    std::vector<std::string> out;
    std::string token;
    for (const char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            token += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        } else if (!token.empty()) {
            out.push_back(std::move(token));
            token.clear();
        }
    }
    if (!token.empty()) out.push_back(std::move(token));
    return out;
}

}  // namespace

TokenTable TokenTable::build(std::span<const AnnotatedSample> samples) {
    std::set<std::string> seen;
    for (const AnnotatedSample& s : samples) {
        for (std::string& t : split_tokens(s.text)) {
            seen.insert(std::move(t));
        }
    }
    TokenTable table;
    table.tokens.assign(seen.begin(), seen.end());
    return table;
}

std::vector<double> TokenTable::counts(const std::string& text) const {
    std::vector<double> out(tokens.size(), 0.0);
    for (const std::string& t : split_tokens(text)) {
        const auto it = std::lower_bound(tokens.begin(), tokens.end(), t);
        if (it != tokens.end() && *it == t) {
            out[static_cast<std::size_t>(it - tokens.begin())] += 1.0;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// FeatureEncoder
// ---------------------------------------------------------------------------

namespace {

void init_uniform(Mat& m, double bound, Rng& rng) {
    for (double& x : m.a) x = rng.uniform(-bound, bound);
}

}  // namespace

FeatureEncoder FeatureEncoder::init(Modality modality, int feat_dim, int embed_dim, int out_dim,
                                    Rng& rng) {
    if (embed_dim % 2 != 0) {
        throw std::invalid_argument("FeatureEncoder: embed_dim must be even");
    }
    if (feat_dim < 1 || embed_dim < 2 || out_dim < 1) {
        throw std::invalid_argument("FeatureEncoder: bad dimensions");
    }
    FeatureEncoder enc;
    enc.modality = modality;
    enc.feat_dim = feat_dim;
    enc.embed_dim = embed_dim;
    enc.out_dim = out_dim;
    enc.enc_w = Mat(embed_dim, feat_dim);
    enc.enc_b.assign(static_cast<std::size_t>(embed_dim), 0.0);
    const int half = embed_dim / 2;
    enc.min_w = Mat(out_dim, half);
    enc.min_b.assign(static_cast<std::size_t>(out_dim), 0.0);
    enc.delta_w = Mat(out_dim, half);
    enc.delta_b.assign(static_cast<std::size_t>(out_dim), 0.0);

    init_uniform(enc.enc_w, 1.0 / std::sqrt(static_cast<double>(feat_dim)), rng);
    const double head_bound = 1.0 / std::sqrt(static_cast<double>(half));
    init_uniform(enc.min_w, head_bound, rng);
    init_uniform(enc.delta_w, head_bound, rng);
    // positive width bias keeps the ReLU path alive at init; pure shrink
    // pressure from the containment losses otherwise kills every delta
    std::fill(enc.delta_b.begin(), enc.delta_b.end(), 0.5);
    return enc;
}

std::size_t FeatureEncoder::param_count() const {
    return enc_w.a.size() + enc_b.size() + min_w.a.size() + min_b.size() + delta_w.a.size() +
           delta_b.size();
}

void FeatureEncoder::validate() const {
    if (embed_dim % 2 != 0) {
        throw std::invalid_argument("FeatureEncoder: embed_dim must be even");
    }
    if (enc_w.rows != embed_dim || enc_w.cols != feat_dim || min_w.rows != out_dim ||
        min_w.cols != embed_dim / 2 || delta_w.rows != out_dim || delta_w.cols != embed_dim / 2) {
        throw std::invalid_argument("FeatureEncoder: inconsistent weight shapes");
    }
    if (modality == Modality::text && static_cast<int>(tokens.size()) != feat_dim) {
        throw std::invalid_argument("FeatureEncoder: token table size must equal feat_dim");
    }
}

void save_encoder(const FeatureEncoder& encoder, const std::string& path) {
    nlohmann::json j;
    j["version"] = 1;
    j["modality"] = to_string(encoder.modality);
    j["F"] = encoder.feat_dim;
    j["E"] = encoder.embed_dim;
    j["d"] = encoder.out_dim;
    j["enc_w"] = encoder.enc_w.a;
    j["enc_b"] = encoder.enc_b;
    j["min_w"] = encoder.min_w.a;
    j["min_b"] = encoder.min_b;
    j["delta_w"] = encoder.delta_w.a;
    j["delta_b"] = encoder.delta_b;
    if (encoder.modality == Modality::text) {
        j["tokens"] = encoder.tokens;
    }
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot open '" + path + "' for writing");
    }
    out << j.dump() << "\n";
    if (!out) {
        throw std::runtime_error("write failed for '" + path + "'");
    }
}

FeatureEncoder load_encoder(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open encoder file '" + path + "'");
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed encoder file '" + path + "': " + e.what());
    }
    if (!j.contains("version") || j["version"].get<int>() != 1) {
        throw FormatError("encoder file '" + path + "' has an unsupported version");
    }
    FeatureEncoder enc;
    try {
        enc.modality = modality_from_string(j.at("modality").get<std::string>());
        enc.feat_dim = j.at("F").get<int>();
        enc.embed_dim = j.at("E").get<int>();
        enc.out_dim = j.at("d").get<int>();
        enc.enc_w = Mat(enc.embed_dim, enc.feat_dim);
        enc.enc_w.a = j.at("enc_w").get<std::vector<double>>();
        enc.enc_b = j.at("enc_b").get<std::vector<double>>();
        enc.min_w = Mat(enc.out_dim, enc.embed_dim / 2);
        enc.min_w.a = j.at("min_w").get<std::vector<double>>();
        enc.min_b = j.at("min_b").get<std::vector<double>>();
        enc.delta_w = Mat(enc.out_dim, enc.embed_dim / 2);
        enc.delta_w.a = j.at("delta_w").get<std::vector<double>>();
        enc.delta_b = j.at("delta_b").get<std::vector<double>>();
        if (enc.modality == Modality::text) {
            enc.tokens = j.at("tokens").get<std::vector<std::string>>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bad encoder record in '" + path + "': " + e.what());
    }
    if (enc.enc_w.a.size() != static_cast<std::size_t>(enc.embed_dim) * static_cast<std::size_t>(enc.feat_dim) ||
        enc.min_w.a.size() != static_cast<std::size_t>(enc.out_dim) * static_cast<std::size_t>(enc.embed_dim / 2) ||
        enc.delta_w.a.size() != static_cast<std::size_t>(enc.out_dim) * static_cast<std::size_t>(enc.embed_dim / 2)) {
        throw FormatError("encoder file '" + path + "': matrix sizes do not match the header");
    }
    enc.validate();
    return enc;
}

std::vector<double> encoder_payload(const FeatureEncoder& encoder, const AnnotatedSample& sample) {
    if (encoder.modality == Modality::vision) {
        return sample.vision;
    }
    TokenTable table;
    table.tokens = encoder.tokens;
    return table.counts(sample.text);
}

EncodeTrace encode_trace(std::span<const double> payload, const FeatureEncoder& encoder) {
    if (static_cast<int>(payload.size()) != encoder.feat_dim) {
        throw std::domain_error("encode: payload length " + std::to_string(payload.size()) +
                                " does not match encoder feat_dim " + std::to_string(encoder.feat_dim));
    }
    EncodeTrace trace;
    trace.pre_embed.assign(static_cast<std::size_t>(encoder.embed_dim), 0.0);
    trace.embed.assign(static_cast<std::size_t>(encoder.embed_dim), 0.0);
    for (int i = 0; i < encoder.embed_dim; ++i) {
        double acc = encoder.enc_b[static_cast<std::size_t>(i)];
        for (int j = 0; j < encoder.feat_dim; ++j) {
            acc += encoder.enc_w.at(i, j) * payload[static_cast<std::size_t>(j)];
        }
        trace.pre_embed[static_cast<std::size_t>(i)] = acc;
        trace.embed[static_cast<std::size_t>(i)] = std::max(0.0, acc);
    }
    const int half = encoder.embed_dim / 2;
    const int d = encoder.out_dim;
    std::vector<double> mn(static_cast<std::size_t>(d));
    std::vector<double> dl(static_cast<std::size_t>(d));
    trace.pre_delta.assign(static_cast<std::size_t>(d), 0.0);
    for (int k = 0; k < d; ++k) {
        double acc_min = encoder.min_b[static_cast<std::size_t>(k)];
        double acc_delta = encoder.delta_b[static_cast<std::size_t>(k)];
        for (int j = 0; j < half; ++j) {
            acc_min += encoder.min_w.at(k, j) * trace.embed[static_cast<std::size_t>(j)];
            acc_delta += encoder.delta_w.at(k, j) * trace.embed[static_cast<std::size_t>(half + j)];
        }
        mn[static_cast<std::size_t>(k)] = acc_min;
        trace.pre_delta[static_cast<std::size_t>(k)] = acc_delta;
        dl[static_cast<std::size_t>(k)] = std::max(0.0, acc_delta);
    }
    trace.box = Box(std::move(mn), std::move(dl));
    return trace;
}

Box encode(std::span<const double> payload, const FeatureEncoder& encoder) {
    return encode_trace(payload, encoder).box;
}

EncoderGrad::EncoderGrad(const FeatureEncoder& enc)
    : enc_w(enc.embed_dim, enc.feat_dim),
      enc_b(static_cast<std::size_t>(enc.embed_dim), 0.0),
      min_w(enc.out_dim, enc.embed_dim / 2),
      min_b(static_cast<std::size_t>(enc.out_dim), 0.0),
      delta_w(enc.out_dim, enc.embed_dim / 2),
      delta_b(static_cast<std::size_t>(enc.out_dim), 0.0) {}

void EncoderGrad::reset() {
    std::fill(enc_w.a.begin(), enc_w.a.end(), 0.0);
    std::fill(enc_b.begin(), enc_b.end(), 0.0);
    std::fill(min_w.a.begin(), min_w.a.end(), 0.0);
    std::fill(min_b.begin(), min_b.end(), 0.0);
    std::fill(delta_w.a.begin(), delta_w.a.end(), 0.0);
    std::fill(delta_b.begin(), delta_b.end(), 0.0);
}

void backprop_encoder(const FeatureEncoder& encoder, std::span<const double> payload,
                      const EncodeTrace& trace, const BoxGrad& dbox, EncoderGrad& grad) {
    const int d = encoder.out_dim;
    const int half = encoder.embed_dim / 2;
    std::vector<double> dembed(static_cast<std::size_t>(encoder.embed_dim), 0.0);
    for (int k = 0; k < d; ++k) {
        const double gm = dbox.min[static_cast<std::size_t>(k)];
        // width rectifier: projected-gradient convention, a clipped width can
        // grow back (negative loss-gradient passes) but cannot shrink further
        const double raw_gd = dbox.delta[static_cast<std::size_t>(k)];
        const double gd = trace.pre_delta[static_cast<std::size_t>(k)] > 0.0
                              ? raw_gd
                              : std::min(0.0, raw_gd);
        grad.min_b[static_cast<std::size_t>(k)] += gm;
        grad.delta_b[static_cast<std::size_t>(k)] += gd;
        for (int j = 0; j < half; ++j) {
            grad.min_w.at(k, j) += gm * trace.embed[static_cast<std::size_t>(j)];
            grad.delta_w.at(k, j) += gd * trace.embed[static_cast<std::size_t>(half + j)];
            dembed[static_cast<std::size_t>(j)] += encoder.min_w.at(k, j) * gm;
            dembed[static_cast<std::size_t>(half + j)] += encoder.delta_w.at(k, j) * gd;
        }
    }
    for (int i = 0; i < encoder.embed_dim; ++i) {
        // ReLU gate on the embedding, same subgradient convention
        const double ge = trace.pre_embed[static_cast<std::size_t>(i)] > 0.0
                              ? dembed[static_cast<std::size_t>(i)]
                              : 0.0;
        grad.enc_b[static_cast<std::size_t>(i)] += ge;
        for (int j = 0; j < encoder.feat_dim; ++j) {
            grad.enc_w.at(i, j) += ge * payload[static_cast<std::size_t>(j)];
        }
    }
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

namespace {

// d q / d lnq through the clamp. Inside the band this is exact; below the
// floor a positive-pull term is rescued at eps (same convention as the
// concept trainer); at the ceiling only push-down survives.
double clamp_chain(double q_raw, double eps, bool want_up) {
    if (q_raw < eps) return want_up ? eps : q_raw;
    if (q_raw > 1.0 - eps) return want_up ? 0.0 : 1.0 - eps;
    return q_raw;
}

struct EntailTerm {
    double q_raw;
    double q;
};

EntailTerm entail_term(const Box& concept_box, const Box& projected, const ConceptSpace& space) {
    const double lnq = log_entailment(concept_box, projected, space.extrema);
    const double q_raw = std::exp(lnq);
    return {q_raw, clamp_prob(q_raw, space.config.prob_clamp_eps)};
}

}  // namespace

bool has_category_label(std::span<const int> labels, const Vocabulary& vocab) {
    for (const int y : labels) {
        if (vocab.concept_at(y).kind == ConceptKind::category) return true;
    }
    return false;
}

double attr_loss(std::span<const int> labels, const Box& projected, const ConceptSpace& space,
                 double pos_weight) {
    BoxGrad scratch(0);
    return attr_loss_grad(labels, projected, space, pos_weight, scratch, nullptr);
}

double attr_loss_grad(std::span<const int> labels, const Box& projected, const ConceptSpace& space,
                      double pos_weight, BoxGrad& dbox, std::vector<BoxGrad>* concept_grads) {
    const auto attrs = space.vocab.attribute_ids();
    if (attrs.empty()) return 0.0;
    const double eps = space.config.prob_clamp_eps;
    const double inv = 1.0 / static_cast<double>(attrs.size());
    const bool want_grad = dbox.min.size() == static_cast<std::size_t>(projected.dim());

    double loss = 0.0;
    BoxGrad scratch(space.config.dim);
    for (const int y : attrs) {
        const Box& cbox = space.boxes[static_cast<std::size_t>(y)];
        const auto [q_raw, q] = entail_term(cbox, projected, space);
        const bool positive = std::find(labels.begin(), labels.end(), y) != labels.end();
        double dl_dq = 0.0;
        if (positive) {
            loss += inv * (-pos_weight * std::log(q));
            dl_dq = -pos_weight / q;
        } else {
            loss += inv * (-std::log(1.0 - q));
            dl_dq = 1.0 / (1.0 - q);
        }
        if (want_grad) {
            const double coef = inv * dl_dq * clamp_chain(q_raw, eps, dl_dq < 0.0);
            if (coef != 0.0) {
                BoxGrad& cgrad = concept_grads != nullptr ? (*concept_grads)[static_cast<std::size_t>(y)]
                                                          : scratch;
                add_d_log_entailment(cbox, projected, coef, cgrad, dbox);
            }
        }
    }
    if (!std::isfinite(loss)) {
        throw std::runtime_error("attr_loss is not finite");
    }
    return loss;
}

double cat_loss(std::span<const int> labels, const Box& projected, const ConceptSpace& space) {
    BoxGrad scratch(0);
    return cat_loss_grad(labels, projected, space, scratch, nullptr);
}

double cat_loss_grad(std::span<const int> labels, const Box& projected, const ConceptSpace& space,
                     BoxGrad& dbox, std::vector<BoxGrad>* concept_grads) {
    const auto cats = space.vocab.category_ids();
    if (cats.size() < 2) return 0.0;

    int true_cat = -1;
    for (const int y : labels) {
        if (space.vocab.concept_at(y).kind == ConceptKind::category) {
            true_cat = y;
            break;
        }
    }
    if (true_cat < 0) return 0.0;  // skipped, caller counts

    const double eps = space.config.prob_clamp_eps;
    const bool want_grad = dbox.min.size() == static_cast<std::size_t>(projected.dim());

    std::vector<double> q_raws(cats.size());
    std::vector<double> qs(cats.size());
    double denom = 0.0;
    double p_true = 0.0;
    for (std::size_t i = 0; i < cats.size(); ++i) {
        const auto [q_raw, q] = entail_term(space.boxes[static_cast<std::size_t>(cats[i])], projected, space);
        q_raws[i] = q_raw;
        qs[i] = q;
        denom += std::exp(q);
        if (cats[i] == true_cat) p_true = q;
    }
    const double loss = -p_true + std::log(denom);
    if (!std::isfinite(loss)) {
        throw std::runtime_error("cat_loss is not finite");
    }

    if (want_grad) {
        BoxGrad scratch(space.config.dim);
        for (std::size_t i = 0; i < cats.size(); ++i) {
            const double softmax_i = std::exp(qs[i]) / denom;
            const double dl_dq = softmax_i - (cats[i] == true_cat ? 1.0 : 0.0);
            const double coef = dl_dq * clamp_chain(q_raws[i], eps, dl_dq < 0.0);
            if (coef == 0.0) continue;
            const Box& cbox = space.boxes[static_cast<std::size_t>(cats[i])];
            BoxGrad& cgrad = concept_grads != nullptr
                                 ? (*concept_grads)[static_cast<std::size_t>(cats[i])]
                                 : scratch;
            add_d_log_entailment(cbox, projected, coef, cgrad, dbox);
        }
    }
    return loss;
}

// ---------------------------------------------------------------------------
// Prediction and calibration
// ---------------------------------------------------------------------------

double ThresholdTable::at(int concept_id) const {
    const auto it = by_concept.find(concept_id);
    if (it == by_concept.end()) {
        throw std::invalid_argument("ThresholdTable: no threshold for concept id " +
                                    std::to_string(concept_id));
    }
    return it->second;
}

std::vector<int> predict(const Box& projected, const ConceptSpace& space, PredictionRule rule,
                         const ThresholdTable* thresholds) {
    const double eps = space.config.prob_clamp_eps;
    std::vector<int> out;
    if (rule == PredictionRule::per_family_argmax) {
        for (int f = 0; f < space.vocab.family_count(); ++f) {
            int best = -1;
            double best_q = -1.0;
            for (const int y : space.vocab.family_members(f)) {
                const double q = entailment(space.boxes[static_cast<std::size_t>(y)], projected,
                                            space.extrema, eps);
                if (q > best_q) {  // ties keep the lowest id (members ascend)
                    best_q = q;
                    best = y;
                }
            }
            if (best >= 0) out.push_back(best);
        }
    } else {
        if (thresholds == nullptr) {
            throw std::invalid_argument("predict: threshold rule requires a ThresholdTable");
        }
        for (const int y : space.vocab.attribute_ids()) {
            const double q = entailment(space.boxes[static_cast<std::size_t>(y)], projected,
                                        space.extrema, eps);
            if (q >= thresholds->at(y)) out.push_back(y);
        }
        int best = -1;
        double best_q = -1.0;
        for (const int y : space.vocab.category_ids()) {
            const double q = entailment(space.boxes[static_cast<std::size_t>(y)], projected,
                                        space.extrema, eps);
            if (q > best_q) {
                best_q = q;
                best = y;
            }
        }
        if (best >= 0) out.push_back(best);
    }
    std::sort(out.begin(), out.end());
    return out;
}

namespace {

double f1_score(std::int64_t tp, std::int64_t fp, std::int64_t fn) {
    const std::int64_t denom = 2 * tp + fp + fn;
    return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

}  // namespace

ThresholdTable calibrate_thresholds(std::span<const AttributeScores> scores) {
    ThresholdTable table;
    for (const AttributeScores& attr : scores) {
        if (attr.scores.size() != attr.labels.size()) {
            throw std::invalid_argument("calibrate_thresholds: scores/labels length mismatch");
        }
        const bool any_positive =
            std::find(attr.labels.begin(), attr.labels.end(), std::uint8_t{1}) != attr.labels.end();
        if (!any_positive) {
            table.by_concept[attr.concept_id] = 0.5;
            continue;
        }
        double best_t = 0.05;
        double best_f1 = -1.0;
        for (int i = 1; i <= 19; ++i) {
            const double t = static_cast<double>(i) / 20.0;
            std::int64_t tp = 0, fp = 0, fn = 0;
            for (std::size_t k = 0; k < attr.scores.size(); ++k) {
                const bool pred = attr.scores[k] >= t;
                const bool truth = attr.labels[k] == 1;
                tp += (pred && truth) ? 1 : 0;
                fp += (pred && !truth) ? 1 : 0;
                fn += (!pred && truth) ? 1 : 0;
            }
            const double f1 = f1_score(tp, fp, fn);
            if (f1 > best_f1) {  // strict: ties keep the smallest threshold
                best_f1 = f1;
                best_t = t;
            }
        }
        table.by_concept[attr.concept_id] = best_t;
    }
    return table;
}

ThresholdTable calibrate_thresholds(std::span<const AnnotatedSample> validation,
                                    const ConceptSpace& space, const FeatureEncoder& encoder) {
    const auto attrs = space.vocab.attribute_ids();
    std::vector<AttributeScores> scores(attrs.size());
    for (std::size_t i = 0; i < attrs.size(); ++i) {
        scores[i].concept_id = attrs[i];
    }
    const double eps = space.config.prob_clamp_eps;
    for (const AnnotatedSample& s : validation) {
        const auto payload = encoder_payload(encoder, s);
        const Box box = encode(payload, encoder);
        for (std::size_t i = 0; i < attrs.size(); ++i) {
            const double q =
                entailment(space.boxes[static_cast<std::size_t>(attrs[i])], box, space.extrema, eps);
            scores[i].scores.push_back(q);
            const bool positive = std::find(s.labels.begin(), s.labels.end(), attrs[i]) != s.labels.end();
            scores[i].labels.push_back(positive ? 1 : 0);
        }
    }
    return calibrate_thresholds(scores);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

void ProjectionTrainConfig::validate() const {
    if (lr <= 0.0 || batch < 1 || epochs < 1 || pos_weight <= 0.0 || decay_floor <= 0.0) {
        throw std::invalid_argument("ProjectionTrainConfig: all fields must be positive");
    }
    if (warmup_frac > 1.0) {
        throw std::invalid_argument("ProjectionTrainConfig: warmup_frac must be <= 1");
    }
}

double scheduled_lr(double peak, std::int64_t step, std::int64_t total_steps,
                    std::int64_t warmup_steps, double decay_floor) {
    if (warmup_steps > 0 && step < warmup_steps) {
        return peak * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    }
    const std::int64_t decay_span = total_steps - warmup_steps;
    if (decay_span <= 0) {
        return peak;
    }
    const double progress = static_cast<double>(step - warmup_steps) / static_cast<double>(decay_span);
    return peak * (1.0 - (1.0 - decay_floor) * progress);
}

namespace {

std::vector<double> flatten_encoder(const FeatureEncoder& enc) {
    std::vector<double> out;
    out.reserve(enc.param_count());
    auto push = [&out](const std::vector<double>& v) { out.insert(out.end(), v.begin(), v.end()); };
    push(enc.enc_w.a);
    push(enc.enc_b);
    push(enc.min_w.a);
    push(enc.min_b);
    push(enc.delta_w.a);
    push(enc.delta_b);
    return out;
}

void unflatten_encoder(const std::vector<double>& flat, FeatureEncoder& enc) {
    std::size_t k = 0;
    auto pull = [&flat, &k](std::vector<double>& v) {
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(k),
                  flat.begin() + static_cast<std::ptrdiff_t>(k + v.size()), v.begin());
        k += v.size();
    };
    pull(enc.enc_w.a);
    pull(enc.enc_b);
    pull(enc.min_w.a);
    pull(enc.min_b);
    pull(enc.delta_w.a);
    pull(enc.delta_b);
}

std::vector<double> flatten_grad(const EncoderGrad& g) {
    std::vector<double> out;
    auto push = [&out](const std::vector<double>& v) { out.insert(out.end(), v.begin(), v.end()); };
    push(g.enc_w.a);
    push(g.enc_b);
    push(g.min_w.a);
    push(g.min_b);
    push(g.delta_w.a);
    push(g.delta_b);
    return out;
}

void pack_space(const ConceptSpace& space, std::vector<double>& params) {
    const int d = space.config.dim;
    params.resize(static_cast<std::size_t>(space.vocab.size()) * 2 * static_cast<std::size_t>(d));
    std::size_t k = 0;
    for (const Box& b : space.boxes) {
        for (int i = 0; i < d; ++i) params[k++] = b.min[static_cast<std::size_t>(i)];
        for (int i = 0; i < d; ++i) params[k++] = b.delta[static_cast<std::size_t>(i)];
    }
}

// unpack with the delta >= 0 projection
void unpack_space(const std::vector<double>& params, ConceptSpace& space) {
    const int d = space.config.dim;
    std::size_t k = 0;
    for (Box& b : space.boxes) {
        for (int i = 0; i < d; ++i) b.min[static_cast<std::size_t>(i)] = params[k++];
        for (int i = 0; i < d; ++i) b.delta[static_cast<std::size_t>(i)] = std::max(0.0, params[k++]);
    }
}

void flatten_space_grads(const std::vector<BoxGrad>& grads, int d, std::vector<double>& flat) {
    flat.resize(grads.size() * 2 * static_cast<std::size_t>(d));
    std::size_t k = 0;
    for (const BoxGrad& g : grads) {
        for (int i = 0; i < d; ++i) flat[k++] = g.min[static_cast<std::size_t>(i)];
        for (int i = 0; i < d; ++i) flat[k++] = g.delta[static_cast<std::size_t>(i)];
    }
}

}  // namespace

ProjectionEval evaluate_projection(std::span<const AnnotatedSample> samples, const ConceptSpace& space,
                                   const FeatureEncoder& encoder, PredictionRule rule,
                                   const ThresholdTable* thresholds) {
    ProjectionEval eval;
    eval.samples = static_cast<std::int64_t>(samples.size());
    std::int64_t family_total = 0, family_correct = 0;
    std::int64_t cat_total = 0, cat_correct = 0;
    std::int64_t tp = 0, fp = 0, fn = 0;
    const double eps = space.config.prob_clamp_eps;

    for (const AnnotatedSample& s : samples) {
        const auto payload = encoder_payload(encoder, s);
        const Box box = encode(payload, encoder);

        if (rule == PredictionRule::per_family_argmax || thresholds == nullptr) {
            const auto preds = predict(box, space, PredictionRule::per_family_argmax, nullptr);
            for (const int p : preds) {
                const int fam = space.vocab.concept_at(p).family;
                bool truth_in_family = false;
                bool correct = false;
                for (const int y : s.labels) {
                    if (space.vocab.concept_at(y).family == fam) {
                        truth_in_family = true;
                        correct = (y == p);
                        break;
                    }
                }
                if (truth_in_family) {
                    ++family_total;
                    family_correct += correct ? 1 : 0;
                }
            }
        }
        if (thresholds != nullptr) {
            for (const int y : space.vocab.attribute_ids()) {
                const double q =
                    entailment(space.boxes[static_cast<std::size_t>(y)], box, space.extrema, eps);
                const bool pred = q >= thresholds->at(y);
                const bool truth = std::find(s.labels.begin(), s.labels.end(), y) != s.labels.end();
                tp += (pred && truth) ? 1 : 0;
                fp += (pred && !truth) ? 1 : 0;
                fn += (!pred && truth) ? 1 : 0;
            }
        }
        if (!space.vocab.category_ids().empty() && has_category_label(s.labels, space.vocab)) {
            int best = -1;
            double best_q = -1.0;
            for (const int y : space.vocab.category_ids()) {
                const double q =
                    entailment(space.boxes[static_cast<std::size_t>(y)], box, space.extrema, eps);
                if (q > best_q) {
                    best_q = q;
                    best = y;
                }
            }
            ++cat_total;
            for (const int y : s.labels) {
                if (y == best) {
                    ++cat_correct;
                    break;
                }
            }
        }
    }

    eval.attr_accuracy = family_total > 0
                             ? static_cast<double>(family_correct) / static_cast<double>(family_total)
                             : 0.0;
    eval.cat_accuracy = cat_total > 0 ? static_cast<double>(cat_correct) / static_cast<double>(cat_total)
                                      : 0.0;
    eval.attr_f1 = f1_score(tp, fp, fn);
    return eval;
}

ProjectionMetrics train_projection(std::span<const AnnotatedSample> train, const ConceptSpace& space,
                                   FeatureEncoder& encoder, const ProjectionTrainConfig& cfg,
                                   std::span<const AnnotatedSample> eval_split,
                                   MetricsWriter* metrics) {
    cfg.validate();
    encoder.validate();
    if (train.empty()) {
        throw std::invalid_argument("train_projection: no samples");
    }

    std::vector<std::vector<double>> payloads;
    payloads.reserve(train.size());
    for (const AnnotatedSample& s : train) {
        payloads.push_back(encoder_payload(encoder, s));
    }

    const std::int64_t steps_per_epoch =
        static_cast<std::int64_t>((train.size() + static_cast<std::size_t>(cfg.batch) - 1) /
                                  static_cast<std::size_t>(cfg.batch));
    const std::int64_t total_steps = steps_per_epoch * cfg.epochs;
    const std::int64_t warmup_steps =
        cfg.warmup_frac < 0.0
            ? steps_per_epoch
            : static_cast<std::int64_t>(std::llround(cfg.warmup_frac * static_cast<double>(total_steps)));

    AdamW opt(encoder.param_count(), /*weight_decay=*/1e-2);
    std::vector<double> params = flatten_encoder(encoder);
    EncoderGrad grad(encoder);
    const bool with_categories = space.vocab.category_ids().size() >= 2;

    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng = Rng::substream(cfg.seed, "proj-batches");

    ProjectionMetrics result;
    std::int64_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
            grad.reset();
            double loss = 0.0;
            for (std::size_t k = start; k < end; ++k) {
                const std::size_t idx = order[k];
                const EncodeTrace trace = encode_trace(payloads[idx], encoder);
                BoxGrad dbox(encoder.out_dim);
                loss += attr_loss_grad(train[idx].labels, trace.box, space, cfg.pos_weight, dbox);
                if (with_categories) {
                    if (has_category_label(train[idx].labels, space.vocab)) {
                        loss += cat_loss_grad(train[idx].labels, trace.box, space, dbox);
                    } else {
                        ++result.skipped_category;
                    }
                }
                backprop_encoder(encoder, payloads[idx], trace, dbox, grad);
            }
            const double inv = 1.0 / static_cast<double>(end - start);
            loss *= inv;
            if (!std::isfinite(loss)) {
                throw std::runtime_error("projection training aborted: non-finite loss at step " +
                                         std::to_string(step));
            }
            std::vector<double> flat = flatten_grad(grad);
            for (double& g : flat) g *= inv;
            const double lr_now = scheduled_lr(cfg.lr, step, total_steps, warmup_steps, cfg.decay_floor);
            opt.step(params, flat, lr_now);
            unflatten_encoder(params, encoder);

            result.step_loss.push_back(loss);
            if (metrics != nullptr) {
                metrics->write({{"epoch", epoch}, {"step", step}, {"loss", loss}, {"lr", lr_now}});
            }
            ++step;
        }
        if (!eval_split.empty()) {
            const auto eval =
                evaluate_projection(eval_split, space, encoder, PredictionRule::per_family_argmax);
            result.epoch_attr_accuracy.push_back(eval.attr_accuracy);
            if (metrics != nullptr) {
                metrics->write({{"epoch", epoch}, {"attr_accuracy", eval.attr_accuracy}});
            }
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

AblationCurves ablation_run(std::span<const AnnotatedSample> train,
                            std::span<const AnnotatedSample> eval_split, const Vocabulary& vocab,
                            const GroundTruthStats& stats, const ConceptSpace& pretrained,
                            const AblationConfig& cfg, MetricsWriter* metrics) {
    cfg.proj.validate();
    if (train.empty() || eval_split.empty()) {
        throw std::invalid_argument("ablation_run: empty split");
    }

    // arm B negatives, drawn once per sample
    Rng neg_rng = Rng::substream(cfg.space_seed, "negatives");
    std::vector<std::vector<int>> augmented(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
        const auto negs = sample_negatives(train[i].labels, vocab, cfg.neg_policy, cfg.neg_k, neg_rng);
        augmented[i] = train[i].labels;
        augmented[i].insert(augmented[i].end(), negs.begin(), negs.end());
        std::sort(augmented[i].begin(), augmented[i].end());
    }

    const int feat_dim = static_cast<int>(train.front().vision.size());
    const std::int64_t steps_per_epoch =
        static_cast<std::int64_t>((train.size() + static_cast<std::size_t>(cfg.proj.batch) - 1) /
                                  static_cast<std::size_t>(cfg.proj.batch));
    const std::int64_t total_steps = steps_per_epoch * cfg.proj.epochs;
    const std::int64_t warmup_steps =
        cfg.proj.warmup_frac < 0.0 ? steps_per_epoch
                                   : static_cast<std::int64_t>(std::llround(
                                         cfg.proj.warmup_frac * static_cast<double>(total_steps)));

    AblationCurves curves;

    for (int arm = 0; arm < 2; ++arm) {
        const bool joint = arm == 1;
        Rng enc_rng = Rng::substream(cfg.proj.seed, "encoder-init");
        FeatureEncoder enc = FeatureEncoder::init(Modality::vision, feat_dim, 64, cfg.kspace.dim, enc_rng);

        ConceptSpace space;
        if (joint) {
            ConceptTrainConfig init_cfg;  // spec init ranges
            Rng space_rng = Rng::substream(cfg.space_seed, "init");
            space = init_space(vocab, cfg.kspace, init_cfg, space_rng);
        } else {
            space = pretrained;
        }

        AdamW enc_opt(enc.param_count(), 1e-2);
        std::vector<double> enc_params = flatten_encoder(enc);
        EncoderGrad enc_grad(enc);

        const std::size_t n_space_params =
            static_cast<std::size_t>(vocab.size()) * 2 * static_cast<std::size_t>(cfg.kspace.dim);
        AdamW space_opt(n_space_params, cfg.concept_weight_decay);
        std::vector<BoxGrad> space_grads(static_cast<std::size_t>(vocab.size()),
                                         BoxGrad(cfg.kspace.dim));

        std::vector<std::size_t> order(train.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng = Rng::substream(cfg.proj.seed, "proj-batches");

        std::vector<double>& curve = joint ? curves.arm_b_accuracy : curves.arm_a_accuracy;
        int& steps_to_target = joint ? curves.steps_to_target_b : curves.steps_to_target_a;

        std::int64_t step = 0;
        for (int epoch = 0; epoch < cfg.proj.epochs; ++epoch) {
            shuffle_rng.shuffle(order);
            for (std::size_t start = 0; start < order.size();
                 start += static_cast<std::size_t>(cfg.proj.batch)) {
                const std::size_t end =
                    std::min(order.size(), start + static_cast<std::size_t>(cfg.proj.batch));
                const double inv = 1.0 / static_cast<double>(end - start);

                enc_grad.reset();
                for (BoxGrad& g : space_grads) g.reset();

                double loss = 0.0;
                std::vector<std::vector<int>> batch_sets;
                for (std::size_t k = start; k < end; ++k) {
                    const std::size_t idx = order[k];
                    const EncodeTrace trace = encode_trace(train[idx].vision, enc);
                    BoxGrad dbox(cfg.kspace.dim);
                    loss += inv * attr_loss_grad(train[idx].labels, trace.box, space, cfg.proj.pos_weight,
                                                 dbox, joint ? &space_grads : nullptr);
                    // attr gradients enter with batch weight
                    for (double& g : dbox.min) g *= inv;
                    for (double& g : dbox.delta) g *= inv;
                    backprop_encoder(enc, train[idx].vision, trace, dbox, enc_grad);
                    if (joint) {
                        batch_sets.push_back(augmented[idx]);
                    }
                }
                if (joint) {
                    // scale the attr-side concept grads by the batch weight too
                    for (BoxGrad& g : space_grads) {
                        for (double& x : g.min) x *= inv;
                        for (double& x : g.delta) x *= inv;
                    }
                    loss += concept_loss(batch_sets, space, stats, PairOrdering::both, &space_grads,
                                         nullptr);
                }
                if (!std::isfinite(loss)) {
                    throw std::runtime_error("ablation arm aborted: non-finite loss");
                }

                const double lr_now =
                    scheduled_lr(cfg.proj.lr, step, total_steps, warmup_steps, cfg.proj.decay_floor);
                const std::vector<double> flat = flatten_grad(enc_grad);
                enc_opt.step(enc_params, flat, lr_now);
                unflatten_encoder(enc_params, enc);

                if (joint) {
                    std::vector<double> space_params;
                    std::vector<double> space_flat;
                    pack_space(space, space_params);
                    flatten_space_grads(space_grads, cfg.kspace.dim, space_flat);
                    space_opt.step(space_params, space_flat, cfg.concept_lr);
                    unpack_space(space_params, space);
                    space.refresh_extrema();
                }

                const auto eval =
                    evaluate_projection(eval_split, space, enc, PredictionRule::per_family_argmax);
                curve.push_back(eval.attr_accuracy);
                if (steps_to_target < 0 && eval.attr_accuracy >= cfg.target_accuracy) {
                    steps_to_target = static_cast<int>(step) + 1;
                }
                if (metrics != nullptr) {
                    metrics->write({{"step", step},
                                    {"arm", joint ? "joint" : "pretrained"},
                                    {"accuracy", eval.attr_accuracy}});
                }
                ++step;
            }
        }
    }
    return curves;
}

}  // namespace cbox
