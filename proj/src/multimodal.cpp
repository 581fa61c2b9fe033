#include "cbox/multimodal.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <thread>

#include "cbox/optim.hpp"

namespace cbox {

std::string to_string(PairProvenance provenance) {
    switch (provenance) {
        case PairProvenance::original: return "original";
        case PairProvenance::sentence_swap: return "sentence_swap";
        default: return "attribute_swap";
    }
}

std::string to_string(ItmSwapMode mode) {
    return mode == ItmSwapMode::sentence_swap ? "sentence_swap" : "attribute_swap";
}

ItmSwapMode itm_swap_mode_from_string(const std::string& s) {
    if (s == "sentence_swap") return ItmSwapMode::sentence_swap;
    if (s == "attribute_swap") return ItmSwapMode::attribute_swap;
    throw std::invalid_argument("unknown ITM swap mode: '" + s + "'");
}

GeneratorConfig config_from_header(const DatasetHeader& header) {
    GeneratorConfig cfg;
    cfg.feat_dim = header.dim_features;
    if (header.categories.empty()) {
        cfg.flavor = DatasetFlavor::exclusive_families;
        for (const auto& [name, values] : header.families) {
            cfg.families.push_back(FamilySpec{name, values});
        }
    } else {
        cfg.flavor = DatasetFlavor::multi_attribute;
        for (const auto& [name, values] : header.families) {
            for (const std::string& v : values) cfg.attributes.push_back(v);
        }
        cfg.categories = header.categories;
    }
    return cfg;
}

namespace {

// Object view of a sample's labels in the layout describe() expects:
// exclusive mode one value per family in config order, multi-attribute mode
// attributes first and the category last.
SceneObject object_from_labels(std::span<const int> labels, const Vocabulary& vocab,
                               const GeneratorConfig& gen_config) {
    SceneObject obj;
    if (gen_config.flavor == DatasetFlavor::exclusive_families) {
        for (const FamilySpec& fam : gen_config.families) {
            const auto family = vocab.find_family(fam.name);
            if (!family) {
                throw std::invalid_argument("dataset lacks family '" + fam.name + "'");
            }
            for (const int y : labels) {
                if (vocab.concept_at(y).family == *family) {
                    obj.labels.push_back(vocab.concept_at(y).name);
                    break;
                }
            }
        }
    } else {
        std::string category;
        for (const int y : labels) {
            const Concept& c = vocab.concept_at(y);
            if (c.kind == ConceptKind::category) {
                category = c.name;
            } else {
                obj.labels.push_back(c.name);
            }
        }
        obj.labels.push_back(category);
    }
    return obj;
}

}  // namespace

std::vector<PairedSample> make_itm_pairs(std::span<const AnnotatedSample> samples, ItmSwapMode mode,
                                         double fraction, Rng& rng, const Vocabulary& vocab,
                                         const GeneratorConfig& gen_config) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) {
        throw std::invalid_argument("make_itm_pairs: fraction outside [0, 1]");
    }
    std::vector<PairedSample> out;
    out.reserve(samples.size());
    for (const AnnotatedSample& s : samples) {
        PairedSample pair;
        pair.vision = s.vision;
        pair.text = s.text;
        pair.labels = s.labels;
        out.push_back(std::move(pair));
    }

    const std::size_t n = out.size();
    const std::size_t k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    if (k == 0) {
        return out;
    }

    // swap subset, then receivers in shuffled order
    std::vector<int> subset = rng.sample_without_replacement(static_cast<int>(n), static_cast<int>(k));

    if (mode == ItmSwapMode::sentence_swap) {
        if (k < 2) {
            return out;  // no derangement of one element
        }
        // donor of receiver i is receiver i+1 in cycle order: never a no-op
        std::vector<int> donors(subset.size());
        for (std::size_t i = 0; i < subset.size(); ++i) {
            donors[i] = subset[(i + 1) % subset.size()];
        }
        // fix positions whose donor carries an identical label set
        auto same_labels = [&](int a, int b) {
            return samples[static_cast<std::size_t>(a)].labels ==
                   samples[static_cast<std::size_t>(b)].labels;
        };
        for (std::size_t i = 0; i < subset.size(); ++i) {
            if (!same_labels(subset[i], donors[i])) continue;
            bool fixed = false;
            for (int attempt = 0; attempt < 64 && !fixed; ++attempt) {
                const std::size_t j =
                    static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(subset.size()) - 1));
                if (j == i) continue;
                // exchange donors if neither position self-assigns or repeats labels
                if (donors[j] != subset[i] && donors[i] != subset[j] &&
                    !same_labels(subset[i], donors[j]) && !same_labels(subset[j], donors[i])) {
                    std::swap(donors[i], donors[j]);
                    fixed = true;
                }
            }
            // unresolved: keep the original sentence (stays a positive pair)
            if (!fixed) donors[i] = subset[i];
        }
        for (std::size_t i = 0; i < subset.size(); ++i) {
            if (donors[i] == subset[i]) continue;
            PairedSample& pair = out[static_cast<std::size_t>(subset[i])];
            pair.text = samples[static_cast<std::size_t>(donors[i])].text;
            pair.positive = false;
            pair.provenance = PairProvenance::sentence_swap;
        }
        return out;
    }

    // attribute swap
    for (const int idx : subset) {
        PairedSample& pair = out[static_cast<std::size_t>(idx)];
        SceneObject obj = object_from_labels(pair.labels, vocab, gen_config);

        // families applicable to this object with at least two values
        std::vector<std::pair<int, int>> slots;  // (label slot in obj, family id)
        if (gen_config.flavor == DatasetFlavor::exclusive_families) {
            for (std::size_t f = 0; f < gen_config.families.size(); ++f) {
                if (gen_config.families[f].values.size() >= 2) {
                    slots.emplace_back(static_cast<int>(f), static_cast<int>(f));
                }
            }
        }
        bool swapped = false;
        for (int attempt = 0; attempt < 16 && !swapped && !slots.empty(); ++attempt) {
            const auto [slot, fam_idx] =
                slots[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(slots.size()) - 1))];
            const auto& values = gen_config.families[static_cast<std::size_t>(fam_idx)].values;
            const std::string current = obj.labels[static_cast<std::size_t>(slot)];
            std::vector<std::string> alternatives;
            for (const std::string& v : values) {
                if (v != current) alternatives.push_back(v);
            }
            if (alternatives.empty()) continue;  // single-value family, resample another
            const std::string replacement = alternatives[static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(alternatives.size()) - 1))];
            obj.labels[static_cast<std::size_t>(slot)] = replacement;
            pair.text = describe(obj, gen_config, rng);
            pair.positive = false;
            pair.provenance = PairProvenance::attribute_swap;
            swapped = true;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Joint loss and scoring
// ---------------------------------------------------------------------------

double joint_loss(const Box& a, const Box& b, const GlobalExtrema& extrema, double eps) {
    const double pab = entailment(a, b, extrema, eps);
    const double pba = entailment(b, a, extrema, eps);
    return 1.0 - 0.5 * (pab + pba);
}

double joint_loss_log(const Box& a, const Box& b, const GlobalExtrema& extrema, double eps) {
    const double pab = entailment(a, b, extrema, eps);
    const double pba = entailment(b, a, extrema, eps);
    return -0.5 * (std::log(pab) + std::log(pba));
}

void add_d_joint_loss(const Box& a, const Box& b, const GlobalExtrema& extrema, double eps, double w,
                      bool log_form, BoxGrad& grad_a, BoxGrad& grad_b) {
    // both directions want the probability up; below the ceiling the chain is
    // q_raw (rescued at the floor), above it the term is flat
    auto direction = [&](const Box& x, const Box& y, BoxGrad& gx, BoxGrad& gy) {
        const double lnq = log_entailment(x, y, extrema);
        const double q_raw = std::exp(lnq);
        if (q_raw >= 1.0 - eps) return;
        const double q = clamp_prob(q_raw, eps);
        const double chain = q_raw < eps ? eps : q_raw;
        // d loss / d P: -(1/2) for the linear form, -(1/2P) for the log form
        const double dl_dp = log_form ? -0.5 / q : -0.5;
        add_d_log_entailment(x, y, w * dl_dp * chain, gx, gy);
    };
    direction(a, b, grad_a, grad_b);
    direction(b, a, grad_b, grad_a);
}

double itm_score(std::span<const double> vision_payload, const std::string& text,
                 const FeatureEncoder& vision_enc, const FeatureEncoder& text_enc,
                 const ConceptSpace& space) {
    const Box vbox = encode(vision_payload, vision_enc);
    TokenTable table;
    table.tokens = text_enc.tokens;
    const Box tbox = encode(table.counts(text), text_enc);
    const double eps = space.config.prob_clamp_eps;
    return 0.5 * (entailment(vbox, tbox, space.extrema, eps) +
                  entailment(tbox, vbox, space.extrema, eps));
}

// ---------------------------------------------------------------------------
// Joint training
// ---------------------------------------------------------------------------

void JointTrainConfig::validate() const {
    if (lr <= 0.0 || batch < 1 || steps < 1 || pos_weight <= 0.0) {
        throw std::invalid_argument("JointTrainConfig: lr, batch, steps, pos_weight must be positive");
    }
    if (beta < 0.0) {
        throw std::invalid_argument("JointTrainConfig: beta must be >= 0");
    }
}

namespace {

struct EncoderFlattener {
    static std::vector<double> flatten(const FeatureEncoder& enc) {
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
    static void unflatten(const std::vector<double>& flat, FeatureEncoder& enc) {
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
    static std::vector<double> flatten_grad(const EncoderGrad& g) {
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
};

void pack_space_params(const ConceptSpace& space, std::vector<double>& params) {
    const int d = space.config.dim;
    params.resize(static_cast<std::size_t>(space.vocab.size()) * 2 * static_cast<std::size_t>(d));
    std::size_t k = 0;
    for (const Box& b : space.boxes) {
        for (int i = 0; i < d; ++i) params[k++] = b.min[static_cast<std::size_t>(i)];
        for (int i = 0; i < d; ++i) params[k++] = b.delta[static_cast<std::size_t>(i)];
    }
}

void unpack_space_params(const std::vector<double>& params, ConceptSpace& space) {
    const int d = space.config.dim;
    std::size_t k = 0;
    for (Box& b : space.boxes) {
        for (int i = 0; i < d; ++i) b.min[static_cast<std::size_t>(i)] = params[k++];
        for (int i = 0; i < d; ++i) b.delta[static_cast<std::size_t>(i)] = std::max(0.0, params[k++]);
    }
}

}  // namespace

JointTrainResult joint_train(std::span<const AnnotatedSample> paired, FeatureEncoder& vision_enc,
                             FeatureEncoder& text_enc, ConceptSpace& space,
                             const GroundTruthStats& stats, const JointTrainConfig& cfg,
                             std::span<const AnnotatedSample> eval_positives, MetricsWriter* metrics) {
    cfg.validate();
    if (paired.empty()) {
        throw std::invalid_argument("joint_train: no paired samples");
    }
    const double eps = space.config.prob_clamp_eps;

    std::vector<std::vector<double>> text_payloads;
    text_payloads.reserve(paired.size());
    {
        TokenTable table;
        table.tokens = text_enc.tokens;
        for (const AnnotatedSample& s : paired) {
            text_payloads.push_back(table.counts(s.text));
        }
    }

    // negatives for the concept KL term, drawn once per sample
    std::vector<std::vector<int>> augmented(paired.size());
    if (cfg.beta > 0.0) {
        Rng neg_rng = Rng::substream(cfg.seed, "negatives");
        for (std::size_t i = 0; i < paired.size(); ++i) {
            const auto negs =
                sample_negatives(paired[i].labels, space.vocab, cfg.neg_policy, cfg.neg_k, neg_rng);
            augmented[i] = paired[i].labels;
            augmented[i].insert(augmented[i].end(), negs.begin(), negs.end());
            std::sort(augmented[i].begin(), augmented[i].end());
        }
    }

    AdamW v_opt(vision_enc.param_count(), 1e-2);
    AdamW t_opt(text_enc.param_count(), 1e-2);
    std::vector<double> v_params = EncoderFlattener::flatten(vision_enc);
    std::vector<double> t_params = EncoderFlattener::flatten(text_enc);
    EncoderGrad v_grad(vision_enc);
    EncoderGrad t_grad(text_enc);

    const std::size_t n_space_params =
        static_cast<std::size_t>(space.vocab.size()) * 2 * static_cast<std::size_t>(space.config.dim);
    AdamW space_opt(n_space_params, 1e-2);
    std::vector<BoxGrad> space_grads(static_cast<std::size_t>(space.vocab.size()),
                                     BoxGrad(space.config.dim));

    Rng batch_rng = Rng::substream(cfg.seed, "joint-batches");
    JointTrainResult result;

    auto eval_curve = [&]() {
        if (eval_positives.empty()) return;
        double mean = 0.0;
        for (const AnnotatedSample& s : eval_positives) {
            mean += itm_score(s.vision, s.text, vision_enc, text_enc, space);
        }
        result.cross_entailment_curve.push_back(mean / static_cast<double>(eval_positives.size()));
    };

    for (int step = 0; step < cfg.steps; ++step) {
        space.refresh_extrema();
        v_grad.reset();
        t_grad.reset();
        const bool update_space = cfg.beta > 0.0;
        if (update_space) {
            for (BoxGrad& g : space_grads) g.reset();
        }

        double loss = 0.0;
        std::vector<std::vector<int>> batch_sets;
        const double inv = 1.0 / static_cast<double>(cfg.batch);
        for (int k = 0; k < cfg.batch; ++k) {
            const std::size_t idx =
                static_cast<std::size_t>(batch_rng.uniform_int(0, static_cast<std::int64_t>(paired.size()) - 1));
            const AnnotatedSample& s = paired[idx];

            const EncodeTrace v_trace = encode_trace(s.vision, vision_enc);
            const EncodeTrace t_trace = encode_trace(text_payloads[idx], text_enc);
            BoxGrad v_dbox(space.config.dim);
            BoxGrad t_dbox(space.config.dim);

            loss += inv * joint_loss(v_trace.box, t_trace.box, space.extrema, eps);
            add_d_joint_loss(v_trace.box, t_trace.box, space.extrema, eps, inv, cfg.log_form, v_dbox,
                             t_dbox);

            std::vector<BoxGrad>* cgrads = update_space ? &space_grads : nullptr;
            BoxGrad va(space.config.dim), ta(space.config.dim);
            loss += inv * attr_loss_grad(s.labels, v_trace.box, space, cfg.pos_weight, va, cgrads);
            loss += inv * cat_loss_grad(s.labels, v_trace.box, space, va, cgrads);
            loss += inv * attr_loss_grad(s.labels, t_trace.box, space, cfg.pos_weight, ta, cgrads);
            loss += inv * cat_loss_grad(s.labels, t_trace.box, space, ta, cgrads);
            for (int i = 0; i < space.config.dim; ++i) {
                v_dbox.min[static_cast<std::size_t>(i)] += inv * va.min[static_cast<std::size_t>(i)];
                v_dbox.delta[static_cast<std::size_t>(i)] += inv * va.delta[static_cast<std::size_t>(i)];
                t_dbox.min[static_cast<std::size_t>(i)] += inv * ta.min[static_cast<std::size_t>(i)];
                t_dbox.delta[static_cast<std::size_t>(i)] += inv * ta.delta[static_cast<std::size_t>(i)];
            }

            backprop_encoder(vision_enc, s.vision, v_trace, v_dbox, v_grad);
            backprop_encoder(text_enc, text_payloads[idx], t_trace, t_dbox, t_grad);
            if (update_space) {
                batch_sets.push_back(augmented[idx]);
            }
        }
        if (update_space) {
            // the projection losses' concept-side grads entered unweighted;
            // apply the batch mean before the KL term adds its beta-scaled own
            for (BoxGrad& g : space_grads) {
                for (double& x : g.min) x *= inv;
                for (double& x : g.delta) x *= inv;
            }
            std::vector<BoxGrad> kl_grads(space_grads.size(), BoxGrad(space.config.dim));
            const double kl = concept_loss(batch_sets, space, stats, PairOrdering::both, &kl_grads,
                                           nullptr);
            loss += cfg.beta * kl;
            for (std::size_t c = 0; c < space_grads.size(); ++c) {
                for (int i = 0; i < space.config.dim; ++i) {
                    space_grads[c].min[static_cast<std::size_t>(i)] +=
                        cfg.beta * kl_grads[c].min[static_cast<std::size_t>(i)];
                    space_grads[c].delta[static_cast<std::size_t>(i)] +=
                        cfg.beta * kl_grads[c].delta[static_cast<std::size_t>(i)];
                }
            }
        }
        if (!std::isfinite(loss)) {
            throw std::runtime_error("joint training aborted: non-finite loss at step " +
                                     std::to_string(step));
        }

        std::vector<double> v_flat = EncoderFlattener::flatten_grad(v_grad);
        std::vector<double> t_flat = EncoderFlattener::flatten_grad(t_grad);
        v_opt.step(v_params, v_flat, cfg.lr);
        t_opt.step(t_params, t_flat, cfg.lr);
        EncoderFlattener::unflatten(v_params, vision_enc);
        EncoderFlattener::unflatten(t_params, text_enc);

        if (update_space) {
            std::vector<double> sp;
            std::vector<double> sg;
            pack_space_params(space, sp);
            sg.resize(sp.size());
            std::size_t k = 0;
            for (const BoxGrad& g : space_grads) {
                for (int i = 0; i < space.config.dim; ++i) sg[k++] = g.min[static_cast<std::size_t>(i)];
                for (int i = 0; i < space.config.dim; ++i) sg[k++] = g.delta[static_cast<std::size_t>(i)];
            }
            space_opt.step(sp, sg, cfg.lr);
            unpack_space_params(sp, space);
        }

        result.step_loss.push_back(loss);
        eval_curve();
        if (metrics != nullptr) {
            nlohmann::json rec{{"step", step}, {"loss", loss}};
            if (!result.cross_entailment_curve.empty()) {
                rec["mean_cross_entailment"] = result.cross_entailment_curve.back();
            }
            metrics->write(rec);
        }
    }
    space.refresh_extrema();
    return result;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

ItmReport evaluate_itm(std::span<const PairedSample> pairs, const FeatureEncoder& vision_enc,
                       const FeatureEncoder& text_enc, const ConceptSpace& space,
                       const std::string& mode_name, double threshold, int threads) {
    ItmReport report;
    report.mode = mode_name;
    report.threshold = threshold;

    std::vector<double> scores(pairs.size(), 0.0);
    const int n_threads = std::max(1, threads);
    if (n_threads == 1) {
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            scores[i] = itm_score(pairs[i].vision, pairs[i].text, vision_enc, text_enc, space);
        }
    } else {
        std::vector<std::thread> workers;
        std::size_t chunk = (pairs.size() + static_cast<std::size_t>(n_threads) - 1) /
                            static_cast<std::size_t>(n_threads);
        for (int t = 0; t < n_threads; ++t) {
            const std::size_t lo = static_cast<std::size_t>(t) * chunk;
            const std::size_t hi = std::min(pairs.size(), lo + chunk);
            if (lo >= hi) break;
            workers.emplace_back([&, lo, hi]() {
                for (std::size_t i = lo; i < hi; ++i) {
                    scores[i] = itm_score(pairs[i].vision, pairs[i].text, vision_enc, text_enc, space);
                }
            });
        }
        for (std::thread& w : workers) w.join();
    }

    std::int64_t correct = 0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const bool predicted_positive = scores[i] >= threshold;
        if (pairs[i].positive) {
            ++report.n_pos;
        } else {
            ++report.n_neg;
        }
        correct += (predicted_positive == pairs[i].positive) ? 1 : 0;
    }
    report.accuracy = pairs.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(pairs.size());
    return report;
}

}  // namespace cbox
