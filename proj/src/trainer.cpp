#include "cbox/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <unordered_map>

#include "cbox/optim.hpp"

namespace cbox {

std::string to_string(PairOrdering ordering) {
    return ordering == PairOrdering::both ? "both" : "canonical";
}

PairOrdering pair_ordering_from_string(const std::string& s) {
    if (s == "both") return PairOrdering::both;
    if (s == "canonical") return PairOrdering::canonical;
    throw std::invalid_argument("unknown pair ordering: '" + s + "'");
}

void ConceptTrainConfig::validate() const {
    if (lr <= 0.0) throw std::invalid_argument("ConceptTrainConfig: lr must be > 0");
    if (batch < 1) throw std::invalid_argument("ConceptTrainConfig: batch must be >= 1");
    if (epochs < 1) throw std::invalid_argument("ConceptTrainConfig: epochs must be >= 1");
    if (weight_decay < 0.0) throw std::invalid_argument("ConceptTrainConfig: weight_decay must be >= 0");
    if (init_delta_lo < 0.0 || init_delta_hi < init_delta_lo) {
        throw std::invalid_argument("ConceptTrainConfig: bad init delta range");
    }
    if (init_min_hi < init_min_lo) {
        throw std::invalid_argument("ConceptTrainConfig: bad init min range");
    }
    if (neg_k < 0) throw std::invalid_argument("ConceptTrainConfig: neg_k must be >= 0");
}

ConceptSpace init_space(const Vocabulary& vocab, const KnowledgeSpaceConfig& kcfg,
                        const ConceptTrainConfig& cfg, Rng& rng) {
    kcfg.validate();
    cfg.validate();
    ConceptSpace space;
    space.vocab = vocab;
    space.config = kcfg;
    space.boxes.reserve(static_cast<std::size_t>(vocab.size()));
    const int d = kcfg.dim;
    for (int c = 0; c < vocab.size(); ++c) {
        std::vector<double> mn(static_cast<std::size_t>(d));
        std::vector<double> dl(static_cast<std::size_t>(d));
        for (int i = 0; i < d; ++i) {
            mn[static_cast<std::size_t>(i)] = rng.uniform(cfg.init_min_lo, cfg.init_min_hi);
            dl[static_cast<std::size_t>(i)] = rng.uniform(cfg.init_delta_lo, cfg.init_delta_hi);
        }
        space.boxes.emplace_back(std::move(mn), std::move(dl));
    }
    space.refresh_extrema();
    return space;
}

double kl_pair_loss(double p_target, double q_pred, double eps) {
    const double p = clamp_prob(p_target, eps);
    const double q = q_pred;
    const double value = p * std::log(p / q) + (1.0 - p) * std::log((1.0 - p) / (1.0 - q));
    // rounding can leave a value a few ulp below zero near p == q
    return std::max(0.0, value);
}

namespace {

// Ordered entailment term: clamped loss value plus gradient accumulation.
// Below the lower clamp the unclamped-KL subgradient is used, so pairs whose
// prediction underflows the floor keep a restoring gradient (the KL in log
// space needs no lower clamp); above the upper clamp the gradient is zero.
struct PairEvaluator {
    const ConceptSpace& space;
    std::vector<BoxGrad>* grads;

    double eval(int y1, int y2, double p_target, double weight) const {
        const double eps = space.config.prob_clamp_eps;
        const Box& a = space.boxes[static_cast<std::size_t>(y1)];
        const Box& b = space.boxes[static_cast<std::size_t>(y2)];
        const double lnq = log_entailment(a, b, space.extrema);
        const double q_raw = std::exp(lnq);
        const double q = clamp_prob(q_raw, eps);
        const double term = kl_pair_loss(p_target, q, eps);
        if (!std::isfinite(term)) {
            throw std::runtime_error("concept loss is not finite for pair (" +
                                     space.vocab.concept_at(y1).name + " | " +
                                     space.vocab.concept_at(y2).name + ")");
        }
        if (grads != nullptr && q_raw < 1.0 - eps) {
            const double p = clamp_prob(p_target, eps);
            // d kl / d lnq via the unclamped probability
            const double coef = weight * (-p + (1.0 - p) * q_raw / (1.0 - q_raw));
            add_d_log_entailment(a, b, coef, (*grads)[static_cast<std::size_t>(y1)],
                                 (*grads)[static_cast<std::size_t>(y2)]);
        }
        return weight * term;
    }
};

// Deterministic first-seen-order aggregation of weighted ordered pairs, so
// identical terms across a batch are evaluated once.
class WeightedPairSet {
  public:
    void add(int y1, int y2, double weight) {
        const std::uint64_t k = (static_cast<std::uint64_t>(static_cast<std::uint32_t>(y1)) << 32) |
                                static_cast<std::uint32_t>(y2);
        auto [it, inserted] = index_.try_emplace(k, entries_.size());
        if (inserted) {
            entries_.push_back(Entry{y1, y2, weight});
        } else {
            entries_[it->second].weight += weight;
        }
    }

    struct Entry {
        int y1;
        int y2;
        double weight;
    };
    const std::vector<Entry>& entries() const { return entries_; }

  private:
    std::unordered_map<std::uint64_t, std::size_t> index_;
    std::vector<Entry> entries_;
};

}  // namespace

double concept_loss(std::span<const std::vector<int>> label_sets, const ConceptSpace& space,
                    const GroundTruthStats& stats, PairOrdering ordering,
                    std::vector<BoxGrad>* grads, std::int64_t* skipped_pairs) {
    if (label_sets.empty()) {
        return 0.0;
    }
    const double inv_batch = 1.0 / static_cast<double>(label_sets.size());

    WeightedPairSet pairs;
    std::int64_t skipped = 0;
    for (const std::vector<int>& labels : label_sets) {
        const std::size_t n = labels.size();
        const std::size_t n_pairs = n * (n - 1) / 2;
        if (n_pairs == 0) continue;
        const double w = inv_batch / (2.0 * static_cast<double>(n_pairs));
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                const int lo = std::min(labels[i], labels[j]);
                const int hi = std::max(labels[i], labels[j]);
                // canonical ordering: the lower id is conditioned on the higher
                if (stats.can_condition_on(hi)) {
                    pairs.add(lo, hi, w);
                } else {
                    ++skipped;
                }
                if (ordering == PairOrdering::both) {
                    if (stats.can_condition_on(lo)) {
                        pairs.add(hi, lo, w);
                    } else {
                        ++skipped;
                    }
                }
            }
        }
    }
    if (skipped_pairs != nullptr) {
        *skipped_pairs += skipped;
    }

    const PairEvaluator evaluator{space, grads};
    double loss = 0.0;
    for (const auto& e : pairs.entries()) {
        loss += evaluator.eval(e.y1, e.y2, stats.cond(e.y1, e.y2), e.weight);
    }
    return loss;
}

double pair_table_loss(std::span<const PairTarget> entries, const ConceptSpace& space,
                       std::vector<BoxGrad>* grads) {
    if (entries.empty()) {
        return 0.0;
    }
    const PairEvaluator evaluator{space, grads};
    const double w = 1.0 / static_cast<double>(entries.size());
    double loss = 0.0;
    for (const PairTarget& e : entries) {
        loss += evaluator.eval(e.y1, e.y2, e.p, w);
    }
    return loss;
}

namespace {

void pack_params(const ConceptSpace& space, std::vector<double>& params) {
    const int d = space.config.dim;
    params.resize(static_cast<std::size_t>(space.vocab.size()) * 2 * static_cast<std::size_t>(d));
    std::size_t k = 0;
    for (const Box& b : space.boxes) {
        for (int i = 0; i < d; ++i) params[k++] = b.min[static_cast<std::size_t>(i)];
        for (int i = 0; i < d; ++i) params[k++] = b.delta[static_cast<std::size_t>(i)];
    }
}

// Unpack with the delta >= 0 projection applied.
void unpack_params(const std::vector<double>& params, ConceptSpace& space) {
    const int d = space.config.dim;
    std::size_t k = 0;
    for (Box& b : space.boxes) {
        for (int i = 0; i < d; ++i) b.min[static_cast<std::size_t>(i)] = params[k++];
        for (int i = 0; i < d; ++i) b.delta[static_cast<std::size_t>(i)] = std::max(0.0, params[k++]);
    }
}

void flatten_grads(const std::vector<BoxGrad>& grads, int d, std::vector<double>& flat) {
    flat.resize(grads.size() * 2 * static_cast<std::size_t>(d));
    std::size_t k = 0;
    for (const BoxGrad& g : grads) {
        for (int i = 0; i < d; ++i) flat[k++] = g.min[static_cast<std::size_t>(i)];
        for (int i = 0; i < d; ++i) flat[k++] = g.delta[static_cast<std::size_t>(i)];
    }
}

// Shared AdamW loop over an abstract batch objective.
struct BatchObjective {
    std::function<double(std::span<const std::size_t>, ConceptSpace&, std::vector<BoxGrad>*)> eval;
    std::size_t count = 0;
};

struct EvalTargets {
    std::vector<PairTarget> targets;  // deduplicated ordered pairs with targets
};

void report_metrics(const ConceptSpace& space, const EvalTargets& eval, FitReport& report, bool baseline) {
    double dkl = 0.0;
    double max_err = 0.0;
    const double eps = space.config.prob_clamp_eps;
    for (const PairTarget& t : eval.targets) {
        const double q = space.entail(t.y1, t.y2);
        dkl += kl_pair_loss(t.p, q, eps);
        max_err = std::max(max_err, std::fabs(q - t.p));
    }
    if (!eval.targets.empty()) {
        dkl /= static_cast<double>(eval.targets.size());
    }
    if (baseline) {
        report.baseline_dkl = dkl;
    } else {
        report.final_dkl = dkl;
        report.max_abs_error = max_err;
    }
}

FitResult run_fit(ConceptSpace space, const ConceptTrainConfig& cfg, const BatchObjective& objective,
                  const EvalTargets& eval, MetricsWriter* metrics) {
    const auto t0 = std::chrono::steady_clock::now();
    FitResult result{std::move(space), FitReport{}};
    ConceptSpace& sp = result.space;
    report_metrics(sp, eval, result.report, /*baseline=*/true);

    const std::size_t n_params = static_cast<std::size_t>(sp.vocab.size()) * 2 *
                                 static_cast<std::size_t>(sp.config.dim);
    AdamW opt(n_params, cfg.weight_decay);
    std::vector<double> params;
    std::vector<double> flat_grads;
    std::vector<BoxGrad> grads(static_cast<std::size_t>(sp.vocab.size()), BoxGrad(sp.config.dim));

    std::vector<std::size_t> order(objective.count);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng = Rng::substream(cfg.seed, "batches");

    std::int64_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
            const std::span<const std::size_t> batch(order.data() + start, end - start);

            sp.refresh_extrema();
            for (BoxGrad& g : grads) g.reset();
            const double loss = objective.eval(batch, sp, &grads);
            if (!std::isfinite(loss)) {
                throw std::runtime_error("concept-space fit aborted: non-finite batch loss at step " +
                                         std::to_string(step));
            }

            pack_params(sp, params);
            flatten_grads(grads, sp.config.dim, flat_grads);
            opt.step(params, flat_grads, cfg.lr);
            unpack_params(params, sp);

            epoch_loss += loss;
            ++batches;
            if (metrics != nullptr) {
                metrics->write({{"epoch", epoch}, {"step", step}, {"loss", loss}});
            }
            ++step;
        }
        result.report.epoch_mean_loss.push_back(batches > 0 ? epoch_loss / static_cast<double>(batches)
                                                            : 0.0);
    }

    sp.refresh_extrema();
    report_metrics(sp, eval, result.report, /*baseline=*/false);
    result.report.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

}  // namespace

FitResult fit_concept_space(std::span<const AnnotatedSample> samples, const Vocabulary& vocab,
                            const GroundTruthStats& stats, const KnowledgeSpaceConfig& kcfg,
                            const ConceptTrainConfig& cfg, MetricsWriter* metrics) {
    cfg.validate();
    if (samples.empty()) {
        throw std::invalid_argument("fit_concept_space: no samples");
    }

    Rng init_rng = Rng::substream(cfg.seed, "init");
    ConceptSpace space = init_space(vocab, kcfg, cfg, init_rng);

    // negatives drawn once per sample, before training
    Rng neg_rng = Rng::substream(cfg.seed, "negatives");
    std::vector<std::vector<int>> augmented(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto negs = sample_negatives(samples[i].labels, vocab, cfg.neg_policy, cfg.neg_k, neg_rng);
        augmented[i] = samples[i].labels;
        augmented[i].insert(augmented[i].end(), negs.begin(), negs.end());
        std::sort(augmented[i].begin(), augmented[i].end());
    }

    // every distinct ordered pair the objective will ever see
    EvalTargets eval;
    {
        WeightedPairSet seen;
        for (const auto& labels : augmented) {
            for (std::size_t i = 0; i < labels.size(); ++i) {
                for (std::size_t j = i + 1; j < labels.size(); ++j) {
                    const int lo = std::min(labels[i], labels[j]);
                    const int hi = std::max(labels[i], labels[j]);
                    if (stats.can_condition_on(hi)) seen.add(lo, hi, 0.0);
                    if (cfg.ordering == PairOrdering::both && stats.can_condition_on(lo)) {
                        seen.add(hi, lo, 0.0);
                    }
                }
            }
        }
        for (const auto& e : seen.entries()) {
            eval.targets.push_back(PairTarget{e.y1, e.y2, stats.cond(e.y1, e.y2)});
        }
    }

    FitReport pre;
    BatchObjective objective;
    objective.count = samples.size();
    std::int64_t* skipped = &pre.skipped_pairs;  // accumulated across batches
    objective.eval = [&augmented, &stats, &cfg, skipped](std::span<const std::size_t> batch,
                                                         ConceptSpace& sp, std::vector<BoxGrad>* grads) {
        std::vector<std::vector<int>> sets;
        sets.reserve(batch.size());
        for (const std::size_t idx : batch) {
            sets.push_back(augmented[idx]);
        }
        return concept_loss(sets, sp, stats, cfg.ordering, grads, skipped);
    };

    FitResult result = run_fit(std::move(space), cfg, objective, eval, metrics);
    result.report.skipped_pairs = pre.skipped_pairs;
    return result;
}

FitResult fit_concept_space(const PairTable& table, const Vocabulary& vocab,
                            const KnowledgeSpaceConfig& kcfg, const ConceptTrainConfig& cfg,
                            MetricsWriter* metrics) {
    cfg.validate();
    if (table.entries.empty()) {
        throw std::invalid_argument("fit_concept_space: empty pair table");
    }

    Rng init_rng = Rng::substream(cfg.seed, "init");
    ConceptSpace space = init_space(vocab, kcfg, cfg, init_rng);

    EvalTargets eval;
    {
        WeightedPairSet seen;
        std::vector<double> ps;
        for (const PairTarget& t : table.entries) {
            seen.add(t.y1, t.y2, 0.0);
        }
        // keep the first target for duplicated ordered pairs
        std::unordered_map<std::uint64_t, double> first;
        for (const PairTarget& t : table.entries) {
            const std::uint64_t k = (static_cast<std::uint64_t>(static_cast<std::uint32_t>(t.y1)) << 32) |
                                    static_cast<std::uint32_t>(t.y2);
            first.try_emplace(k, t.p);
        }
        for (const auto& e : seen.entries()) {
            const std::uint64_t k = (static_cast<std::uint64_t>(static_cast<std::uint32_t>(e.y1)) << 32) |
                                    static_cast<std::uint32_t>(e.y2);
            eval.targets.push_back(PairTarget{e.y1, e.y2, first.at(k)});
        }
    }

    BatchObjective objective;
    objective.count = table.entries.size();
    objective.eval = [&table](std::span<const std::size_t> batch, ConceptSpace& sp,
                              std::vector<BoxGrad>* grads) {
        std::vector<PairTarget> entries;
        entries.reserve(batch.size());
        for (const std::size_t idx : batch) {
            entries.push_back(table.entries[idx]);
        }
        return pair_table_loss(entries, sp, grads);
    };

    return run_fit(std::move(space), cfg, objective, eval, metrics);
}

std::vector<ProbeRow> probe(const ConceptSpace& space,
                            std::span<const std::pair<std::string, std::string>> pairs,
                            bool normalize_within_family, const GroundTruthStats* stats) {
    std::vector<ProbeRow> rows;
    rows.reserve(pairs.size());
    std::vector<int> id1s;
    std::vector<int> id2s;
    for (const auto& [n1, n2] : pairs) {
        const int y1 = space.vocab.require(n1);
        const int y2 = space.vocab.require(n2);
        ProbeRow row;
        row.name1 = n1;
        row.name2 = n2;
        row.predicted = space.entail(y1, y2);
        if (stats != nullptr && stats->can_condition_on(y2)) {
            row.target = stats->cond(y1, y2);
        }
        rows.push_back(std::move(row));
        id1s.push_back(y1);
        id2s.push_back(y2);
    }

    if (normalize_within_family) {
        // SoftMax over groups keyed by (family of y1, conditioning concept)
        std::map<std::pair<int, int>, std::vector<std::size_t>> groups;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const Concept& c = space.vocab.concept_at(id1s[i]);
            if (c.kind == ConceptKind::attribute) {
                groups[{c.family, id2s[i]}].push_back(i);
            }
        }
        for (const auto& [key, members] : groups) {
            double denom = 0.0;
            for (const std::size_t i : members) denom += std::exp(rows[i].predicted);
            for (const std::size_t i : members) rows[i].predicted = std::exp(rows[i].predicted) / denom;
        }
    }
    return rows;
}

}  // namespace cbox
