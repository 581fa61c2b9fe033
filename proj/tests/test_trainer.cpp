#include <cmath>
#include <numeric>

#include "cbox/datagen.hpp"
#include "cbox/trainer.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cbox;
using testsupport::rel_err;

namespace {

Vocabulary two_family_vocab() {
    Vocabulary v;
    v.add("red", ConceptKind::attribute, "color");
    v.add("blue", ConceptKind::attribute, "color");
    v.add("cube", ConceptKind::attribute, "shape");
    v.add("sphere", ConceptKind::attribute, "shape");
    return v;
}

GroundTruthStats toy_stats(const Vocabulary& vocab) {
    // {red,cube}, {red,sphere}, {blue,cube}, {red,cube}
    std::vector<AnnotatedSample> samples(4);
    samples[0].labels = {vocab.require("red"), vocab.require("cube")};
    samples[1].labels = {vocab.require("red"), vocab.require("sphere")};
    samples[2].labels = {vocab.require("blue"), vocab.require("cube")};
    samples[3].labels = {vocab.require("red"), vocab.require("cube")};
    return extract_stats(samples, vocab);
}

}  // namespace

TEST_CASE("kl_pair_loss closed forms") {
    const double eps = 1e-6;
    CHECK(kl_pair_loss(0.5, 0.8, eps) ==
          doctest::Approx(0.5 * std::log(0.5 / 0.8) + 0.5 * std::log(0.5 / 0.2)).epsilon(1e-12));
    CHECK(kl_pair_loss(0.5, 0.8, eps) == doctest::Approx(0.2231).epsilon(1e-3));
    CHECK(kl_pair_loss(0.3, 0.3, eps) == 0.0);
    CHECK(kl_pair_loss(1.0, 0.5, eps) == doctest::Approx(std::log(2.0)).epsilon(1e-4));
    CHECK(kl_pair_loss(2.0 / 3.0, 0.5, eps) == doctest::Approx(0.0566).epsilon(1e-2));
    // non-negative on a sweep
    for (double p : {0.0, 0.1, 0.45, 0.9, 1.0}) {
        for (double q : {1e-6, 0.2, 0.5, 0.8, 1.0 - 1e-6}) {
            CHECK(kl_pair_loss(p, q, eps) >= 0.0);
        }
    }
}

TEST_CASE("init_space ranges, determinism and parameter count") {
    const Vocabulary vocab = two_family_vocab();
    KnowledgeSpaceConfig kcfg;
    kcfg.dim = 50;
    ConceptTrainConfig cfg;

    Rng r1(4), r2(4);
    const ConceptSpace s1 = init_space(vocab, kcfg, cfg, r1);
    const ConceptSpace s2 = init_space(vocab, kcfg, cfg, r2);
    REQUIRE(s1.boxes.size() == 4);
    std::size_t param_count = 0;
    for (std::size_t c = 0; c < s1.boxes.size(); ++c) {
        for (int i = 0; i < 50; ++i) {
            CHECK(s1.boxes[c].min[i] >= 0.0);
            CHECK(s1.boxes[c].min[i] < 1.0);
            CHECK(s1.boxes[c].delta[i] >= 0.1);
            CHECK(s1.boxes[c].delta[i] < 0.9);
            CHECK(s1.boxes[c].min[i] == s2.boxes[c].min[i]);
            CHECK(s1.boxes[c].delta[i] == s2.boxes[c].delta[i]);
            param_count += 2;
        }
    }
    CHECK(param_count == 4 * 2 * 50);
}

TEST_CASE("concept_loss single-sample example") {
    // y = {red, cube}; P(red|cube) = P(cube|red) = 2/3; q forced to 0.5 by a
    // hand-placed geometry: joint width equals half the conditioning width is
    // hard to stage exactly, so check the spec value through kl_pair_loss and
    // the zero-loss fixed point through a space that reproduces its targets.
    const Vocabulary vocab = two_family_vocab();
    const GroundTruthStats stats = toy_stats(vocab);

    // zero loss when predictions equal clamped targets: a one-concept label
    // set has no pairs, and identical boxes entail each other at 1 - eps,
    // matching a clamped target of 1.
    ConceptSpace space;
    space.config.dim = 2;
    space.vocab = vocab;
    for (int c = 0; c < 4; ++c) {
        space.boxes.push_back(Box({0.1, 0.2}, {0.5, 0.7}));
    }
    space.refresh_extrema();
    std::vector<std::vector<int>> sets = {{0}, {1}};
    std::int64_t skipped = 0;
    CHECK(concept_loss(sets, space, stats, PairOrdering::both, nullptr, &skipped) == 0.0);
    CHECK(skipped == 0);
}

TEST_CASE("concept_loss mean matches a hand-computed two-sample batch") {
    const Vocabulary vocab = two_family_vocab();
    const GroundTruthStats stats = toy_stats(vocab);
    ConceptSpace space;
    space.config.dim = 3;
    space.vocab = vocab;
    Rng rng(8);
    for (int c = 0; c < 4; ++c) {
        space.boxes.push_back(testsupport::random_box(rng, 3, 0.0, 1.0, 0.2, 0.9));
    }
    space.refresh_extrema();
    const double eps = space.config.prob_clamp_eps;

    const int red = 0, blue = 1, cube = 2;
    std::vector<std::vector<int>> sets = {{red, cube}, {red, blue}};
    std::int64_t skipped = 0;
    const double loss = concept_loss(sets, space, stats, PairOrdering::both, nullptr, &skipped);

    auto term = [&](int y1, int y2) {
        return kl_pair_loss(stats.cond(y1, y2), space.entail(y1, y2), eps);
    };
    const double expect = 0.5 * (0.5 * (term(red, cube) + term(cube, red)) +
                                 0.5 * (term(red, blue) + term(blue, red)));
    CHECK(loss == doctest::Approx(expect).epsilon(1e-12));

    // canonical mode keeps the Eq-style 1/(2|C|) normalizer with one term
    const double canon = concept_loss(sets, space, stats, PairOrdering::canonical, nullptr, &skipped);
    const double expect_canon = 0.5 * (0.5 * term(red, cube) + 0.5 * term(red, blue));
    CHECK(canon == doctest::Approx(expect_canon).epsilon(1e-12));
}

TEST_CASE("concept_loss gradient matches finite differences") {
    const Vocabulary vocab = two_family_vocab();
    const GroundTruthStats stats = toy_stats(vocab);
    Rng rng(21);

    for (int rep = 0; rep < 5; ++rep) {
        ConceptSpace space;
        space.config.dim = 3;
        space.vocab = vocab;
        for (int c = 0; c < 4; ++c) {
            space.boxes.push_back(testsupport::random_box(rng, 3, 0.0, 1.0, 0.2, 0.9));
        }
        space.refresh_extrema();

        std::vector<std::vector<int>> sets = {{0, 2}, {0, 1}, {1, 2, 3}};
        std::vector<BoxGrad> grads(4, BoxGrad(3));
        std::int64_t skipped = 0;
        concept_loss(sets, space, stats, PairOrdering::both, &grads, &skipped);

        // finite differences against the loss with extrema held fixed, as the
        // analytic gradient treats them
        auto loss_at = [&](ConceptSpace& sp) {
            return concept_loss(sets, sp, stats, PairOrdering::both, nullptr, nullptr);
        };
        const double h = 1e-6;
        for (int c = 0; c < 4; ++c) {
            for (int i = 0; i < 3; ++i) {
                ConceptSpace sp = space;
                sp.boxes[c].min[i] += h;
                const double up = loss_at(sp);
                sp.boxes[c].min[i] -= 2 * h;
                const double dn = loss_at(sp);
                const double fd = (up - dn) / (2 * h);
                CHECK(rel_err(grads[c].min[i], fd, 1e-7) < 1e-5);

                ConceptSpace sp2 = space;
                sp2.boxes[c].delta[i] += h;
                const double up2 = loss_at(sp2);
                sp2.boxes[c].delta[i] -= 2 * h;
                const double dn2 = loss_at(sp2);
                const double fd2 = (up2 - dn2) / (2 * h);
                CHECK(rel_err(grads[c].delta[i], fd2, 1e-7) < 1e-5);
            }
        }
    }
}

TEST_CASE("fit on tiny data: loss decreases, deltas stay non-negative, reproducible") {
    GeneratorConfig gen = GeneratorConfig::clevr();
    gen.seed = 2;
    gen.scenes = 60;
    const Codebook cb = Codebook::build(gen);
    const auto scenes = generate_scenes(gen, cb);
    const Dataset ds = to_dataset(scenes, gen);
    const Vocabulary vocab = build_vocabulary(ds);
    const auto samples = resolve_samples(ds, vocab);
    const auto stats = extract_stats(samples, vocab);

    KnowledgeSpaceConfig kcfg;
    kcfg.dim = 8;
    ConceptTrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch = 64;
    cfg.seed = 5;

    const FitResult a = fit_concept_space(samples, vocab, stats, kcfg, cfg);
    const FitResult b = fit_concept_space(samples, vocab, stats, kcfg, cfg);

    REQUIRE(a.report.epoch_mean_loss.size() == 3);
    CHECK(a.report.epoch_mean_loss.back() < a.report.epoch_mean_loss.front());
    CHECK(a.report.final_dkl < a.report.baseline_dkl);
    for (const Box& box : a.space.boxes) {
        for (double d : box.delta) CHECK(d >= 0.0);
    }
    // bit-identical trajectories and boxes under the same seed
    CHECK(a.report.epoch_mean_loss == b.report.epoch_mean_loss);
    for (std::size_t c = 0; c < a.space.boxes.size(); ++c) {
        CHECK(a.space.boxes[c].min == b.space.boxes[c].min);
        CHECK(a.space.boxes[c].delta == b.space.boxes[c].delta);
    }
}

TEST_CASE("one step with lr -> 0 leaves the space almost unchanged") {
    const Vocabulary vocab = two_family_vocab();
    const GroundTruthStats stats = toy_stats(vocab);
    std::vector<AnnotatedSample> samples(2);
    samples[0].labels = {0, 2};
    samples[1].labels = {1, 3};

    KnowledgeSpaceConfig kcfg;
    kcfg.dim = 4;
    ConceptTrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch = 2;
    cfg.seed = 9;
    cfg.lr = 1e-12;
    cfg.weight_decay = 0.0;

    Rng init_rng = Rng::substream(cfg.seed, "init");
    const ConceptSpace before = init_space(vocab, kcfg, cfg, init_rng);
    const FitResult out = fit_concept_space(samples, vocab, stats, kcfg, cfg);
    for (std::size_t c = 0; c < before.boxes.size(); ++c) {
        for (int i = 0; i < 4; ++i) {
            CHECK(std::fabs(out.space.boxes[c].min[i] - before.boxes[c].min[i]) < 1e-9);
            CHECK(std::fabs(out.space.boxes[c].delta[i] - before.boxes[c].delta[i]) < 1e-9);
        }
    }
}

TEST_CASE("fit via pair table reduces the divergence") {
    Vocabulary vocab;
    vocab.add("animal", ConceptKind::category);
    vocab.add("dog", ConceptKind::category);
    vocab.add("cat", ConceptKind::category);
    vocab.add("rock", ConceptKind::category);

    PairTable table;
    table.entries = {
        {0, 1, 1.0},  // P(animal|dog) = 1
        {0, 2, 1.0},
        {3, 1, 0.0},
        {3, 2, 0.0},
        {1, 2, 0.0},
    };

    KnowledgeSpaceConfig kcfg;
    kcfg.dim = 6;
    ConceptTrainConfig cfg;
    cfg.epochs = 400;
    cfg.batch = 8;
    cfg.lr = 5e-3;
    cfg.weight_decay = 0.0;
    cfg.seed = 13;

    const FitResult out = fit_concept_space(table, vocab, kcfg, cfg);
    CHECK(out.report.final_dkl < 0.1 * out.report.baseline_dkl);
    CHECK(out.report.final_dkl < 0.1);
    CHECK(out.space.entail(0, 1) > 0.8);  // dog mostly inside animal
    CHECK(out.space.entail(3, 1) < 0.2);
}

TEST_CASE("probe rows, normalization and self-entailment") {
    const Vocabulary vocab = two_family_vocab();
    ConceptSpace space;
    space.config.dim = 3;
    space.vocab = vocab;
    Rng rng(33);
    for (int c = 0; c < 4; ++c) {
        space.boxes.push_back(testsupport::random_box(rng, 3, 0.0, 1.0, 0.2, 0.9));
    }
    space.refresh_extrema();

    const GroundTruthStats stats = toy_stats(vocab);
    std::vector<std::pair<std::string, std::string>> pairs = {{"red", "red"}};
    const auto self_rows = probe(space, pairs, false, &stats);
    CHECK(self_rows[0].predicted == 1.0 - space.config.prob_clamp_eps);
    CHECK(self_rows[0].target.has_value());

    // normalized color row conditioned on cube sums to one
    std::vector<std::pair<std::string, std::string>> fam = {{"red", "cube"}, {"blue", "cube"}};
    const auto rows = probe(space, fam, true, &stats);
    CHECK(rows[0].predicted + rows[1].predicted == doctest::Approx(1.0).epsilon(1e-12));

    CHECK_THROWS_WITH_AS(
        probe(space, std::vector<std::pair<std::string, std::string>>{{"red", "notaconcept"}}, false),
        doctest::Contains("notaconcept"), std::invalid_argument);
}
