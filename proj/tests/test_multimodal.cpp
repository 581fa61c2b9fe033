#include <cmath>
#include <set>

#include "cbox/multimodal.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cbox;

namespace {

struct Fixture {
    GeneratorConfig gen;
    Vocabulary vocab;
    std::vector<AnnotatedSample> samples;
    GroundTruthStats stats{0};
    ConceptSpace space;

    explicit Fixture(int scenes, std::uint64_t seed) : gen(GeneratorConfig::clevr()) {
        gen.seed = seed;
        gen.scenes = scenes;
        gen.feat_dim = 16;
        const Codebook cb = Codebook::build(gen);
        const Dataset ds = to_dataset(generate_scenes(gen, cb), gen);
        vocab = build_vocabulary(ds);
        samples = resolve_samples(ds, vocab);
        stats = extract_stats(samples, vocab);

        KnowledgeSpaceConfig kcfg;
        kcfg.dim = 8;
        ConceptTrainConfig ccfg;
        ccfg.epochs = 4;
        ccfg.batch = 128;
        ccfg.seed = 3;
        space = fit_concept_space(samples, vocab, stats, kcfg, ccfg).space;
    }
};

}  // namespace

TEST_CASE("joint_loss values") {
    const double eps = 1e-6;
    Box a({0.0, 0.0}, {1.0, 1.0});
    GlobalExtrema ex;
    ex.gmin = {-1.0, -1.0};
    ex.gmax = {12.0, 12.0};

    // identical boxes: entailments clamp at 1-eps, loss ~ eps
    CHECK(joint_loss(a, a, ex, eps) == doctest::Approx(eps).epsilon(1e-3));

    // far-separated boxes: loss near 1
    Box far({10.0, 10.0}, {0.1, 0.1});
    CHECK(joint_loss(a, far, ex, eps) > 0.99);

    // monotone under translation toward coincidence (1-D sweep)
    GlobalExtrema ex1;
    ex1.gmin = {-1.0};
    ex1.gmax = {8.0};
    Box base({0.0}, {1.0});
    double prev = 2.0;
    for (double shift = 6.0; shift >= 0.0; shift -= 0.5) {
        Box moved({shift}, {1.0});
        const double loss = joint_loss(base, moved, ex1, eps);
        CHECK(loss <= prev + 1e-12);
        prev = loss;
    }
    CHECK(joint_loss(base, base, ex1, eps) == doctest::Approx(eps).epsilon(1e-3));
}

TEST_CASE("add_d_joint_loss matches finite differences") {
    Rng rng(7);
    int checked = 0;
    while (checked < 40) {
        const Box a = testsupport::random_box(rng, 3, 0.0, 1.0, 0.3, 1.2);
        const Box b = testsupport::random_box(rng, 3, 0.0, 1.0, 0.3, 1.2);
        if (testsupport::has_boundary_tie(a, b)) continue;
        GlobalExtrema ex;
        ex.gmin.assign(3, -2.0);
        ex.gmax.assign(3, 3.0);
        const double eps = 1e-6;
        const double qab = std::exp(log_entailment(a, b, ex));
        const double qba = std::exp(log_entailment(b, a, ex));
        if (qab < 1e-3 || qab > 0.99 || qba < 1e-3 || qba > 0.99) continue;

        for (const bool log_form : {false, true}) {
            BoxGrad ga(3), gb(3);
            add_d_joint_loss(a, b, ex, eps, 1.0, log_form, ga, gb);
            auto f = [&](const Box& x, const Box& y) {
                return log_form ? joint_loss_log(x, y, ex, eps) : joint_loss(x, y, ex, eps);
            };
            const auto fda = testsupport::fd_box_grad([&](const Box& bb) { return f(bb, b); }, a);
            const auto fdb = testsupport::fd_box_grad([&](const Box& bb) { return f(a, bb); }, b);
            for (int i = 0; i < 3; ++i) {
                CHECK(testsupport::rel_err(ga.min[i], fda.min[i], 1e-8) < 1e-5);
                CHECK(testsupport::rel_err(ga.delta[i], fda.delta[i], 1e-8) < 1e-5);
                CHECK(testsupport::rel_err(gb.min[i], fdb.min[i], 1e-8) < 1e-5);
                CHECK(testsupport::rel_err(gb.delta[i], fdb.delta[i], 1e-8) < 1e-5);
            }
        }
        ++checked;
    }
}

TEST_CASE("make_itm_pairs sentence swap bookkeeping") {
    Fixture fx(120, 17);
    Rng rng(5);
    const double fraction = 0.5;
    const auto pairs = make_itm_pairs(fx.samples, ItmSwapMode::sentence_swap, fraction, rng, fx.vocab, fx.gen);
    REQUIRE(pairs.size() == fx.samples.size());

    const auto expected_negatives =
        static_cast<std::int64_t>(std::llround(fraction * static_cast<double>(fx.samples.size())));
    std::int64_t negatives = 0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (!pairs[i].positive) {
            ++negatives;
            CHECK(pairs[i].provenance == PairProvenance::sentence_swap);
            CHECK(pairs[i].text != fx.samples[i].text);
        } else {
            CHECK(pairs[i].provenance == PairProvenance::original);
            CHECK(pairs[i].text == fx.samples[i].text);
        }
        CHECK(pairs[i].vision == fx.samples[i].vision);
    }
    CHECK(negatives == expected_negatives);
}

TEST_CASE("make_itm_pairs fraction zero keeps everything positive") {
    Fixture fx(30, 19);
    Rng rng(5);
    const auto pairs = make_itm_pairs(fx.samples, ItmSwapMode::sentence_swap, 0.0, rng, fx.vocab, fx.gen);
    for (const PairedSample& p : pairs) {
        CHECK(p.positive);
        CHECK(p.provenance == PairProvenance::original);
    }
}

TEST_CASE("make_itm_pairs attribute swap changes exactly one family value") {
    Fixture fx(60, 23);
    Rng rng(9);
    const auto pairs = make_itm_pairs(fx.samples, ItmSwapMode::attribute_swap, 1.0, rng, fx.vocab, fx.gen);

    auto parse = [](const std::string& sentence) {
        std::set<std::string> words;
        std::string token;
        for (const char c : sentence.substr(11)) {  // drop "There is a "
            if (c == ',' || c == ' ') {
                if (!token.empty()) words.insert(token);
                token.clear();
            } else {
                token += c;
            }
        }
        if (!token.empty()) words.insert(token);
        return words;
    };

    for (std::size_t i = 0; i < pairs.size(); ++i) {
        REQUIRE(!pairs[i].positive);
        CHECK(pairs[i].provenance == PairProvenance::attribute_swap);
        std::set<std::string> original;
        for (const int y : fx.samples[i].labels) original.insert(fx.vocab.concept_at(y).name);
        const auto swapped = parse(pairs[i].text);
        CHECK(swapped.size() == original.size());
        std::vector<std::string> gone;
        for (const std::string& w : original) {
            if (!swapped.count(w)) gone.push_back(w);
        }
        REQUIRE(gone.size() == 1);  // exactly one value replaced
        std::vector<std::string> added;
        for (const std::string& w : swapped) {
            if (!original.count(w)) added.push_back(w);
        }
        REQUIRE(added.size() == 1);
        // replacement stays in the same family
        const int f1 = fx.vocab.concept_at(fx.vocab.require(gone[0])).family;
        const int f2 = fx.vocab.concept_at(fx.vocab.require(added[0])).family;
        CHECK(f1 == f2);
    }
}

TEST_CASE("itm_score is the mean of the two entailments and batch-independent") {
    Fixture fx(40, 29);
    Rng rng(3);
    FeatureEncoder venc = FeatureEncoder::init(Modality::vision, fx.gen.feat_dim, 16, 8, rng);
    const TokenTable table = TokenTable::build(fx.samples);
    FeatureEncoder tenc = FeatureEncoder::init(Modality::text, table.size(), 16, 8, rng);
    tenc.tokens = table.tokens;

    const AnnotatedSample& s = fx.samples.front();
    const double score1 = itm_score(s.vision, s.text, venc, tenc, fx.space);
    const double score2 = itm_score(s.vision, s.text, venc, tenc, fx.space);
    CHECK(score1 == score2);

    const Box vbox = encode(s.vision, venc);
    const Box tbox = encode(table.counts(s.text), tenc);
    const double eps = fx.space.config.prob_clamp_eps;
    const double expect = 0.5 * (entailment(vbox, tbox, fx.space.extrema, eps) +
                                 entailment(tbox, vbox, fx.space.extrema, eps));
    CHECK(score1 == doctest::Approx(expect).epsilon(1e-15));
    CHECK(score1 >= eps);
    CHECK(score1 <= 1.0 - eps);
}

TEST_CASE("joint_train with beta zero never touches the space") {
    Fixture fx(50, 31);
    Rng rng(13);
    FeatureEncoder venc = FeatureEncoder::init(Modality::vision, fx.gen.feat_dim, 16, 8, rng);
    const TokenTable table = TokenTable::build(fx.samples);
    FeatureEncoder tenc = FeatureEncoder::init(Modality::text, table.size(), 16, 8, rng);
    tenc.tokens = table.tokens;

    const ConceptSpace before = fx.space;
    JointTrainConfig cfg;
    cfg.steps = 5;
    cfg.batch = 16;
    cfg.beta = 0.0;
    cfg.seed = 7;
    ConceptSpace space = fx.space;
    joint_train(fx.samples, venc, tenc, space, fx.stats, cfg);
    for (std::size_t c = 0; c < before.boxes.size(); ++c) {
        CHECK(space.boxes[c].min == before.boxes[c].min);
        CHECK(space.boxes[c].delta == before.boxes[c].delta);
    }
}

TEST_CASE("joint_train reduces loss and is reproducible") {
    Fixture fx(60, 37);
    const TokenTable table = TokenTable::build(fx.samples);

    auto run = [&]() {
        Rng rng(13);
        FeatureEncoder venc = FeatureEncoder::init(Modality::vision, fx.gen.feat_dim, 16, 8, rng);
        FeatureEncoder tenc = FeatureEncoder::init(Modality::text, table.size(), 16, 8, rng);
        tenc.tokens = table.tokens;
        JointTrainConfig cfg;
        cfg.steps = 40;
        cfg.batch = 32;
        cfg.beta = 0.0;
        cfg.lr = 1e-3;
        cfg.seed = 7;
        ConceptSpace space = fx.space;
        return joint_train(fx.samples, venc, tenc, space, fx.stats, cfg,
                           std::span<const AnnotatedSample>(fx.samples.data(), 10));
    };
    const auto r1 = run();
    const auto r2 = run();
    REQUIRE(r1.step_loss.size() == 40);
    CHECK(r1.step_loss == r2.step_loss);
    CHECK(r1.cross_entailment_curve == r2.cross_entailment_curve);
    // loss should drop over the run
    CHECK(r1.step_loss.back() < r1.step_loss.front());
}

TEST_CASE("evaluate_itm accuracy accounting and thread independence") {
    Fixture fx(60, 41);
    Rng rng(3);
    FeatureEncoder venc = FeatureEncoder::init(Modality::vision, fx.gen.feat_dim, 16, 8, rng);
    const TokenTable table = TokenTable::build(fx.samples);
    FeatureEncoder tenc = FeatureEncoder::init(Modality::text, table.size(), 16, 8, rng);
    tenc.tokens = table.tokens;

    Rng pair_rng(11);
    const auto pairs =
        make_itm_pairs(fx.samples, ItmSwapMode::sentence_swap, 0.5, pair_rng, fx.vocab, fx.gen);
    const auto seq = evaluate_itm(pairs, venc, tenc, fx.space, "sentence_swap", 0.5, 1);
    const auto par = evaluate_itm(pairs, venc, tenc, fx.space, "sentence_swap", 0.5, 4);
    CHECK(seq.accuracy == par.accuracy);
    CHECK(seq.n_pos == par.n_pos);
    CHECK(seq.n_neg == par.n_neg);
    CHECK(seq.n_pos + seq.n_neg == static_cast<std::int64_t>(pairs.size()));
}
