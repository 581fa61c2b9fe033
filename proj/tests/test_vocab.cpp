#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cbox/dataset.hpp"
#include "cbox/rng.hpp"
#include "cbox/space.hpp"
#include "cbox/vocab.hpp"
#include "doctest.h"

using namespace cbox;

namespace {

// Small CLEVR-flavoured fixture: 2 families, 4 samples.
Dataset tiny_dataset() {
    Dataset ds;
    ds.header.dim_features = 2;
    ds.header.families = {{"color", {"red", "blue"}}, {"shape", {"cube", "sphere"}}};
    auto rec = [](std::int64_t id, std::vector<std::string> concepts) {
        RawRecord r;
        r.id = id;
        r.concepts = std::move(concepts);
        r.vision = {0.0, 0.0};
        r.text = "There is a thing";
        return r;
    };
    ds.records = {rec(0, {"red", "cube"}), rec(1, {"red", "sphere"}), rec(2, {"blue", "cube"}),
                  rec(3, {"red", "cube"})};
    return ds;
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("build_vocabulary orders by first appearance then name") {
    const Dataset ds = tiny_dataset();
    const Vocabulary vocab = build_vocabulary(ds);
    REQUIRE(vocab.size() == 4);
    // first record introduces cube/red (alphabetical within the record)
    CHECK(vocab.concept_at(0).name == "cube");
    CHECK(vocab.concept_at(1).name == "red");
    CHECK(vocab.concept_at(2).name == "sphere");
    CHECK(vocab.concept_at(3).name == "blue");
    CHECK(vocab.concept_at(1).kind == ConceptKind::attribute);
    CHECK(vocab.family_name(vocab.concept_at(1).family) == "color");
    // duplicates across records keep a single stable entry
    CHECK(vocab.find("red").value() == 1);
}

TEST_CASE("build_vocabulary rejects conflicting declarations") {
    Dataset ds = tiny_dataset();
    ds.header.categories = {"red"};  // red already declared as a color
    CHECK_THROWS_AS(build_vocabulary(ds), FormatError);

    Dataset ds2 = tiny_dataset();
    ds2.records[0].concepts = {"red", "cube", "mystery"};
    CHECK_THROWS_AS(build_vocabulary(ds2), FormatError);
}

TEST_CASE("extract_stats matches direct counting") {
    const Dataset ds = tiny_dataset();
    const Vocabulary vocab = build_vocabulary(ds);
    const auto samples = resolve_samples(ds, vocab);
    const auto stats = extract_stats(samples, vocab);

    const int red = vocab.require("red");
    const int cube = vocab.require("cube");
    const int blue = vocab.require("blue");

    CHECK(stats.total() == 8);
    CHECK(stats.prob(red) == doctest::Approx(3.0 / 8.0));
    CHECK(stats.cond(cube, red) == doctest::Approx(2.0 / 3.0));
    // same-family pair never co-occurs
    CHECK(stats.cond(red, blue) == 0.0);
    CHECK(stats.pair(red, blue) == 0);
    // pairwise table is symmetric
    CHECK(stats.pair(cube, red) == stats.pair(red, cube));
}

TEST_CASE("extract_stats brute-force oracle on random label sets") {
    Rng rng(99);
    Vocabulary vocab;
    for (int f = 0; f < 3; ++f) {
        for (int v = 0; v < 4; ++v) {
            vocab.add("a" + std::to_string(f) + "_" + std::to_string(v), ConceptKind::attribute,
                      "fam" + std::to_string(f));
        }
    }
    std::vector<AnnotatedSample> samples(500);
    for (auto& s : samples) {
        for (int f = 0; f < 3; ++f) {
            if (rng.uniform() < 0.8) {
                s.labels.push_back(f * 4 + static_cast<int>(rng.uniform_int(0, 3)));
            }
        }
        if (s.labels.empty()) s.labels.push_back(0);
    }
    const auto stats = extract_stats(samples, vocab);

    // independent recount
    std::vector<std::int64_t> unary(static_cast<std::size_t>(vocab.size()), 0);
    std::int64_t total = 0;
    for (const auto& s : samples) {
        for (int y : s.labels) {
            ++unary[static_cast<std::size_t>(y)];
            ++total;
        }
    }
    for (int y = 0; y < vocab.size(); ++y) {
        CHECK(stats.unary(y) == unary[static_cast<std::size_t>(y)]);
    }
    CHECK(stats.total() == total);
    for (int y1 = 0; y1 < vocab.size(); ++y1) {
        for (int y2 = 0; y2 < vocab.size(); ++y2) {
            if (y1 == y2) continue;
            std::int64_t n = 0;
            for (const auto& s : samples) {
                bool h1 = false, h2 = false;
                for (int y : s.labels) {
                    h1 |= (y == y1);
                    h2 |= (y == y2);
                }
                n += (h1 && h2) ? 1 : 0;
            }
            CHECK(stats.pair(y1, y2) == n);
            if (unary[static_cast<std::size_t>(y2)] > 0) {
                CHECK(stats.cond(y1, y2) ==
                      doctest::Approx(static_cast<double>(n) / static_cast<double>(unary[static_cast<std::size_t>(y2)])));
            }
        }
    }
}

TEST_CASE("cond with zero-count conditioning concept is a domain error") {
    Vocabulary vocab;
    vocab.add("red", ConceptKind::attribute, "color");
    vocab.add("blue", ConceptKind::attribute, "color");
    std::vector<AnnotatedSample> samples(1);
    samples[0].labels = {0};
    const auto stats = extract_stats(samples, vocab);
    CHECK(stats.prob(0) == 1.0);
    CHECK_THROWS_AS(stats.cond(0, 1), std::domain_error);
}

TEST_CASE("sample_negatives same_family returns all siblings of positives") {
    Vocabulary vocab;
    const char* colors[] = {"gray", "red", "blue", "green", "brown", "purple", "cyan", "yellow"};
    for (const char* c : colors) vocab.add(c, ConceptKind::attribute, "color");
    const char* shapes[] = {"cube", "sphere", "cylinder"};
    for (const char* s : shapes) vocab.add(s, ConceptKind::attribute, "shape");
    const char* materials[] = {"rubber", "metal"};
    for (const char* m : materials) vocab.add(m, ConceptKind::attribute, "material");
    const char* sizes[] = {"large", "small"};
    for (const char* z : sizes) vocab.add(z, ConceptKind::attribute, "size");
    REQUIRE(vocab.size() == 15);

    Rng rng(1);
    const std::vector<int> labels = {vocab.require("red"), vocab.require("cube")};
    const auto negs = sample_negatives(labels, vocab, NegativePolicy::same_family, 0, rng);
    CHECK(negs.size() == 9);  // 7 other colors + 2 other shapes
    for (int y : negs) {
        CHECK(std::find(labels.begin(), labels.end(), y) == labels.end());
        const auto fam = vocab.concept_at(y).family;
        CHECK((vocab.family_name(fam) == "color" || vocab.family_name(fam) == "shape"));
    }
}

TEST_CASE("sample_negatives uniform") {
    Vocabulary vocab;
    for (int i = 0; i < 6; ++i) vocab.add("c" + std::to_string(i), ConceptKind::category);

    // labels covering the whole vocabulary leave nothing to sample
    std::vector<int> all = {0, 1, 2, 3, 4, 5};
    Rng rng_a(7);
    CHECK(sample_negatives(all, vocab, NegativePolicy::uniform, 5, rng_a).empty());

    // determinism under a fixed seed
    std::vector<int> labels = {0};
    Rng r1(7), r2(7);
    const auto n1 = sample_negatives(labels, vocab, NegativePolicy::uniform, 3, r1);
    const auto n2 = sample_negatives(labels, vocab, NegativePolicy::uniform, 3, r2);
    CHECK(n1 == n2);
    CHECK(n1.size() == 3);
    for (int y : n1) CHECK(y != 0);
}

TEST_CASE("concept-space save/load round-trips bit-exactly") {
    ConceptSpace space;
    space.config.dim = 3;
    space.vocab.add("red", ConceptKind::attribute, "color");
    space.vocab.add("blue", ConceptKind::attribute, "color");
    space.vocab.add("dog", ConceptKind::category);
    Rng rng(5);
    for (int i = 0; i < 3; ++i) {
        std::vector<double> mn(3), dl(3);
        for (int k = 0; k < 3; ++k) {
            mn[static_cast<std::size_t>(k)] = rng.uniform(-1.0, 1.0);
            dl[static_cast<std::size_t>(k)] = rng.uniform(0.0, 1.0);
        }
        space.boxes.emplace_back(std::move(mn), std::move(dl));
    }
    space.refresh_extrema();

    const auto path = temp_file("cbox_space_roundtrip.json");
    save_space(space, path.string());
    const ConceptSpace loaded = load_space(path.string());

    REQUIRE(loaded.vocab.size() == 3);
    CHECK(loaded.vocab.concept_at(2).kind == ConceptKind::category);
    CHECK(loaded.vocab.concept_at(0).family == space.vocab.concept_at(0).family);
    for (int i = 0; i < 3; ++i) {
        for (int k = 0; k < 3; ++k) {
            CHECK(loaded.boxes[i].min[k] == space.boxes[i].min[k]);
            CHECK(loaded.boxes[i].delta[k] == space.boxes[i].delta[k]);
        }
    }
    std::filesystem::remove(path);
}

TEST_CASE("concept-space load rejects bad files") {
    const auto path = temp_file("cbox_space_bad.json");
    {
        std::ofstream out(path);
        out << R"({"version": 2, "dim": 1, "concepts": [], "min": [], "delta": []})" << "\n";
    }
    CHECK_THROWS_WITH_AS(load_space(path.string()), doctest::Contains("version"), FormatError);
    {
        std::ofstream out(path);
        out << R"({"version": 1, "dim": 2, "concepts": [{"name": "x", "kind": "category", "family": null}],)"
            << R"( "min": [[0.0]], "delta": [[0.5]]})" << "\n";
    }
    CHECK_THROWS_WITH_AS(load_space(path.string()), doctest::Contains("wrong length"), FormatError);
    {
        std::ofstream out(path);
        out << "{\"version\": 1, \"dim\": 2,";  // truncated
    }
    CHECK_THROWS_AS(load_space(path.string()), FormatError);
    std::filesystem::remove(path);
}

TEST_CASE("dataset file round-trip and validation") {
    Dataset ds = tiny_dataset();
    ds.records[0].coords = {0.25, 0.75};
    const auto path = temp_file("cbox_dataset_roundtrip.jsonl");
    save_dataset(ds, path.string());
    const Dataset loaded = load_dataset(path.string());
    REQUIRE(loaded.records.size() == ds.records.size());
    CHECK(loaded.header.dim_features == 2);
    CHECK(loaded.records[0].concepts == ds.records[0].concepts);
    CHECK(loaded.records[0].coords.has_value());
    CHECK((*loaded.records[0].coords)[1] == 0.75);

    // feature length must match the header
    {
        std::ofstream out(path);
        out << R"({"dim_features": 3, "families": {"color": ["red"]}, "categories": []})" << "\n";
        out << R"({"id": 0, "concepts": ["red"], "vision": [1.0], "text": "t"})" << "\n";
    }
    CHECK_THROWS_WITH_AS(load_dataset(path.string()), doctest::Contains("dim_features"), FormatError);
    std::filesystem::remove(path);
}

TEST_CASE("resolve_samples enforces sample invariants") {
    Dataset ds = tiny_dataset();
    const Vocabulary vocab = build_vocabulary(ds);

    Dataset bad = ds;
    bad.records[0].concepts = {"red", "blue"};  // two colors
    CHECK_THROWS_AS(resolve_samples(bad, vocab), FormatError);

    Dataset empty = ds;
    empty.records[0].concepts = {};
    CHECK_THROWS_AS(resolve_samples(empty, vocab), FormatError);
}

TEST_CASE("pair-probability file loading") {
    const auto path = temp_file("cbox_pairs.tsv");
    {
        std::ofstream out(path);
        out << "concept1\tconcept2\tprob\n";
        out << "animal\tdog\t1.0\n";
        out << "animal\tcat\t1\n";
        out << "dog\tcat\t0\n";
    }
    const PairFile file = load_pair_file(path.string());
    REQUIRE(file.rows.size() == 3);
    const Vocabulary vocab = build_vocabulary(file);
    // first row introduces animal/dog sorted by name
    CHECK(vocab.concept_at(0).name == "animal");
    CHECK(vocab.concept_at(1).name == "dog");
    CHECK(vocab.concept_at(2).name == "cat");
    const PairTable table = resolve_pairs(file, vocab);
    CHECK(table.entries[0].y1 == 0);
    CHECK(table.entries[0].y2 == 1);
    CHECK(table.entries[0].p == 1.0);

    // malformed probability names its line
    {
        std::ofstream out(path);
        out << "concept1\tconcept2\tprob\n";
        out << "dog\tanimal\t1.5\n";
    }
    CHECK_THROWS_WITH_AS(load_pair_file(path.string()), doctest::Contains(":2:"), FormatError);

    // unknown concept against an external vocabulary
    {
        std::ofstream out(path);
        out << "concept1\tconcept2\tprob\n";
        out << "animal\tunicorn\t1.0\n";
    }
    Vocabulary small;
    small.add("animal", ConceptKind::category);
    const PairFile f2 = load_pair_file(path.string());
    CHECK_THROWS_WITH_AS(resolve_pairs(f2, small), doctest::Contains("unicorn"), FormatError);
    std::filesystem::remove(path);
}
