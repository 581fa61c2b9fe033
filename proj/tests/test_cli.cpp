#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cbox/cli.hpp"
#include "cbox/metrics.hpp"
#include "doctest.h"

namespace fs = std::filesystem;

namespace {

int run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("cbox");
    for (const std::string& a : args) argv.push_back(a.c_str());
    return cbox::cli::run(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str(const std::string& sub = "") const { return (path / sub).string(); }
};

}  // namespace

TEST_CASE("cli end-to-end: datagen, fit, probe with exit codes") {
    TempDir dir("cbox_cli_e2e");
    CHECK(run_cli({"--seed", "5", "--out-dir", dir.str("d"), "datagen", "--scenes", "40"}) == 0);
    CHECK(fs::exists(dir.path / "d" / "dataset.jsonl"));
    CHECK(fs::exists(dir.path / "d" / "manifest.json"));

    const std::string data = dir.str("d/dataset.jsonl");
    const std::string data_digest = cbox::digest_file(data);

    CHECK(run_cli({"--seed", "1", "--out-dir", dir.str("f"), "fit", "--data", data, "--dim", "8",
                   "--epochs", "2", "--batch", "64", "--lr", "1e-3"}) == 0);
    CHECK(fs::exists(dir.path / "f" / "space.json"));
    CHECK(fs::exists(dir.path / "f" / "report.json"));

    // inputs are never mutated
    CHECK(cbox::digest_file(data) == data_digest);

    // probe prints predictions; unknown concepts exit 1 with a diagnostic
    CHECK(run_cli({"--out-dir", dir.str("p"), "probe", "--space", dir.str("f/space.json"), "--pair",
                   "red,cube"}) == 0);
    CHECK(run_cli({"--out-dir", dir.str("p"), "probe", "--space", dir.str("f/space.json"), "--pair",
                   "white,notaconcept"}) == 1);
}

TEST_CASE("cli validation errors exit with code 1") {
    TempDir dir("cbox_cli_errors");
    // unknown flag
    CHECK(run_cli({"fit", "--no-such-flag"}) == 1);
    // neither --data nor --pairs
    CHECK(run_cli({"--out-dir", dir.str(), "fit"}) == 1);
    // missing subcommand
    CHECK(run_cli({}) == 1);
    // malformed pair file exits 1 and names the line
    const std::string pairs = dir.str("bad.tsv");
    {
        std::ofstream out(pairs);
        out << "concept1\tconcept2\tprob\n";
        out << "dog\tanimal\t1.5\n";
    }
    CHECK(run_cli({"--out-dir", dir.str(), "fit", "--pairs", pairs}) == 1);
}

TEST_CASE("cli training reruns reproduce metrics bit-exactly") {
    TempDir dir("cbox_cli_repro");
    REQUIRE(run_cli({"--seed", "9", "--out-dir", dir.str("d"), "datagen", "--scenes", "30"}) == 0);
    const std::string data = dir.str("d/dataset.jsonl");

    // identical argv twice into the same out-dir
    const std::vector<std::string> argv = {"--seed", "3",   "--out-dir", dir.str("a"), "fit",
                                           "--data", data,  "--dim",     "6",
                                           "--epochs", "2", "--batch",   "32"};
    REQUIRE(run_cli(argv) == 0);
    const std::string metrics1 = slurp(dir.path / "a" / "metrics.jsonl");
    const std::string space1 = slurp(dir.path / "a" / "space.json");
    const std::string manifest1 = slurp(dir.path / "a" / "manifest.json");
    REQUIRE(run_cli(argv) == 0);
    CHECK(slurp(dir.path / "a" / "metrics.jsonl") == metrics1);
    CHECK(slurp(dir.path / "a" / "space.json") == space1);
    CHECK(slurp(dir.path / "a" / "manifest.json") == manifest1);
}

TEST_CASE("cli pair-probability fitting path") {
    TempDir dir("cbox_cli_pairs");
    const std::string pairs = dir.str("hier.tsv");
    {
        std::ofstream out(pairs);
        out << "concept1\tconcept2\tprob\n";
        out << "animal\tdog\t1.0\n";
        out << "animal\tcat\t1.0\n";
        out << "rock\tdog\t0.0\n";
        out << "dog\tcat\t0.0\n";
    }
    CHECK(run_cli({"--seed", "2", "--out-dir", dir.str("h"), "fit", "--pairs", pairs, "--dim", "6",
                   "--epochs", "200", "--batch", "8", "--lr", "5e-3", "--weight-decay", "0"}) == 0);
    CHECK(fs::exists(dir.path / "h" / "space.json"));
    // the fitted space answers the hierarchy query
    CHECK(run_cli({"--out-dir", dir.str("h"), "probe", "--space", dir.str("h/space.json"), "--pair",
                   "animal,dog"}) == 0);
}
