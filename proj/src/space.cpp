#include "cbox/space.hpp"

#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace cbox {

using nlohmann::json;

double ConceptSpace::entail(int y1, int y2) const {
    return entailment(boxes.at(static_cast<std::size_t>(y1)), boxes.at(static_cast<std::size_t>(y2)),
                      extrema, config.prob_clamp_eps);
}

double ConceptSpace::entail(const std::string& y1, const std::string& y2) const {
    return entail(vocab.require(y1), vocab.require(y2));
}

void ConceptSpace::validate() const {
    config.validate();
    if (static_cast<int>(boxes.size()) != vocab.size()) {
        throw std::domain_error("ConceptSpace: box count does not match vocabulary size");
    }
    for (const Box& b : boxes) {
        b.validate();
        if (b.dim() != config.dim) {
            throw std::domain_error("ConceptSpace: box dimension does not match config");
        }
    }
}

namespace {

constexpr int kSpaceFormatVersion = 1;

}  // namespace

void save_space(const ConceptSpace& space, const std::string& path) {
    json concepts = json::array();
    for (const Concept& c : space.vocab.concepts()) {
        json jc;
        jc["name"] = c.name;
        jc["kind"] = to_string(c.kind);
        if (c.family >= 0) {
            jc["family"] = space.vocab.family_name(c.family);
        } else {
            jc["family"] = nullptr;
        }
        concepts.push_back(std::move(jc));
    }

    json j;
    j["version"] = kSpaceFormatVersion;
    j["dim"] = space.config.dim;
    j["prob_clamp_eps"] = space.config.prob_clamp_eps;
    j["concepts"] = std::move(concepts);
    json mins = json::array();
    json deltas = json::array();
    for (const Box& b : space.boxes) {
        mins.push_back(b.min);
        deltas.push_back(b.delta);
    }
    j["min"] = std::move(mins);
    j["delta"] = std::move(deltas);

    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot open '" + path + "' for writing");
    }
    out << j.dump() << "\n";
    if (!out) {
        throw std::runtime_error("write failed for '" + path + "'");
    }
}

ConceptSpace load_space(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open concept-space file '" + path + "'");
    }
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError("malformed concept-space file '" + path + "': " + e.what());
    }

    if (!j.contains("version") || !j["version"].is_number_integer()) {
        throw FormatError("concept-space file '" + path + "' lacks a version field");
    }
    const int version = j["version"].get<int>();
    if (version != kSpaceFormatVersion) {
        throw FormatError("concept-space file '" + path + "' has version " + std::to_string(version) +
                          ", expected " + std::to_string(kSpaceFormatVersion));
    }

    ConceptSpace space;
    space.config.dim = j.at("dim").get<int>();
    if (j.contains("prob_clamp_eps")) {
        space.config.prob_clamp_eps = j["prob_clamp_eps"].get<double>();
    }
    space.config.validate();

    for (const auto& jc : j.at("concepts")) {
        const auto kind = concept_kind_from_string(jc.at("kind").get<std::string>());
        std::string family;
        if (jc.contains("family") && !jc["family"].is_null()) {
            family = jc["family"].get<std::string>();
        }
        space.vocab.add(jc.at("name").get<std::string>(), kind, family);
    }

    const auto& mins = j.at("min");
    const auto& deltas = j.at("delta");
    if (static_cast<int>(mins.size()) != space.vocab.size() ||
        static_cast<int>(deltas.size()) != space.vocab.size()) {
        throw FormatError("concept-space file '" + path + "': box row count does not match concepts");
    }
    for (int i = 0; i < space.vocab.size(); ++i) {
        auto mn = mins[static_cast<std::size_t>(i)].get<std::vector<double>>();
        auto dl = deltas[static_cast<std::size_t>(i)].get<std::vector<double>>();
        if (static_cast<int>(mn.size()) != space.config.dim || static_cast<int>(dl.size()) != space.config.dim) {
            throw FormatError("concept-space file '" + path + "': box row " + std::to_string(i) +
                              " has wrong length for dim " + std::to_string(space.config.dim));
        }
        space.boxes.emplace_back(std::move(mn), std::move(dl));
    }
    space.validate();
    space.refresh_extrema();
    return space;
}

}  // namespace cbox
