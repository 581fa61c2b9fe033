#pragma once

#include <string>
#include <vector>

#include "cbox/box.hpp"
#include "cbox/vocab.hpp"

namespace cbox {

// The trainable concept space: one box per vocabulary concept plus cached
// global extrema. Mutated only by the single-writer training loops.
struct ConceptSpace {
    Vocabulary vocab;
    std::vector<Box> boxes;
    KnowledgeSpaceConfig config;
    GlobalExtrema extrema;

    int dim() const { return config.dim; }

    // Recomputes the cached extrema from the concept boxes only; projected
    // input boxes never participate.
    void refresh_extrema() { extrema = compute_extrema(boxes); }

    // Q(y1|y2) clamped into [eps, 1-eps], by concept id or name.
    double entail(int y1, int y2) const;
    double entail(const std::string& y1, const std::string& y2) const;

    void validate() const;
};

// Concept-space file: {version: 1, dim, concepts: [{name, kind, family}],
// min: [[...]], delta: [[...]]}, one row per concept. Doubles round-trip
// bit-exactly. Throws FormatError on version or shape mismatch.
void save_space(const ConceptSpace& space, const std::string& path);
ConceptSpace load_space(const std::string& path);

}  // namespace cbox
