#include "cbox/vocab.hpp"

#include <algorithm>

namespace cbox {

std::string to_string(ConceptKind kind) {
    return kind == ConceptKind::attribute ? "attribute" : "category";
}

ConceptKind concept_kind_from_string(const std::string& s) {
    if (s == "attribute") return ConceptKind::attribute;
    if (s == "category") return ConceptKind::category;
    throw FormatError("unknown concept kind: '" + s + "'");
}

int Vocabulary::add(const std::string& name, ConceptKind kind, const std::string& family_name) {
    if (kind == ConceptKind::attribute && family_name.empty()) {
        throw FormatError("attribute concept '" + name + "' declared without a family");
    }
    if (kind == ConceptKind::category && !family_name.empty()) {
        throw FormatError("category concept '" + name + "' declared with family '" + family_name + "'");
    }

    int family = -1;
    if (!family_name.empty()) {
        auto it = family_index_.find(family_name);
        if (it == family_index_.end()) {
            family = static_cast<int>(family_names_.size());
            family_index_.emplace(family_name, family);
            family_names_.push_back(family_name);
            family_members_.emplace_back();
        } else {
            family = it->second;
        }
    }

    auto existing = index_.find(name);
    if (existing != index_.end()) {
        const Concept& c = concepts_[static_cast<std::size_t>(existing->second)];
        if (c.kind != kind || c.family != family) {
            throw FormatError("conflicting declarations for concept '" + name + "'");
        }
        return existing->second;
    }

    const int id = static_cast<int>(concepts_.size());
    concepts_.push_back(Concept{id, name, kind, family});
    index_.emplace(name, id);
    if (family >= 0) {
        family_members_[static_cast<std::size_t>(family)].push_back(id);
    }
    return id;
}

std::optional<int> Vocabulary::find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

int Vocabulary::require(const std::string& name) const {
    auto id = find(name);
    if (!id) {
        throw std::invalid_argument("unknown concept: '" + name + "'");
    }
    return *id;
}

std::optional<int> Vocabulary::find_family(const std::string& name) const {
    auto it = family_index_.find(name);
    if (it == family_index_.end()) return std::nullopt;
    return it->second;
}

std::vector<int> Vocabulary::attribute_ids() const {
    std::vector<int> out;
    for (const Concept& c : concepts_) {
        if (c.kind == ConceptKind::attribute) out.push_back(c.id);
    }
    return out;
}

std::vector<int> Vocabulary::category_ids() const {
    std::vector<int> out;
    for (const Concept& c : concepts_) {
        if (c.kind == ConceptKind::category) out.push_back(c.id);
    }
    return out;
}

// ---------------------------------------------------------------------------
// GroundTruthStats
// ---------------------------------------------------------------------------

std::uint64_t GroundTruthStats::key(int y1, int y2) {
    const auto lo = static_cast<std::uint64_t>(std::min(y1, y2));
    const auto hi = static_cast<std::uint64_t>(std::max(y1, y2));
    return (lo << 32) | hi;
}

void GroundTruthStats::add_sample(std::span<const int> labels) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
        unary_.at(static_cast<std::size_t>(labels[i])) += 1;
        total_ += 1;
        for (std::size_t j = i + 1; j < labels.size(); ++j) {
            pairs_[key(labels[i], labels[j])] += 1;
        }
    }
}

std::int64_t GroundTruthStats::pair(int y1, int y2) const {
    auto it = pairs_.find(key(y1, y2));
    return it == pairs_.end() ? 0 : it->second;
}

double GroundTruthStats::prob(int y) const {
    if (total_ == 0) {
        throw std::domain_error("GroundTruthStats: empty table");
    }
    return static_cast<double>(unary(y)) / static_cast<double>(total_);
}

double GroundTruthStats::cond(int y1, int y2) const {
    const std::int64_t n2 = unary(y2);
    if (n2 == 0) {
        throw std::domain_error("unsupported conditioning concept (id " + std::to_string(y2) +
                                " has zero count)");
    }
    return static_cast<double>(pair(y1, y2)) / static_cast<double>(n2);
}

GroundTruthStats extract_stats(std::span<const AnnotatedSample> samples, const Vocabulary& vocab) {
    GroundTruthStats stats(vocab.size());
    for (const AnnotatedSample& s : samples) {
        for (const int y : s.labels) {
            if (y < 0 || y >= vocab.size()) {
                throw std::invalid_argument("extract_stats: label id out of range");
            }
        }
        stats.add_sample(s.labels);
    }
    return stats;
}

// ---------------------------------------------------------------------------
// Negative sampling
// ---------------------------------------------------------------------------

std::string to_string(NegativePolicy policy) {
    return policy == NegativePolicy::same_family ? "same_family" : "uniform";
}

NegativePolicy negative_policy_from_string(const std::string& s) {
    if (s == "same_family") return NegativePolicy::same_family;
    if (s == "uniform") return NegativePolicy::uniform;
    throw std::invalid_argument("unknown negative-sampling policy: '" + s + "'");
}

std::vector<int> sample_negatives(std::span<const int> labels, const Vocabulary& vocab,
                                  NegativePolicy policy, int k, Rng& rng) {
    std::vector<bool> is_label(static_cast<std::size_t>(vocab.size()), false);
    for (const int y : labels) {
        is_label.at(static_cast<std::size_t>(y)) = true;
    }

    std::vector<int> out;
    if (policy == NegativePolicy::same_family) {
        std::vector<bool> taken(static_cast<std::size_t>(vocab.size()), false);
        for (const int y : labels) {
            const Concept& c = vocab.concept_at(y);
            if (c.kind != ConceptKind::attribute) continue;
            for (const int sib : vocab.family_members(c.family)) {
                if (!is_label[static_cast<std::size_t>(sib)] && !taken[static_cast<std::size_t>(sib)]) {
                    taken[static_cast<std::size_t>(sib)] = true;
                    out.push_back(sib);
                }
            }
        }
    } else {
        std::vector<int> candidates;
        for (int y = 0; y < vocab.size(); ++y) {
            if (!is_label[static_cast<std::size_t>(y)]) candidates.push_back(y);
        }
        const int take = std::min<int>(k, static_cast<int>(candidates.size()));
        for (const int idx : rng.sample_without_replacement(static_cast<int>(candidates.size()), take)) {
            out.push_back(candidates[static_cast<std::size_t>(idx)]);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace cbox
