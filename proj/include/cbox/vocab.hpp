#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "cbox/rng.hpp"

namespace cbox {

// Malformed files, conflicting declarations, version mismatches.
class FormatError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

enum class ConceptKind { attribute, category };

std::string to_string(ConceptKind kind);
ConceptKind concept_kind_from_string(const std::string& s);

struct Concept {
    int id = -1;
    std::string name;
    ConceptKind kind = ConceptKind::attribute;
    int family = -1;  // attribute concepts carry a family, categories none
};

// Concept vocabulary with family structure. Immutable once built.
class Vocabulary {
  public:
    // Adds a concept; family_name empty for categories. Throws FormatError on
    // duplicate names with conflicting kind/family.
    int add(const std::string& name, ConceptKind kind, const std::string& family_name = "");

    int size() const { return static_cast<int>(concepts_.size()); }
    const Concept& concept_at(int id) const { return concepts_.at(static_cast<std::size_t>(id)); }
    const std::vector<Concept>& concepts() const { return concepts_; }

    std::optional<int> find(const std::string& name) const;
    // Throws std::invalid_argument naming the concept.
    int require(const std::string& name) const;

    int family_count() const { return static_cast<int>(family_names_.size()); }
    const std::string& family_name(int family) const { return family_names_.at(static_cast<std::size_t>(family)); }
    const std::vector<int>& family_members(int family) const { return family_members_.at(static_cast<std::size_t>(family)); }
    std::optional<int> find_family(const std::string& name) const;

    std::vector<int> attribute_ids() const;
    std::vector<int> category_ids() const;

  private:
    std::vector<Concept> concepts_;
    std::unordered_map<std::string, int> index_;
    std::vector<std::string> family_names_;
    std::vector<std::vector<int>> family_members_;
    std::unordered_map<std::string, int> family_index_;
};

// One annotated object: resolved concept labels plus both modality payloads.
struct AnnotatedSample {
    std::int64_t id = 0;
    std::vector<int> labels;  // concept ids, ascending
    std::vector<double> vision;
    std::string text;
    std::optional<std::array<double, 2>> coords;
};

// Unary and pairwise co-occurrence counts; probabilities derived on demand.
// Pairwise counts are stored sparsely, unordered (symmetric table).
class GroundTruthStats {
  public:
    explicit GroundTruthStats(int vocab_size = 0) : unary_(static_cast<std::size_t>(vocab_size), 0) {}

    void add_sample(std::span<const int> labels);

    std::int64_t unary(int y) const { return unary_.at(static_cast<std::size_t>(y)); }
    std::int64_t pair(int y1, int y2) const;
    std::int64_t total() const { return total_; }

    // P(y) = count(y) / sum over all concepts of count.
    double prob(int y) const;
    // P(y1|y2) = count(y1 ∩ y2) / count(y2). Throws std::domain_error when
    // count(y2) == 0 (unsupported conditioning concept).
    double cond(int y1, int y2) const;

    bool can_condition_on(int y) const { return unary(y) > 0; }

  private:
    static std::uint64_t key(int y1, int y2);

    std::vector<std::int64_t> unary_;
    std::unordered_map<std::uint64_t, std::int64_t> pairs_;
    std::int64_t total_ = 0;
};

GroundTruthStats extract_stats(std::span<const AnnotatedSample> samples, const Vocabulary& vocab);

enum class NegativePolicy { same_family, uniform };

std::string to_string(NegativePolicy policy);
NegativePolicy negative_policy_from_string(const std::string& s);

// Negative concepts for one sample. same_family returns every same-family
// sibling of the positive attribute labels (k ignored); uniform draws
// min(k, |Y \ labels|) distinct non-label concepts. Result is disjoint from
// labels and sorted ascending.
std::vector<int> sample_negatives(std::span<const int> labels, const Vocabulary& vocab,
                                  NegativePolicy policy, int k, Rng& rng);

// Ordered pair target P(y1|y2) = p, as loaded from a pair-probability file
// or synthesized from a hierarchy closure.
struct PairTarget {
    int y1 = -1;
    int y2 = -1;
    double p = 0.0;
};

struct PairTable {
    std::vector<PairTarget> entries;
};

}  // namespace cbox
