#pragma once

#include <map>
#include <string>
#include <vector>

#include "cbox/vocab.hpp"

namespace cbox {

// Header line of a dataset file: feature dimension plus the family/category
// declarations that fix concept kinds.
struct DatasetHeader {
    int dim_features = 0;
    // family name -> values, in declaration order
    std::vector<std::pair<std::string, std::vector<std::string>>> families;
    std::vector<std::string> categories;
};

// One dataset record before label resolution.
struct RawRecord {
    std::int64_t id = 0;
    std::vector<std::string> concepts;
    std::vector<double> vision;
    std::string text;
    std::optional<std::array<double, 2>> coords;
};

struct Dataset {
    DatasetHeader header;
    std::vector<RawRecord> records;
};

// Line-delimited JSON, one object per line; the first line is the header
// {dim_features, families, categories}. Throws FormatError with the line
// number on malformed input.
Dataset load_dataset(const std::string& path);
void save_dataset(const Dataset& dataset, const std::string& path);

// Vocabulary over every concept appearing in any record's label set, ordered
// by first appearance (ties within one record by name). Kind and family come
// from the header; a name declared both as attribute and category is a
// format error.
Vocabulary build_vocabulary(const Dataset& dataset);

// Resolves record label names to ids and validates the sample invariants:
// non-empty label set, at most one category, at most one label per family.
std::vector<AnnotatedSample> resolve_samples(const Dataset& dataset, const Vocabulary& vocab);

// ---------------------------------------------------------------------------
// Pair-probability files
// ---------------------------------------------------------------------------

struct RawPairRow {
    std::string name1;
    std::string name2;
    double p = 0.0;
    int line = 0;
};

struct PairFile {
    std::vector<RawPairRow> rows;
};

// Header line then "name1 <TAB> name2 <TAB> p" rows; each row states
// P(name1|name2) = p. Throws FormatError naming the offending line.
PairFile load_pair_file(const std::string& path);
void save_pair_file(const PairFile& file, const std::string& path);

// Vocabulary over pair-file names (category concepts), ordered by first
// appearance then name within a row.
Vocabulary build_vocabulary(const PairFile& file);

// Resolves names against a vocabulary; unknown names raise FormatError with
// the line number.
PairTable resolve_pairs(const PairFile& file, const Vocabulary& vocab);

}  // namespace cbox
