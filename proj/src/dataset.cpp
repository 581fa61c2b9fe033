#include "cbox/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace cbox {

using nlohmann::json;

namespace {

[[noreturn]] void line_error(const std::string& path, int line, const std::string& what) {
    throw FormatError(path + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open dataset file '" + path + "'");
    }

    Dataset ds;
    std::string line;
    int line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            line_error(path, line_no, std::string("malformed JSON: ") + e.what());
        }
        if (!have_header) {
            try {
                ds.header.dim_features = j.at("dim_features").get<int>();
                for (const auto& [fam, values] : j.at("families").items()) {
                    ds.header.families.emplace_back(fam, values.get<std::vector<std::string>>());
                }
                ds.header.categories = j.at("categories").get<std::vector<std::string>>();
            } catch (const json::exception& e) {
                line_error(path, line_no, std::string("bad header: ") + e.what());
            }
            have_header = true;
            continue;
        }
        RawRecord rec;
        try {
            rec.id = j.at("id").get<std::int64_t>();
            rec.concepts = j.at("concepts").get<std::vector<std::string>>();
            rec.vision = j.at("vision").get<std::vector<double>>();
            rec.text = j.at("text").get<std::string>();
            if (j.contains("coords") && !j["coords"].is_null()) {
                const auto c = j["coords"].get<std::vector<double>>();
                if (c.size() != 2) {
                    line_error(path, line_no, "coords must have exactly two entries");
                }
                rec.coords = std::array<double, 2>{c[0], c[1]};
            }
        } catch (const json::exception& e) {
            line_error(path, line_no, std::string("bad record: ") + e.what());
        }
        if (static_cast<int>(rec.vision.size()) != ds.header.dim_features) {
            line_error(path, line_no,
                       "vision array has length " + std::to_string(rec.vision.size()) +
                           ", header declares dim_features " + std::to_string(ds.header.dim_features));
        }
        ds.records.push_back(std::move(rec));
    }
    if (!have_header) {
        throw FormatError(path + ": missing header line");
    }
    return ds;
}

void save_dataset(const Dataset& dataset, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot open '" + path + "' for writing");
    }
    json header;
    header["dim_features"] = dataset.header.dim_features;
    json fams = json::object();
    for (const auto& [name, values] : dataset.header.families) {
        fams[name] = values;
    }
    header["families"] = std::move(fams);
    header["categories"] = dataset.header.categories;
    out << header.dump() << "\n";

    for (const RawRecord& rec : dataset.records) {
        json j;
        j["id"] = rec.id;
        j["concepts"] = rec.concepts;
        j["vision"] = rec.vision;
        j["text"] = rec.text;
        if (rec.coords) {
            j["coords"] = std::vector<double>{(*rec.coords)[0], (*rec.coords)[1]};
        }
        out << j.dump() << "\n";
    }
    if (!out) {
        throw std::runtime_error("write failed for '" + path + "'");
    }
}

Vocabulary build_vocabulary(const Dataset& dataset) {
    // kind/family declarations from the header
    std::map<std::string, std::pair<ConceptKind, std::string>> decl;
    for (const auto& [family, values] : dataset.header.families) {
        for (const std::string& v : values) {
            auto [it, inserted] = decl.emplace(v, std::make_pair(ConceptKind::attribute, family));
            if (!inserted && (it->second.first != ConceptKind::attribute || it->second.second != family)) {
                throw FormatError("conflicting declarations for concept '" + v + "'");
            }
        }
    }
    for (const std::string& c : dataset.header.categories) {
        auto [it, inserted] = decl.emplace(c, std::make_pair(ConceptKind::category, std::string()));
        if (!inserted) {
            throw FormatError("conflicting declarations for concept '" + c + "'");
        }
    }

    Vocabulary vocab;
    for (const RawRecord& rec : dataset.records) {
        std::vector<std::string> fresh;
        for (const std::string& name : rec.concepts) {
            if (!vocab.find(name) && std::find(fresh.begin(), fresh.end(), name) == fresh.end()) {
                fresh.push_back(name);
            }
        }
        std::sort(fresh.begin(), fresh.end());
        for (const std::string& name : fresh) {
            auto it = decl.find(name);
            if (it == decl.end()) {
                throw FormatError("concept '" + name + "' is not declared in the dataset header");
            }
            vocab.add(name, it->second.first, it->second.second);
        }
    }
    return vocab;
}

std::vector<AnnotatedSample> resolve_samples(const Dataset& dataset, const Vocabulary& vocab) {
    std::vector<AnnotatedSample> out;
    out.reserve(dataset.records.size());
    for (const RawRecord& rec : dataset.records) {
        if (rec.concepts.empty()) {
            throw FormatError("record " + std::to_string(rec.id) + " has an empty label set");
        }
        AnnotatedSample s;
        s.id = rec.id;
        s.vision = rec.vision;
        s.text = rec.text;
        s.coords = rec.coords;
        int categories = 0;
        std::vector<int> family_seen(static_cast<std::size_t>(vocab.family_count()), 0);
        for (const std::string& name : rec.concepts) {
            const int id = vocab.require(name);
            const Concept& c = vocab.concept_at(id);
            if (c.kind == ConceptKind::category) {
                if (++categories > 1) {
                    throw FormatError("record " + std::to_string(rec.id) + " has more than one category label");
                }
            } else if (++family_seen[static_cast<std::size_t>(c.family)] > 1) {
                throw FormatError("record " + std::to_string(rec.id) + " has multiple labels in family '" +
                                  vocab.family_name(c.family) + "'");
            }
            s.labels.push_back(id);
        }
        std::sort(s.labels.begin(), s.labels.end());
        s.labels.erase(std::unique(s.labels.begin(), s.labels.end()), s.labels.end());
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pair-probability files
// ---------------------------------------------------------------------------

PairFile load_pair_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open pair-probability file '" + path + "'");
    }
    PairFile file;
    std::string line;
    int line_no = 0;
    bool saw_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (!saw_header) {
            saw_header = true;  // column-name header, skipped
            continue;
        }
        RawPairRow row;
        row.line = line_no;
        const auto tab1 = line.find('\t');
        const auto tab2 = tab1 == std::string::npos ? std::string::npos : line.find('\t', tab1 + 1);
        if (tab1 == std::string::npos || tab2 == std::string::npos) {
            line_error(path, line_no, "expected 'name1<TAB>name2<TAB>p'");
        }
        row.name1 = line.substr(0, tab1);
        row.name2 = line.substr(tab1 + 1, tab2 - tab1 - 1);
        const std::string pstr = line.substr(tab2 + 1);
        try {
            std::size_t used = 0;
            row.p = std::stod(pstr, &used);
            if (used != pstr.size()) {
                throw std::invalid_argument("trailing characters");
            }
        } catch (const std::exception&) {
            line_error(path, line_no, "bad probability value '" + pstr + "'");
        }
        if (row.name1.empty() || row.name2.empty()) {
            line_error(path, line_no, "empty concept name");
        }
        if (!(row.p >= 0.0 && row.p <= 1.0)) {
            line_error(path, line_no, "probability " + pstr + " outside [0, 1]");
        }
        file.rows.push_back(std::move(row));
    }
    if (!saw_header) {
        throw FormatError(path + ": missing header line");
    }
    return file;
}

void save_pair_file(const PairFile& file, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot open '" + path + "' for writing");
    }
    out << "concept1\tconcept2\tprob\n";
    out.precision(17);
    for (const RawPairRow& row : file.rows) {
        out << row.name1 << '\t' << row.name2 << '\t' << row.p << "\n";
    }
    if (!out) {
        throw std::runtime_error("write failed for '" + path + "'");
    }
}

Vocabulary build_vocabulary(const PairFile& file) {
    Vocabulary vocab;
    for (const RawPairRow& row : file.rows) {
        std::vector<std::string> fresh;
        for (const std::string& name : {row.name1, row.name2}) {
            if (!vocab.find(name) && std::find(fresh.begin(), fresh.end(), name) == fresh.end()) {
                fresh.push_back(name);
            }
        }
        std::sort(fresh.begin(), fresh.end());
        for (const std::string& name : fresh) {
            vocab.add(name, ConceptKind::category);
        }
    }
    return vocab;
}

PairTable resolve_pairs(const PairFile& file, const Vocabulary& vocab) {
    PairTable table;
    table.entries.reserve(file.rows.size());
    for (const RawPairRow& row : file.rows) {
        const auto y1 = vocab.find(row.name1);
        const auto y2 = vocab.find(row.name2);
        if (!y1 || !y2) {
            throw FormatError("line " + std::to_string(row.line) + ": unknown concept '" +
                              (!y1 ? row.name1 : row.name2) + "'");
        }
        table.entries.push_back(PairTarget{*y1, *y2, row.p});
    }
    return table;
}

}  // namespace cbox
