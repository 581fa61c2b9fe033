#pragma once

// Brute-force reference interpreter for VQA programs: recursive evaluation
// over ground-truth label sets. Written independently from the production
// executor on purpose; used as its oracle.

#include <algorithm>
#include <map>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "cbox/datagen.hpp"
#include "cbox/vqa.hpp"

namespace testsupport {

using RefObjects = std::vector<const cbox::SceneObject*>;
using RefValue = std::variant<RefObjects, const cbox::SceneObject*, long long, bool, std::string>;

struct RefInterpreter {
    const cbox::Scene& scene;
    const std::map<std::string, std::string>& family_of_value;  // value -> family name

    std::string label_for(const cbox::SceneObject& obj, const std::string& family) const {
        for (const std::string& v : obj.labels) {
            if (family_of_value.at(v) == family) return v;
        }
        throw std::runtime_error("reference: missing family value");
    }

    RefValue eval(const cbox::Program& p, int idx) const {
        const cbox::ProgramStep& s = p.steps[static_cast<std::size_t>(idx)];
        auto objects_in = [&](int a) {
            return std::get<RefObjects>(eval(p, s.inputs[static_cast<std::size_t>(a)]));
        };
        auto object_in = [&](int a) {
            return std::get<const cbox::SceneObject*>(eval(p, s.inputs[static_cast<std::size_t>(a)]));
        };
        auto int_in = [&](int a) {
            return std::get<long long>(eval(p, s.inputs[static_cast<std::size_t>(a)]));
        };
        auto word_in = [&](int a) {
            return std::get<std::string>(eval(p, s.inputs[static_cast<std::size_t>(a)]));
        };

        if (s.op == "scene") {
            RefObjects all;
            for (const cbox::SceneObject& o : scene.objects) all.push_back(&o);
            return all;
        }
        if (s.op == "unique") {
            const RefObjects objs = objects_in(0);
            if (objs.size() != 1) throw cbox::ExecutionError("reference non-unique");
            return objs.front();
        }
        if (s.op == "count") return static_cast<long long>(objects_in(0).size());
        if (s.op == "exist") return !objects_in(0).empty();
        if (s.op == "relate") {
            const cbox::SceneObject* ref = object_in(0);
            RefObjects out;
            for (const cbox::SceneObject& o : scene.objects) {
                if (&o == ref) continue;
                const bool keep = s.value == "left"    ? o.coords[0] < ref->coords[0]
                                  : s.value == "right" ? o.coords[0] > ref->coords[0]
                                  : s.value == "front" ? o.coords[1] > ref->coords[1]
                                                       : o.coords[1] < ref->coords[1];
                if (keep) out.push_back(&o);
            }
            return out;
        }
        if (s.op == "and" || s.op == "or") {
            const RefObjects a = objects_in(0);
            const RefObjects b = objects_in(1);
            RefObjects out;
            for (const cbox::SceneObject& o : scene.objects) {
                const bool in_a = std::find(a.begin(), a.end(), &o) != a.end();
                const bool in_b = std::find(b.begin(), b.end(), &o) != b.end();
                if ((s.op == "and" && in_a && in_b) || (s.op == "or" && (in_a || in_b))) {
                    out.push_back(&o);
                }
            }
            return out;
        }
        if (s.op == "equal_integer") return int_in(0) == int_in(1);
        if (s.op == "greater_than") return int_in(0) > int_in(1);
        if (s.op == "less_than") return int_in(0) < int_in(1);
        if (s.op.rfind("filter_", 0) == 0) {
            const std::string family = s.op.substr(7);
            RefObjects out;
            for (const cbox::SceneObject* o : objects_in(0)) {
                if (label_for(*o, family) == s.value) out.push_back(o);
            }
            return out;
        }
        if (s.op.rfind("query_", 0) == 0) {
            return label_for(*object_in(0), s.op.substr(6));
        }
        if (s.op.rfind("same_", 0) == 0) {
            const std::string family = s.op.substr(5);
            const cbox::SceneObject* ref = object_in(0);
            const std::string want = label_for(*ref, family);
            RefObjects out;
            for (const cbox::SceneObject& o : scene.objects) {
                if (&o != ref && label_for(o, family) == want) out.push_back(&o);
            }
            return out;
        }
        if (s.op.rfind("equal_", 0) == 0) return word_in(0) == word_in(1);
        throw std::runtime_error("reference: unknown op " + s.op);
    }

    std::string run(const cbox::Program& p) const {
        const RefValue v = eval(p, static_cast<int>(p.steps.size()) - 1);
        if (std::holds_alternative<long long>(v)) return std::to_string(std::get<long long>(v));
        if (std::holds_alternative<bool>(v)) return std::get<bool>(v) ? "yes" : "no";
        return std::get<std::string>(v);
    }
};

inline std::map<std::string, std::string> value_families(const cbox::GeneratorConfig& cfg) {
    std::map<std::string, std::string> out;
    for (const cbox::FamilySpec& f : cfg.families) {
        for (const std::string& v : f.values) out[v] = f.name;
    }
    return out;
}

}  // namespace testsupport
