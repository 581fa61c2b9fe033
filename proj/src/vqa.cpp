#include "cbox/vqa.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace cbox {

using nlohmann::json;

std::string to_string(ExecMode mode) {
    return mode == ExecMode::projected ? "projected" : "oracle";
}

ExecMode exec_mode_from_string(const std::string& s) {
    if (s == "projected") return ExecMode::projected;
    if (s == "oracle") return ExecMode::oracle;
    throw std::invalid_argument("unknown execution mode: '" + s + "'");
}

std::vector<ProjectedObject> project_scene(const Scene& scene, const FeatureEncoder& encoder,
                                           const ConceptSpace& space) {
    if (scene.objects.empty()) {
        throw std::domain_error("project_scene: empty scene");
    }
    std::vector<ProjectedObject> out;
    out.reserve(scene.objects.size());
    for (const SceneObject& obj : scene.objects) {
        ProjectedObject p;
        p.id = obj.id;
        p.box = encode(obj.features, encoder);
        p.box.validate();
        if (p.box.dim() != space.config.dim) {
            throw std::domain_error("project_scene: encoder output dim does not match the space");
        }
        p.coords = obj.coords;
        p.labels = obj.labels;
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<ProjectedObject> oracle_scene(const Scene& scene) {
    if (scene.objects.empty()) {
        throw std::domain_error("oracle_scene: empty scene");
    }
    std::vector<ProjectedObject> out;
    out.reserve(scene.objects.size());
    for (const SceneObject& obj : scene.objects) {
        ProjectedObject p;
        p.id = obj.id;
        p.coords = obj.coords;
        p.labels = obj.labels;
        out.push_back(std::move(p));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

namespace {

enum class ValueKind { object_set, object, integer, boolean, word };

const char* kind_name(ValueKind k) {
    switch (k) {
        case ValueKind::object_set: return "object_set";
        case ValueKind::object: return "object";
        case ValueKind::integer: return "integer";
        case ValueKind::boolean: return "boolean";
        default: return "word";
    }
}

bool is_direction(const std::string& v) {
    return v == "left" || v == "right" || v == "front" || v == "behind";
}

struct OpSignature {
    std::vector<ValueKind> inputs;
    ValueKind output;
};

// family-parameterized ops return their family name, or empty
std::string family_suffix(const std::string& op, const std::string& prefix) {
    if (op.rfind(prefix, 0) == 0 && op.size() > prefix.size()) {
        return op.substr(prefix.size());
    }
    return "";
}

OpSignature signature_of(const ProgramStep& step, const Vocabulary& vocab, int index) {
    const std::string& op = step.op;
    auto require_family = [&](const std::string& family) {
        if (!vocab.find_family(family)) {
            throw ValidationError("step " + std::to_string(index) + ": unknown family '" + family +
                                  "' in op '" + op + "'");
        }
    };

    if (op == "scene") return {{}, ValueKind::object_set};
    if (op == "unique") return {{ValueKind::object_set}, ValueKind::object};
    if (op == "count") return {{ValueKind::object_set}, ValueKind::integer};
    if (op == "exist") return {{ValueKind::object_set}, ValueKind::boolean};
    if (op == "relate") {
        if (!is_direction(step.value)) {
            throw ValidationError("step " + std::to_string(index) + ": relate needs a direction, got '" +
                                  step.value + "'");
        }
        return {{ValueKind::object}, ValueKind::object_set};
    }
    if (op == "and" || op == "or") {
        return {{ValueKind::object_set, ValueKind::object_set}, ValueKind::object_set};
    }
    if (op == "equal_integer" || op == "greater_than" || op == "less_than") {
        return {{ValueKind::integer, ValueKind::integer}, ValueKind::boolean};
    }
    if (auto family = family_suffix(op, "filter_"); !family.empty()) {
        require_family(family);
        const auto concept_id = vocab.find(step.value);
        if (!concept_id || vocab.concept_at(*concept_id).family != *vocab.find_family(family)) {
            throw ValidationError("step " + std::to_string(index) + ": '" + step.value +
                                  "' is not a value of family '" + family + "'");
        }
        return {{ValueKind::object_set}, ValueKind::object_set};
    }
    if (auto family = family_suffix(op, "query_"); !family.empty()) {
        require_family(family);
        return {{ValueKind::object}, ValueKind::word};
    }
    if (auto family = family_suffix(op, "same_"); !family.empty()) {
        require_family(family);
        return {{ValueKind::object}, ValueKind::object_set};
    }
    if (auto family = family_suffix(op, "equal_"); !family.empty()) {
        require_family(family);
        return {{ValueKind::word, ValueKind::word}, ValueKind::boolean};
    }
    throw ValidationError("step " + std::to_string(index) + ": unknown op '" + op + "'");
}

}  // namespace

void validate_program(const Program& program, const Vocabulary& vocab) {
    if (program.steps.empty()) {
        throw ValidationError("program has no steps");
    }
    if (program.steps.front().op != "scene") {
        throw ValidationError("first step must be scene, got '" + program.steps.front().op + "'");
    }
    std::vector<ValueKind> kinds;
    kinds.reserve(program.steps.size());
    for (std::size_t i = 0; i < program.steps.size(); ++i) {
        const ProgramStep& step = program.steps[i];
        const OpSignature sig = signature_of(step, vocab, static_cast<int>(i));
        if (step.inputs.size() != sig.inputs.size()) {
            throw ValidationError("step " + std::to_string(i) + ": op '" + step.op + "' takes " +
                                  std::to_string(sig.inputs.size()) + " inputs, got " +
                                  std::to_string(step.inputs.size()));
        }
        for (std::size_t a = 0; a < step.inputs.size(); ++a) {
            const int ref = step.inputs[a];
            if (ref < 0 || ref >= static_cast<int>(i)) {
                throw ValidationError("step " + std::to_string(i) + ": input " + std::to_string(ref) +
                                      " does not reference an earlier step");
            }
            if (kinds[static_cast<std::size_t>(ref)] != sig.inputs[a]) {
                throw ValidationError("step " + std::to_string(i) + ": input " + std::to_string(ref) +
                                      " has type " + kind_name(kinds[static_cast<std::size_t>(ref)]) +
                                      ", expected " + kind_name(sig.inputs[a]));
            }
        }
        kinds.push_back(sig.output);
    }
    const ValueKind final_kind = kinds.back();
    if (final_kind == ValueKind::object_set || final_kind == ValueKind::object) {
        throw ValidationError("final step must produce an answer-typed value, got " +
                              std::string(kind_name(final_kind)));
    }
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

namespace {

struct Value {
    ValueKind kind = ValueKind::object_set;
    std::vector<int> objects;  // indices into the scene
    int object = -1;
    std::int64_t integer = 0;
    bool boolean = false;
    std::string word;
};

// Family value of one object: ground truth in oracle mode, per-family argmax
// over entailments in projected mode (lowest concept id wins ties).
std::string family_value(const ProjectedObject& obj, int family, const ConceptSpace& space,
                         ExecMode mode) {
    if (mode == ExecMode::oracle) {
        for (const std::string& label : obj.labels) {
            const auto id = space.vocab.find(label);
            if (id && space.vocab.concept_at(*id).family == family) {
                return label;
            }
        }
        throw ExecutionError("object " + std::to_string(obj.id) + " lacks a value for family '" +
                             space.vocab.family_name(family) + "'");
    }
    int best = -1;
    double best_q = -1.0;
    for (const int y : space.vocab.family_members(family)) {
        const double q = entailment(space.boxes[static_cast<std::size_t>(y)], obj.box, space.extrema,
                                    space.config.prob_clamp_eps);
        if (q > best_q) {
            best_q = q;
            best = y;
        }
    }
    return space.vocab.concept_at(best).name;
}

}  // namespace

std::string execute(const Program& program, std::span<const ProjectedObject> scene,
                    const ConceptSpace& space, ExecMode mode) {
    validate_program(program, space.vocab);
    if (scene.empty()) {
        throw std::domain_error("execute: empty scene");
    }

    std::vector<Value> values;
    values.reserve(program.steps.size());
    for (std::size_t i = 0; i < program.steps.size(); ++i) {
        const ProgramStep& step = program.steps[i];
        const std::string& op = step.op;
        auto in = [&](std::size_t a) -> const Value& {
            return values[static_cast<std::size_t>(step.inputs[a])];
        };
        Value out;

        if (op == "scene") {
            out.kind = ValueKind::object_set;
            for (int k = 0; k < static_cast<int>(scene.size()); ++k) out.objects.push_back(k);
        } else if (op == "unique") {
            if (in(0).objects.size() != 1) {
                throw ExecutionError("non-unique: unique() saw " +
                                     std::to_string(in(0).objects.size()) + " objects");
            }
            out.kind = ValueKind::object;
            out.object = in(0).objects.front();
        } else if (op == "count") {
            out.kind = ValueKind::integer;
            out.integer = static_cast<std::int64_t>(in(0).objects.size());
        } else if (op == "exist") {
            out.kind = ValueKind::boolean;
            out.boolean = !in(0).objects.empty();
        } else if (op == "relate") {
            out.kind = ValueKind::object_set;
            const ProjectedObject& ref = scene[static_cast<std::size_t>(in(0).object)];
            for (int k = 0; k < static_cast<int>(scene.size()); ++k) {
                if (k == in(0).object) continue;
                const auto& c = scene[static_cast<std::size_t>(k)].coords;
                bool keep = false;
                if (step.value == "left") keep = c[0] < ref.coords[0];
                else if (step.value == "right") keep = c[0] > ref.coords[0];
                else if (step.value == "front") keep = c[1] > ref.coords[1];
                else keep = c[1] < ref.coords[1];  // behind
                if (keep) out.objects.push_back(k);
            }
        } else if (op == "and" || op == "or") {
            out.kind = ValueKind::object_set;
            const auto& a = in(0).objects;
            const auto& b = in(1).objects;
            if (op == "and") {
                for (const int k : a) {
                    if (std::find(b.begin(), b.end(), k) != b.end()) out.objects.push_back(k);
                }
            } else {
                out.objects = a;
                for (const int k : b) {
                    if (std::find(a.begin(), a.end(), k) == a.end()) out.objects.push_back(k);
                }
                std::sort(out.objects.begin(), out.objects.end());
            }
        } else if (op == "equal_integer" || op == "greater_than" || op == "less_than") {
            out.kind = ValueKind::boolean;
            const std::int64_t a = in(0).integer;
            const std::int64_t b = in(1).integer;
            out.boolean = op == "equal_integer" ? a == b : (op == "greater_than" ? a > b : a < b);
        } else if (auto family = family_suffix(op, "filter_"); !family.empty()) {
            out.kind = ValueKind::object_set;
            const int fam = *space.vocab.find_family(family);
            for (const int k : in(0).objects) {
                if (family_value(scene[static_cast<std::size_t>(k)], fam, space, mode) == step.value) {
                    out.objects.push_back(k);
                }
            }
        } else if (auto family = family_suffix(op, "query_"); !family.empty()) {
            out.kind = ValueKind::word;
            const int fam = *space.vocab.find_family(family);
            out.word = family_value(scene[static_cast<std::size_t>(in(0).object)], fam, space, mode);
        } else if (auto family = family_suffix(op, "same_"); !family.empty()) {
            out.kind = ValueKind::object_set;
            const int fam = *space.vocab.find_family(family);
            const int ref = in(0).object;
            const std::string ref_value =
                family_value(scene[static_cast<std::size_t>(ref)], fam, space, mode);
            for (int k = 0; k < static_cast<int>(scene.size()); ++k) {
                if (k == ref) continue;
                if (family_value(scene[static_cast<std::size_t>(k)], fam, space, mode) == ref_value) {
                    out.objects.push_back(k);
                }
            }
        } else {  // equal_<family>, validated above
            out.kind = ValueKind::boolean;
            out.boolean = in(0).word == in(1).word;
        }
        values.push_back(std::move(out));
    }

    const Value& result = values.back();
    switch (result.kind) {
        case ValueKind::integer: return std::to_string(result.integer);
        case ValueKind::boolean: return result.boolean ? "yes" : "no";
        case ValueKind::word: return result.word;
        default: throw ExecutionError("final step produced a non-answer value");
    }
}

// ---------------------------------------------------------------------------
// Question generation
// ---------------------------------------------------------------------------

namespace {

struct TemplateContext {
    const Scene& scene;
    const Vocabulary& vocab;
    Rng& rng;

    int random_family() {
        return static_cast<int>(rng.uniform_int(0, vocab.family_count() - 1));
    }
    std::string random_value(int family) {
        const auto& members = vocab.family_members(family);
        const int y = members[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(members.size()) - 1))];
        return vocab.concept_at(y).name;
    }
    std::string random_direction() {
        const char* dirs[] = {"left", "right", "front", "behind"};
        return dirs[rng.uniform_int(0, 3)];
    }
    std::string family_name(int f) const { return vocab.family_name(f); }
};

ProgramStep step(std::string op, std::string value = "", std::vector<int> inputs = {}) {
    return ProgramStep{std::move(op), std::move(value), std::move(inputs)};
}

// Each draft builds one candidate program; unique-steps may fail at runtime.
Program draft_count(TemplateContext& ctx) {
    const int f = ctx.random_family();
    const std::string v = ctx.random_value(f);
    Program p;
    p.question = "How many " + v + " things are there?";
    p.steps = {step("scene"), step("filter_" + ctx.family_name(f), v, {0}), step("count", "", {1})};
    return p;
}

Program draft_exist(TemplateContext& ctx) {
    const int f1 = ctx.random_family();
    int f2 = ctx.random_family();
    while (f2 == f1) f2 = ctx.random_family();
    const std::string v1 = ctx.random_value(f1);
    const std::string v2 = ctx.random_value(f2);
    Program p;
    p.question = "Is there a " + v1 + " " + v2 + " thing?";
    p.steps = {step("scene"), step("filter_" + ctx.family_name(f1), v1, {0}),
               step("filter_" + ctx.family_name(f2), v2, {1}), step("exist", "", {2})};
    return p;
}

Program draft_query(TemplateContext& ctx) {
    const int f1 = ctx.random_family();
    int f2 = ctx.random_family();
    while (f2 == f1) f2 = ctx.random_family();
    const std::string v1 = ctx.random_value(f1);
    Program p;
    p.question = "What " + ctx.family_name(f2) + " is the " + v1 + " thing?";
    p.steps = {step("scene"), step("filter_" + ctx.family_name(f1), v1, {0}), step("unique", "", {1}),
               step("query_" + ctx.family_name(f2), "", {2})};
    return p;
}

Program draft_relate_count(TemplateContext& ctx) {
    const int f = ctx.random_family();
    const std::string v = ctx.random_value(f);
    const std::string dir = ctx.random_direction();
    Program p;
    p.question = "How many things are " + dir + " of the " + v + " thing?";
    p.steps = {step("scene"), step("filter_" + ctx.family_name(f), v, {0}), step("unique", "", {1}),
               step("relate", dir, {2}), step("count", "", {3})};
    return p;
}

Program draft_relate_query(TemplateContext& ctx) {
    const int f1 = ctx.random_family();
    int f2 = ctx.random_family();
    while (f2 == f1) f2 = ctx.random_family();
    const std::string v1 = ctx.random_value(f1);
    const std::string dir = ctx.random_direction();
    Program p;
    p.question = "What " + ctx.family_name(f2) + " is the thing " + dir + " of the " + v1 + " thing?";
    p.steps = {step("scene"),
               step("filter_" + ctx.family_name(f1), v1, {0}),
               step("unique", "", {1}),
               step("relate", dir, {2}),
               step("unique", "", {3}),
               step("query_" + ctx.family_name(f2), "", {4})};
    return p;
}

Program draft_same_count(TemplateContext& ctx) {
    const int f1 = ctx.random_family();
    int f2 = ctx.random_family();
    while (f2 == f1) f2 = ctx.random_family();
    const std::string v1 = ctx.random_value(f1);
    Program p;
    p.question = "How many other things have the same " + ctx.family_name(f2) + " as the " + v1 +
                 " thing?";
    p.steps = {step("scene"), step("filter_" + ctx.family_name(f1), v1, {0}), step("unique", "", {1}),
               step("same_" + ctx.family_name(f2), "", {2}), step("count", "", {3})};
    return p;
}

Program draft_compare_counts(TemplateContext& ctx) {
    const int f1 = ctx.random_family();
    const int f2 = ctx.random_family();
    const std::string v1 = ctx.random_value(f1);
    std::string v2 = ctx.random_value(f2);
    while (f1 == f2 && v2 == v1) v2 = ctx.random_value(f2);
    const int which = static_cast<int>(ctx.rng.uniform_int(0, 2));
    const char* ops[] = {"equal_integer", "greater_than", "less_than"};
    const char* texts[] = {"an equal number of", "more", "fewer"};
    Program p;
    if (which == 0) {
        p.question = "Are there an equal number of " + v1 + " things and " + v2 + " things?";
    } else {
        p.question = std::string("Are there ") + texts[which] + " " + v1 + " things than " + v2 +
                     " things?";
    }
    p.steps = {step("scene"),
               step("filter_" + ctx.family_name(f1), v1, {0}),
               step("count", "", {1}),
               step("filter_" + ctx.family_name(f2), v2, {0}),
               step("count", "", {3}),
               step(ops[which], "", {2, 4})};
    return p;
}

Program draft_equal_attribute(TemplateContext& ctx) {
    const int f1 = ctx.random_family();
    int f2 = ctx.random_family();
    while (f2 == f1) f2 = ctx.random_family();
    int fq = ctx.random_family();
    while (fq == f1 || fq == f2) fq = ctx.random_family();
    const std::string v1 = ctx.random_value(f1);
    const std::string v2 = ctx.random_value(f2);
    Program p;
    p.question = "Do the " + v1 + " thing and the " + v2 + " thing have the same " +
                 ctx.family_name(fq) + "?";
    p.steps = {step("scene"),
               step("filter_" + ctx.family_name(f1), v1, {0}),
               step("unique", "", {1}),
               step("query_" + ctx.family_name(fq), "", {2}),
               step("filter_" + ctx.family_name(f2), v2, {0}),
               step("unique", "", {4}),
               step("query_" + ctx.family_name(fq), "", {5}),
               step("equal_" + ctx.family_name(fq), "", {3, 6})};
    return p;
}

Program draft_logical(TemplateContext& ctx, bool use_and) {
    const int f1 = ctx.random_family();
    int f2 = ctx.random_family();
    while (f2 == f1) f2 = ctx.random_family();
    const std::string v1 = ctx.random_value(f1);
    const std::string v2 = ctx.random_value(f2);
    Program p;
    p.question = use_and ? "How many things are both " + v1 + " and " + v2 + "?"
                         : "How many things are " + v1 + " or " + v2 + "?";
    p.steps = {step("scene"),
               step("filter_" + ctx.family_name(f1), v1, {0}),
               step("filter_" + ctx.family_name(f2), v2, {0}),
               step(use_and ? "and" : "or", "", {1, 2}),
               step("count", "", {3})};
    return p;
}

}  // namespace

std::vector<Program> generate_questions(const Scene& scene, const Vocabulary& vocab, Rng& rng, int n) {
    if (n < 1) {
        throw std::invalid_argument("generate_questions: n must be >= 1");
    }
    if (vocab.family_count() < 3) {
        throw std::invalid_argument("generate_questions: need at least three attribute families");
    }
    TemplateContext ctx{scene, vocab, rng};
    // oracle execution needs a space only for the vocabulary
    ConceptSpace oracle_space;
    oracle_space.vocab = vocab;
    oracle_space.config.dim = 1;
    const auto objects = oracle_scene(scene);

    std::vector<Program> out;
    int guard = 0;
    while (static_cast<int>(out.size()) < n && guard < 60 * n) {
        ++guard;
        const int which = static_cast<int>(rng.uniform_int(0, 9));
        Program p;
        switch (which) {
            case 0: p = draft_count(ctx); break;
            case 1: p = draft_exist(ctx); break;
            case 2: p = draft_query(ctx); break;
            case 3: p = draft_relate_count(ctx); break;
            case 4: p = draft_relate_query(ctx); break;
            case 5: p = draft_same_count(ctx); break;
            case 6: p = draft_compare_counts(ctx); break;
            case 7: p = draft_equal_attribute(ctx); break;
            case 8: p = draft_logical(ctx, true); break;
            default: p = draft_logical(ctx, false); break;
        }
        validate_program(p, vocab);
        try {
            p.answer = execute(p, objects, oracle_space, ExecMode::oracle);
        } catch (const ExecutionError&) {
            continue;  // unique unsatisfiable on this scene, resample
        }
        out.push_back(std::move(p));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Program files
// ---------------------------------------------------------------------------

void save_programs(std::span<const Program> programs, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot open '" + path + "' for writing");
    }
    for (const Program& p : programs) {
        json steps = json::array();
        for (const ProgramStep& s : p.steps) {
            json js;
            js["op"] = s.op;
            if (!s.value.empty()) js["value"] = s.value;
            js["inputs"] = s.inputs;
            steps.push_back(std::move(js));
        }
        json j;
        j["question"] = p.question;
        j["steps"] = std::move(steps);
        j["answer"] = p.answer;
        out << j.dump() << "\n";
    }
    if (!out) {
        throw std::runtime_error("write failed for '" + path + "'");
    }
}

std::vector<Program> load_programs(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open program file '" + path + "'");
    }
    std::vector<Program> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw FormatError(path + ":" + std::to_string(line_no) + ": malformed JSON: " + e.what());
        }
        try {
            Program p;
            p.question = j.at("question").get<std::string>();
            p.answer = j.at("answer").get<std::string>();
            for (const auto& js : j.at("steps")) {
                ProgramStep s;
                s.op = js.at("op").get<std::string>();
                if (js.contains("value")) s.value = js["value"].get<std::string>();
                s.inputs = js.at("inputs").get<std::vector<int>>();
                p.steps.push_back(std::move(s));
            }
            out.push_back(std::move(p));
        } catch (const json::exception& e) {
            throw FormatError(path + ":" + std::to_string(line_no) + ": bad program record: " + e.what());
        }
    }
    return out;
}

}  // namespace cbox
