#pragma once

#include <array>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cbox/datagen.hpp"
#include "cbox/encoder.hpp"
#include "cbox/space.hpp"

namespace cbox {

// A malformed program (bad opcode, arity, wiring or value).
class ValidationError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// A structurally valid program that fails at runtime (unique on != 1 objects).
class ExecutionError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct ProgramStep {
    std::string op;          // scene, filter_<family>, unique, relate, count,
                             // exist, query_<family>, same_<family>,
                             // equal_<family>, equal_integer, greater_than,
                             // less_than, and, or
    std::string value;       // filter value or relate direction
    std::vector<int> inputs; // indices of earlier steps
};

struct Program {
    std::string question;
    std::vector<ProgramStep> steps;
    std::string answer;  // lowercase word; integers in decimal
};

// Scene object with its projection box and carried-over coordinates; the
// ground-truth labels ride along for oracle-mode execution.
struct ProjectedObject {
    int id = 0;
    Box box;
    std::array<double, 2> coords{0.0, 0.0};
    std::vector<std::string> labels;
};

enum class ExecMode { projected, oracle };

std::string to_string(ExecMode mode);
ExecMode exec_mode_from_string(const std::string& s);

// One projection per object, order and coordinates preserved.
std::vector<ProjectedObject> project_scene(const Scene& scene, const FeatureEncoder& encoder,
                                           const ConceptSpace& space);

// Oracle-mode scene: ground truth only, no encoder involved.
std::vector<ProjectedObject> oracle_scene(const Scene& scene);

// Arity, wiring and value checks against the vocabulary's family structure.
// Throws ValidationError; invalid programs never partially execute.
void validate_program(const Program& program, const Vocabulary& vocab);

// Deterministic execution. Attribute decisions use per-family argmax over
// entailments (projected) or the ground-truth labels (oracle). relate uses
// strictly-smaller/greater coordinates: left/right on x, front = larger y,
// behind = smaller y, reference excluded.
std::string execute(const Program& program, std::span<const ProjectedObject> scene,
                    const ConceptSpace& space, ExecMode mode);

// Template questions covering every opcode; programs are validated and the
// ground-truth answer comes from oracle-mode execution. Inapplicable
// templates are resampled a bounded number of times, then skipped.
std::vector<Program> generate_questions(const Scene& scene, const Vocabulary& vocab, Rng& rng, int n);

// Program file: line-delimited {question, steps: [{op, value?, inputs}], answer}.
void save_programs(std::span<const Program> programs, const std::string& path);
std::vector<Program> load_programs(const std::string& path);

}  // namespace cbox
