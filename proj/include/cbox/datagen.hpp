#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "cbox/dataset.hpp"
#include "cbox/rng.hpp"

namespace cbox {

struct FamilySpec {
    std::string name;
    std::vector<std::string> values;
};

// exclusive_families: one value per family, uniform (CLEVR-like).
// multi_attribute: independent Bernoulli per attribute plus exactly one
// category (COCO/GQA-like); each attribute forms its own singleton family.
enum class DatasetFlavor { exclusive_families, multi_attribute };

struct GeneratorConfig {
    DatasetFlavor flavor = DatasetFlavor::exclusive_families;
    std::vector<FamilySpec> families;      // exclusive mode, >= 2 values each
    std::vector<std::string> attributes;   // multi-attribute mode
    std::vector<std::string> categories;   // multi-attribute mode
    double attr_bernoulli_p = 0.15;
    int min_objects = 3;
    int max_objects = 10;
    int scenes = 100;
    int feat_dim = 64;
    double noise_sigma = 0.1;
    double min_distance = 0.05;
    std::uint64_t seed = 0;

    // color x8, shape x3, material x2, size x2 (15 values)
    static GeneratorConfig clevr();
    // 20 singleton-family attributes + 12 categories
    static GeneratorConfig coco_style();

    void validate() const;
};

// One generated object. In exclusive mode labels[f] is the value of family f
// (config order); in multi-attribute mode labels holds the active attributes
// followed by the category.
struct SceneObject {
    int id = 0;
    std::vector<std::string> labels;
    std::array<double, 2> coords{0.0, 0.0};
    std::vector<double> features;
    std::string sentence;
};

struct Scene {
    int id = 0;
    std::vector<SceneObject> objects;
};

// Fixed feature vector per attribute/category value, drawn once from the
// seeded substream; object features are sums of their labels' codewords.
struct Codebook {
    int feat_dim = 0;
    std::map<std::string, std::vector<double>> vectors;

    static Codebook build(const GeneratorConfig& config);
    const std::vector<double>& at(const std::string& value) const;
};

// Labels and coordinates only; features/sentences are filled by
// render_features and describe.
Scene generate_scene(const GeneratorConfig& config, Rng& rng, int scene_id = 0);

std::vector<double> render_features(const SceneObject& object, const Codebook& codebook,
                                    double sigma, Rng& rng);

// "There is a " + non-final values in random order + final value, where the
// final slot goes to the shape family value (exclusive mode) or the category
// (multi-attribute mode).
std::string describe(const SceneObject& object, const GeneratorConfig& config, Rng& rng);

// Full pipeline: scenes with labels, coords, features and sentences, one
// derived rng per scene.
std::vector<Scene> generate_scenes(const GeneratorConfig& config, const Codebook& codebook);

// One dataset record per object, ids numbered consecutively scene-major.
Dataset to_dataset(const std::vector<Scene>& scenes, const GeneratorConfig& config);
void export_dataset(const std::vector<Scene>& scenes, const GeneratorConfig& config,
                    const std::string& path);

}  // namespace cbox
