#include "cbox/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>

namespace cbox {

GeneratorConfig GeneratorConfig::clevr() {
    GeneratorConfig cfg;
    cfg.flavor = DatasetFlavor::exclusive_families;
    cfg.families = {
        {"color", {"gray", "red", "blue", "green", "brown", "purple", "cyan", "yellow"}},
        {"shape", {"cube", "sphere", "cylinder"}},
        {"material", {"rubber", "metal"}},
        {"size", {"large", "small"}},
    };
    return cfg;
}

GeneratorConfig GeneratorConfig::coco_style() {
    GeneratorConfig cfg;
    cfg.flavor = DatasetFlavor::multi_attribute;
    cfg.attributes = {"soft",   "hard",   "shiny",  "dull",   "wet",    "dry",     "parked",
                      "moving", "open",   "closed", "old",    "new",    "striped", "spotted",
                      "smooth", "rough",  "cooked", "raw",    "clean",  "dirty"};
    cfg.categories = {"dog",  "cat",   "car",  "bus",   "chair", "table",
                      "bird", "horse", "bowl", "plate", "truck", "couch"};
    return cfg;
}

void GeneratorConfig::validate() const {
    if (flavor == DatasetFlavor::exclusive_families) {
        if (families.empty()) {
            throw std::invalid_argument("GeneratorConfig: exclusive mode needs at least one family");
        }
        for (const FamilySpec& f : families) {
            if (f.values.size() < 2) {
                throw std::invalid_argument("GeneratorConfig: family '" + f.name + "' needs >= 2 values");
            }
        }
        if (!categories.empty() || !attributes.empty()) {
            throw std::invalid_argument("GeneratorConfig: exclusive mode takes families only");
        }
    } else {
        if (attributes.empty() || categories.empty()) {
            throw std::invalid_argument("GeneratorConfig: multi-attribute mode needs attributes and categories");
        }
        if (!families.empty()) {
            throw std::invalid_argument("GeneratorConfig: multi-attribute mode takes no multi-value families");
        }
        if (!(attr_bernoulli_p >= 0.0 && attr_bernoulli_p <= 1.0)) {
            throw std::invalid_argument("GeneratorConfig: attr_bernoulli_p outside [0, 1]");
        }
    }
    if (min_objects < 1 || max_objects < min_objects) {
        throw std::invalid_argument("GeneratorConfig: bad object count range");
    }
    if (scenes < 1 || feat_dim < 1) {
        throw std::invalid_argument("GeneratorConfig: scenes and feat_dim must be positive");
    }
    if (noise_sigma < 0.0) {
        throw std::invalid_argument("GeneratorConfig: noise_sigma must be >= 0");
    }
}

namespace {

std::vector<std::string> all_values(const GeneratorConfig& config) {
    std::vector<std::string> out;
    if (config.flavor == DatasetFlavor::exclusive_families) {
        for (const FamilySpec& f : config.families) {
            out.insert(out.end(), f.values.begin(), f.values.end());
        }
    } else {
        out.insert(out.end(), config.attributes.begin(), config.attributes.end());
        out.insert(out.end(), config.categories.begin(), config.categories.end());
    }
    return out;
}

}  // namespace

Codebook Codebook::build(const GeneratorConfig& config) {
    config.validate();
    Codebook cb;
    cb.feat_dim = config.feat_dim;
    Rng rng = Rng::substream(config.seed, "codebook");
    for (const std::string& value : all_values(config)) {
        std::vector<double> vec(static_cast<std::size_t>(config.feat_dim));
        for (double& x : vec) {
            x = rng.gauss();
        }
        cb.vectors.emplace(value, std::move(vec));
    }
    // distinct by construction; duplicated names would be a config bug
    if (cb.vectors.size() != all_values(config).size()) {
        throw std::invalid_argument("Codebook: duplicate value names in config");
    }
    return cb;
}

const std::vector<double>& Codebook::at(const std::string& value) const {
    auto it = vectors.find(value);
    if (it == vectors.end()) {
        throw std::invalid_argument("Codebook: no codeword for value '" + value + "'");
    }
    return it->second;
}

Scene generate_scene(const GeneratorConfig& config, Rng& rng, int scene_id) {
    Scene scene;
    scene.id = scene_id;
    const int target = static_cast<int>(rng.uniform_int(config.min_objects, config.max_objects));
    for (int i = 0; i < target; ++i) {
        SceneObject obj;
        obj.id = i;
        if (config.flavor == DatasetFlavor::exclusive_families) {
            for (const FamilySpec& f : config.families) {
                obj.labels.push_back(f.values[static_cast<std::size_t>(
                    rng.uniform_int(0, static_cast<std::int64_t>(f.values.size()) - 1))]);
            }
        } else {
            for (const std::string& attr : config.attributes) {
                if (rng.uniform() < config.attr_bernoulli_p) {
                    obj.labels.push_back(attr);
                }
            }
            obj.labels.push_back(config.categories[static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(config.categories.size()) - 1))]);
        }

        bool placed = false;
        for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
            const std::array<double, 2> c{rng.uniform(), rng.uniform()};
            placed = true;
            for (const SceneObject& other : scene.objects) {
                const double dx = c[0] - other.coords[0];
                const double dy = c[1] - other.coords[1];
                if (std::sqrt(dx * dx + dy * dy) < config.min_distance) {
                    placed = false;
                    break;
                }
            }
            if (placed) {
                obj.coords = c;
            }
        }
        if (!placed) {
            std::cerr << "generate_scene: placement rejection exhausted, scene " << scene_id
                      << " shrunk to " << scene.objects.size() << " objects\n";
            break;
        }
        scene.objects.push_back(std::move(obj));
    }
    return scene;
}

std::vector<double> render_features(const SceneObject& object, const Codebook& codebook,
                                    double sigma, Rng& rng) {
    std::vector<double> out(static_cast<std::size_t>(codebook.feat_dim), 0.0);
    for (const std::string& label : object.labels) {
        const auto& code = codebook.at(label);
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] += code[i];
        }
    }
    if (sigma > 0.0) {
        for (double& x : out) {
            x += rng.gauss(0.0, sigma);
        }
    }
    return out;
}

std::string describe(const SceneObject& object, const GeneratorConfig& config, Rng& rng) {
    std::vector<std::string> leading;
    std::string last;
    if (config.flavor == DatasetFlavor::exclusive_families) {
        for (std::size_t f = 0; f < config.families.size(); ++f) {
            if (config.families[f].name == "shape") {
                last = object.labels[f];
            } else {
                leading.push_back(object.labels[f]);
            }
        }
        if (last.empty() && !leading.empty()) {  // no shape family declared
            last = leading.back();
            leading.pop_back();
        }
    } else {
        leading.assign(object.labels.begin(), object.labels.end() - 1);
        last = object.labels.back();  // category
    }
    rng.shuffle(leading);

    std::string out = "There is a ";
    for (std::size_t i = 0; i < leading.size(); ++i) {
        out += leading[i];
        out += (i + 1 < leading.size()) ? ", " : " ";
    }
    out += last;
    return out;
}

std::vector<Scene> generate_scenes(const GeneratorConfig& config, const Codebook& codebook) {
    config.validate();
    std::vector<Scene> scenes;
    scenes.reserve(static_cast<std::size_t>(config.scenes));
    for (int s = 0; s < config.scenes; ++s) {
        Rng rng = Rng::substream(config.seed, "scene", static_cast<std::uint64_t>(s));
        Scene scene = generate_scene(config, rng, s);
        for (SceneObject& obj : scene.objects) {
            obj.features = render_features(obj, codebook, config.noise_sigma, rng);
            obj.sentence = describe(obj, config, rng);
        }
        scenes.push_back(std::move(scene));
    }
    return scenes;
}

Dataset to_dataset(const std::vector<Scene>& scenes, const GeneratorConfig& config) {
    Dataset ds;
    ds.header.dim_features = config.feat_dim;
    if (config.flavor == DatasetFlavor::exclusive_families) {
        for (const FamilySpec& f : config.families) {
            ds.header.families.emplace_back(f.name, f.values);
        }
    } else {
        for (const std::string& attr : config.attributes) {
            ds.header.families.emplace_back(attr, std::vector<std::string>{attr});
        }
        ds.header.categories = config.categories;
    }

    std::int64_t next_id = 0;
    for (const Scene& scene : scenes) {
        for (const SceneObject& obj : scene.objects) {
            RawRecord rec;
            rec.id = next_id++;
            rec.concepts = obj.labels;
            rec.vision = obj.features;
            rec.text = obj.sentence;
            rec.coords = obj.coords;
            ds.records.push_back(std::move(rec));
        }
    }
    return ds;
}

void export_dataset(const std::vector<Scene>& scenes, const GeneratorConfig& config,
                    const std::string& path) {
    save_dataset(to_dataset(scenes, config), path);
}

}  // namespace cbox
