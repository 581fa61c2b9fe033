#include "cbox/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "CLI11.hpp"
#include "json.hpp"

#include "cbox/datagen.hpp"
#include "cbox/encoder.hpp"
#include "cbox/metrics.hpp"
#include "cbox/multimodal.hpp"
#include "cbox/space.hpp"
#include "cbox/trainer.hpp"
#include "cbox/vqa.hpp"

namespace cbox::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Resolved run context shared by every subcommand: out-dir handling plus the
// manifest of resolved options and input digests.
struct RunContext {
    std::string command;
    fs::path out_dir = ".";
    std::uint64_t seed = 0;
    int threads = 1;
    json options = json::object();
    json inputs = json::object();
    std::vector<std::string> outputs;

    fs::path out(const std::string& name) const { return out_dir / name; }

    void note_input(const std::string& path) { inputs[path] = digest_file(path); }

    void write_manifest() {
        fs::create_directories(out_dir);
        json manifest;
        manifest["format_version"] = 1;
        manifest["command"] = command;
        manifest["seed"] = seed;
        manifest["threads"] = threads;
        manifest["out_dir"] = out_dir.string();
        manifest["options"] = options;
        manifest["inputs"] = inputs;
        manifest["outputs"] = outputs;
        std::ofstream out_file(out("manifest.json"));
        if (!out_file) {
            throw std::runtime_error("cannot write manifest under '" + out_dir.string() + "'");
        }
        out_file << manifest.dump(2) << "\n";
    }
};

void write_json(const json& j, const fs::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    }
    out << j.dump(2) << "\n";
    if (!out) {
        throw std::runtime_error("write failed for '" + path.string() + "'");
    }
}

struct LoadedDataset {
    Dataset dataset;
    Vocabulary vocab;
    std::vector<AnnotatedSample> samples;
};

LoadedDataset load_and_resolve(const std::string& path) {
    LoadedDataset out;
    out.dataset = load_dataset(path);
    out.vocab = build_vocabulary(out.dataset);
    out.samples = resolve_samples(out.dataset, out.vocab);
    return out;
}

// Resolve a dataset against an existing space's vocabulary so ids line up.
std::vector<AnnotatedSample> resolve_against(const Dataset& dataset, const Vocabulary& vocab) {
    return resolve_samples(dataset, vocab);
}

// key=value generator config files
void apply_config_file(GeneratorConfig& cfg, std::string& mode, const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open generator config '" + path + "'");
    }
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw FormatError(path + ":" + std::to_string(line_no) + ": expected key=value");
        }
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        try {
            if (key == "mode") mode = value;
            else if (key == "scenes") cfg.scenes = std::stoi(value);
            else if (key == "min_objects") cfg.min_objects = std::stoi(value);
            else if (key == "max_objects") cfg.max_objects = std::stoi(value);
            else if (key == "feat_dim") cfg.feat_dim = std::stoi(value);
            else if (key == "noise_sigma") cfg.noise_sigma = std::stod(value);
            else if (key == "min_distance") cfg.min_distance = std::stod(value);
            else if (key == "attr_bernoulli_p") cfg.attr_bernoulli_p = std::stod(value);
            else if (key == "seed") cfg.seed = std::stoull(value);
            else throw FormatError(path + ":" + std::to_string(line_no) + ": unknown key '" + key + "'");
        } catch (const FormatError&) {
            throw;
        } catch (const std::exception&) {
            throw FormatError(path + ":" + std::to_string(line_no) + ": bad value for '" + key + "'");
        }
    }
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_datagen(RunContext& ctx, const std::string& mode, int scenes, int val_scenes,
                const GeneratorConfig& base) {
    GeneratorConfig cfg = mode == "coco" ? GeneratorConfig::coco_style() : GeneratorConfig::clevr();
    cfg.scenes = scenes + val_scenes;
    cfg.min_objects = base.min_objects;
    cfg.max_objects = base.max_objects;
    cfg.feat_dim = base.feat_dim;
    cfg.noise_sigma = base.noise_sigma;
    cfg.min_distance = base.min_distance;
    cfg.attr_bernoulli_p = base.attr_bernoulli_p;
    cfg.seed = ctx.seed;
    cfg.validate();

    const Codebook cb = Codebook::build(cfg);
    const auto all = generate_scenes(cfg, cb);
    const std::vector<Scene> train(all.begin(), all.begin() + scenes);
    const std::vector<Scene> val(all.begin() + scenes, all.end());

    fs::create_directories(ctx.out_dir);
    export_dataset(train, cfg, ctx.out("dataset.jsonl").string());
    ctx.outputs.push_back("dataset.jsonl");
    std::size_t n_objects = 0;
    for (const Scene& s : train) n_objects += s.objects.size();
    if (!val.empty()) {
        export_dataset(val, cfg, ctx.out("val.jsonl").string());
        ctx.outputs.push_back("val.jsonl");
    }
    std::cout << "datagen: wrote " << train.size() << " scenes (" << n_objects << " objects)"
              << (val.empty() ? "" : " plus a validation split") << " under " << ctx.out_dir << "\n";
    return 0;
}

int cmd_fit(RunContext& ctx, const std::string& data_path, const std::string& pairs_path,
            KnowledgeSpaceConfig kcfg, ConceptTrainConfig cfg) {
    cfg.seed = ctx.seed;
    fs::create_directories(ctx.out_dir);
    MetricsWriter metrics(ctx.out("metrics.jsonl").string());
    ctx.outputs.push_back("metrics.jsonl");

    FitResult result;
    if (!pairs_path.empty()) {
        ctx.note_input(pairs_path);
        const PairFile file = load_pair_file(pairs_path);
        const Vocabulary vocab = build_vocabulary(file);
        const PairTable table = resolve_pairs(file, vocab);
        result = fit_concept_space(table, vocab, kcfg, cfg, &metrics);
    } else {
        ctx.note_input(data_path);
        const LoadedDataset data = load_and_resolve(data_path);
        const auto stats = extract_stats(data.samples, data.vocab);
        result = fit_concept_space(data.samples, data.vocab, stats, kcfg, cfg, &metrics);
    }

    save_space(result.space, ctx.out("space.json").string());
    ctx.outputs.push_back("space.json");

    json report;
    report["epoch_mean_loss"] = result.report.epoch_mean_loss;
    report["final_dkl"] = result.report.final_dkl;
    report["max_abs_error"] = result.report.max_abs_error;
    report["baseline_dkl"] = result.report.baseline_dkl;
    report["skipped_pairs"] = result.report.skipped_pairs;
    report["wall_time_s"] = result.report.wall_time_s;
    write_json(report, ctx.out("report.json"));
    ctx.outputs.push_back("report.json");

    std::cout << "fit: final_dkl=" << result.report.final_dkl
              << " max_abs_error=" << result.report.max_abs_error
              << " baseline_dkl=" << result.report.baseline_dkl << "\n";
    return 0;
}

int cmd_probe(RunContext& ctx, const std::string& space_path, const std::string& data_path,
              const std::vector<std::string>& pair_args, const std::string& family,
              const std::string& given, bool normalize) {
    ctx.note_input(space_path);
    const ConceptSpace space = load_space(space_path);

    std::optional<GroundTruthStats> stats;
    if (!data_path.empty()) {
        ctx.note_input(data_path);
        const Dataset ds = load_dataset(data_path);
        stats = extract_stats(resolve_against(ds, space.vocab), space.vocab);
    }

    std::vector<std::pair<std::string, std::string>> pairs;
    for (const std::string& arg : pair_args) {
        const auto comma = arg.find(',');
        if (comma == std::string::npos) {
            throw std::invalid_argument("--pair expects 'concept1,concept2', got '" + arg + "'");
        }
        pairs.emplace_back(arg.substr(0, comma), arg.substr(comma + 1));
    }
    if (!family.empty() || !given.empty()) {
        if (family.empty() || given.empty()) {
            throw std::invalid_argument("--family and --given must be used together");
        }
        const auto fam = space.vocab.find_family(family);
        if (!fam) {
            throw std::invalid_argument("unknown family: '" + family + "'");
        }
        for (const int y : space.vocab.family_members(*fam)) {
            pairs.emplace_back(space.vocab.concept_at(y).name, given);
        }
    }
    if (pairs.empty()) {
        throw std::invalid_argument("probe: nothing to query (use --pair or --family/--given)");
    }

    const auto rows = probe(space, pairs, normalize, stats ? &*stats : nullptr);
    json jrows = json::array();
    for (const ProbeRow& row : rows) {
        std::cout << "P(" << row.name1 << " | " << row.name2 << ") predicted=" << row.predicted;
        json jr{{"concept1", row.name1}, {"concept2", row.name2}, {"predicted", row.predicted}};
        if (row.target) {
            std::cout << " target=" << *row.target;
            jr["target"] = *row.target;
        }
        std::cout << "\n";
        jrows.push_back(std::move(jr));
    }
    fs::create_directories(ctx.out_dir);
    write_json(jrows, ctx.out("probe.json"));
    ctx.outputs.push_back("probe.json");
    return 0;
}

int cmd_train_proj(RunContext& ctx, const std::string& data_path, const std::string& val_path,
                   const std::string& space_path, const std::string& modality_name, int embed_dim,
                   ProjectionTrainConfig cfg, double holdout, bool calibrate) {
    cfg.seed = ctx.seed;
    ctx.note_input(data_path);
    ctx.note_input(space_path);
    const ConceptSpace space = load_space(space_path);
    const Dataset ds = load_dataset(data_path);
    auto samples = resolve_against(ds, space.vocab);

    std::vector<AnnotatedSample> val;
    if (!val_path.empty()) {
        ctx.note_input(val_path);
        val = resolve_against(load_dataset(val_path), space.vocab);
    } else if (holdout > 0.0) {
        const auto cut = static_cast<std::size_t>(static_cast<double>(samples.size()) * (1.0 - holdout));
        val.assign(samples.begin() + static_cast<std::ptrdiff_t>(cut), samples.end());
        samples.resize(cut);
    }

    const Modality modality = modality_from_string(modality_name);
    Rng init_rng = Rng::substream(ctx.seed, "encoder-init");
    FeatureEncoder enc;
    if (modality == Modality::vision) {
        enc = FeatureEncoder::init(Modality::vision, ds.header.dim_features, embed_dim, space.config.dim,
                                   init_rng);
    } else {
        const TokenTable table = TokenTable::build(samples);
        enc = FeatureEncoder::init(Modality::text, table.size(), embed_dim, space.config.dim, init_rng);
        enc.tokens = table.tokens;
    }

    fs::create_directories(ctx.out_dir);
    MetricsWriter metrics(ctx.out("metrics.jsonl").string());
    ctx.outputs.push_back("metrics.jsonl");
    train_projection(samples, space, enc, cfg, val, &metrics);

    const std::string enc_name = modality_name + "_encoder.json";
    save_encoder(enc, ctx.out(enc_name).string());
    ctx.outputs.push_back(enc_name);

    json report;
    if (!val.empty()) {
        ThresholdTable thresholds;
        const ThresholdTable* tptr = nullptr;
        if (calibrate) {
            thresholds = calibrate_thresholds(val, space, enc);
            json jt = json::object();
            for (const auto& [id, t] : thresholds.by_concept) {
                jt[space.vocab.concept_at(id).name] = t;
            }
            write_json(jt, ctx.out("thresholds.json"));
            ctx.outputs.push_back("thresholds.json");
            tptr = &thresholds;
        }
        const auto eval = evaluate_projection(val, space, enc, PredictionRule::per_family_argmax, tptr);
        report["attr_accuracy"] = eval.attr_accuracy;
        report["cat_accuracy"] = eval.cat_accuracy;
        if (tptr != nullptr) report["attr_f1"] = eval.attr_f1;
        report["eval_samples"] = eval.samples;
        std::cout << "train-proj: attr_accuracy=" << eval.attr_accuracy
                  << " cat_accuracy=" << eval.cat_accuracy;
        if (tptr != nullptr) std::cout << " attr_f1=" << eval.attr_f1;
        std::cout << "\n";
    } else {
        std::cout << "train-proj: trained on " << samples.size() << " samples (no eval split)\n";
    }
    write_json(report, ctx.out("eval.json"));
    ctx.outputs.push_back("eval.json");
    return 0;
}

int cmd_joint_train(RunContext& ctx, const std::string& data_path, const std::string& space_path,
                    const std::string& vision_path, const std::string& text_path,
                    JointTrainConfig cfg, double holdout) {
    cfg.seed = ctx.seed;
    ctx.note_input(data_path);
    ctx.note_input(space_path);
    ctx.note_input(vision_path);
    ctx.note_input(text_path);

    ConceptSpace space = load_space(space_path);
    FeatureEncoder vision_enc = load_encoder(vision_path);
    FeatureEncoder text_enc = load_encoder(text_path);
    const Dataset ds = load_dataset(data_path);
    auto samples = resolve_against(ds, space.vocab);
    const auto stats = extract_stats(samples, space.vocab);

    std::vector<AnnotatedSample> eval_split;
    if (holdout > 0.0) {
        const auto cut = static_cast<std::size_t>(static_cast<double>(samples.size()) * (1.0 - holdout));
        eval_split.assign(samples.begin() + static_cast<std::ptrdiff_t>(cut), samples.end());
        samples.resize(cut);
    }

    fs::create_directories(ctx.out_dir);
    MetricsWriter curve(ctx.out("curve.jsonl").string());
    ctx.outputs.push_back("curve.jsonl");
    const auto result = joint_train(samples, vision_enc, text_enc, space, stats, cfg, eval_split, &curve);

    save_encoder(vision_enc, ctx.out("vision_encoder.json").string());
    save_encoder(text_enc, ctx.out("text_encoder.json").string());
    ctx.outputs.push_back("vision_encoder.json");
    ctx.outputs.push_back("text_encoder.json");
    if (cfg.beta > 0.0) {
        save_space(space, ctx.out("space.json").string());
        ctx.outputs.push_back("space.json");
    }

    std::cout << "joint-train: steps=" << cfg.steps;
    if (!result.cross_entailment_curve.empty()) {
        std::cout << " final_mean_cross_entailment=" << result.cross_entailment_curve.back();
    }
    std::cout << "\n";
    return 0;
}

int cmd_eval_itm(RunContext& ctx, const std::string& data_path, const std::string& space_path,
                 const std::string& vision_path, const std::string& text_path, const std::string& mode,
                 double fraction, double threshold) {
    ctx.note_input(data_path);
    ctx.note_input(space_path);
    ctx.note_input(vision_path);
    ctx.note_input(text_path);

    const ConceptSpace space = load_space(space_path);
    const FeatureEncoder vision_enc = load_encoder(vision_path);
    const FeatureEncoder text_enc = load_encoder(text_path);
    const Dataset ds = load_dataset(data_path);
    const auto samples = resolve_against(ds, space.vocab);

    Rng rng = Rng::substream(ctx.seed, "itm-pairs");
    const auto pairs = make_itm_pairs(samples, itm_swap_mode_from_string(mode), fraction, rng,
                                      space.vocab, config_from_header(ds.header));
    const ItmReport report =
        evaluate_itm(pairs, vision_enc, text_enc, space, mode, threshold, ctx.threads);

    json j{{"mode", report.mode},
           {"accuracy", report.accuracy},
           {"threshold", report.threshold},
           {"n_pos", report.n_pos},
           {"n_neg", report.n_neg}};
    fs::create_directories(ctx.out_dir);
    write_json(j, ctx.out("itm_report.json"));
    ctx.outputs.push_back("itm_report.json");
    std::cout << "eval-itm: mode=" << report.mode << " accuracy=" << report.accuracy
              << " threshold=" << report.threshold << " n_pos=" << report.n_pos
              << " n_neg=" << report.n_neg << "\n";
    return 0;
}

int cmd_eval_vqa(RunContext& ctx, const std::string& space_path, const std::string& vision_path,
                 const std::string& mode_name, std::uint64_t gen_seed, int scene_offset, int scenes,
                 int questions, int feat_dim, const std::string& programs_path, bool write_programs) {
    ctx.note_input(space_path);
    const ConceptSpace space = load_space(space_path);
    const ExecMode mode = exec_mode_from_string(mode_name);

    FeatureEncoder enc;
    if (mode == ExecMode::projected) {
        if (vision_path.empty()) {
            throw std::invalid_argument("eval-vqa: projected mode needs --vision-enc");
        }
        ctx.note_input(vision_path);
        enc = load_encoder(vision_path);
    }

    GeneratorConfig gen = GeneratorConfig::clevr();
    gen.seed = gen_seed;
    gen.feat_dim = mode == ExecMode::projected ? enc.feat_dim : feat_dim;
    const Codebook cb = Codebook::build(gen);

    std::vector<Program> external;
    if (!programs_path.empty()) {
        ctx.note_input(programs_path);
        external = load_programs(programs_path);
    }

    std::int64_t correct = 0;
    std::int64_t total = 0;
    std::vector<Program> emitted;
    for (int s = 0; s < scenes; ++s) {
        Rng scene_rng = Rng::substream(gen.seed, "scene", static_cast<std::uint64_t>(scene_offset + s));
        Scene scene = generate_scene(gen, scene_rng, scene_offset + s);
        for (SceneObject& obj : scene.objects) {
            obj.features = render_features(obj, cb, gen.noise_sigma, scene_rng);
            obj.sentence = describe(obj, gen, scene_rng);
        }

        std::vector<Program> programs;
        if (!external.empty()) {
            // rows are scene-major with a fixed question count per scene
            const std::size_t lo = static_cast<std::size_t>(s) * static_cast<std::size_t>(questions);
            const std::size_t hi =
                std::min(external.size(), lo + static_cast<std::size_t>(questions));
            programs.assign(external.begin() + static_cast<std::ptrdiff_t>(lo),
                            external.begin() + static_cast<std::ptrdiff_t>(hi));
        } else {
            Rng qrng = Rng::substream(ctx.seed, "questions", static_cast<std::uint64_t>(s));
            programs = generate_questions(scene, space.vocab, qrng, questions);
        }

        const auto objects =
            mode == ExecMode::projected ? project_scene(scene, enc, space) : oracle_scene(scene);
        for (const Program& p : programs) {
            // a runtime failure from mispredicted attributes (unique over the
            // wrong object count) scores as an incorrect answer
            try {
                const std::string got = execute(p, objects, space, mode);
                correct += (got == p.answer) ? 1 : 0;
            } catch (const ExecutionError&) {
            }
            ++total;
        }
        if (write_programs) {
            emitted.insert(emitted.end(), programs.begin(), programs.end());
        }
    }

    if (write_programs) {
        fs::create_directories(ctx.out_dir);
        save_programs(emitted, ctx.out("programs.jsonl").string());
        ctx.outputs.push_back("programs.jsonl");
    }

    const double exact_match = total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
    json j{{"mode", mode_name}, {"exact_match", exact_match}, {"n", total}};
    fs::create_directories(ctx.out_dir);
    write_json(j, ctx.out("vqa_report.json"));
    ctx.outputs.push_back("vqa_report.json");
    std::cout << "eval-vqa: mode=" << mode_name << " exact_match=" << exact_match << " n=" << total
              << "\n";
    return 0;
}

int cmd_ablate(RunContext& ctx, const std::string& data_path, const std::string& val_path,
               const std::string& space_path, AblationConfig cfg, int n_seeds) {
    ctx.note_input(data_path);
    ctx.note_input(space_path);
    const ConceptSpace pretrained = load_space(space_path);
    const Dataset ds = load_dataset(data_path);
    const auto samples = resolve_against(ds, pretrained.vocab);
    const auto stats = extract_stats(samples, pretrained.vocab);

    std::vector<AnnotatedSample> train = samples;
    std::vector<AnnotatedSample> val;
    if (!val_path.empty()) {
        ctx.note_input(val_path);
        val = resolve_against(load_dataset(val_path), pretrained.vocab);
    } else {
        const auto cut = static_cast<std::size_t>(static_cast<double>(samples.size()) * 0.9);
        val.assign(train.begin() + static_cast<std::ptrdiff_t>(cut), train.end());
        train.resize(cut);
    }

    cfg.kspace = pretrained.config;
    fs::create_directories(ctx.out_dir);
    MetricsWriter curves(ctx.out("curves.jsonl").string());
    ctx.outputs.push_back("curves.jsonl");

    std::vector<double> ratios;
    json per_seed = json::array();
    for (int k = 0; k < n_seeds; ++k) {
        AblationConfig run_cfg = cfg;
        run_cfg.proj.seed = ctx.seed + static_cast<std::uint64_t>(k);
        run_cfg.space_seed = ctx.seed + static_cast<std::uint64_t>(k) + 1000;
        const auto result = ablation_run(train, val, pretrained.vocab, stats, pretrained, run_cfg,
                                         &curves);
        const int total = static_cast<int>(result.arm_a_accuracy.size());
        const int a = result.steps_to_target_a > 0 ? result.steps_to_target_a : total + 1;
        const int b = result.steps_to_target_b > 0 ? result.steps_to_target_b : total + 1;
        ratios.push_back(static_cast<double>(a) / static_cast<double>(b));
        per_seed.push_back({{"seed", run_cfg.proj.seed},
                            {"steps_to_target_pretrained", result.steps_to_target_a},
                            {"steps_to_target_joint", result.steps_to_target_b}});
    }
    std::sort(ratios.begin(), ratios.end());
    const double median = ratios[ratios.size() / 2];

    json j{{"target_accuracy", cfg.target_accuracy}, {"median_ratio", median}, {"runs", per_seed}};
    write_json(j, ctx.out("ablation.json"));
    ctx.outputs.push_back("ablation.json");
    std::cout << "ablate: median steps-to-target ratio (pretrained/joint) = " << median << " over "
              << n_seeds << " seeds\n";
    return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"concept-space box embeddings: fitting, projection, matching, VQA"};
    app.require_subcommand(1);

    RunContext ctx;
    std::string out_dir = ".";
    app.add_option("--seed", ctx.seed, "root seed for all named substreams")->capture_default_str();
    app.add_option("--out-dir", out_dir, "directory for artifacts and the manifest")
        ->capture_default_str();
    app.add_option("--threads", ctx.threads, "parallelism for evaluation paths only")
        ->capture_default_str();

    // datagen
    auto* datagen = app.add_subcommand("datagen", "generate a synthetic dataset");
    std::string dg_mode = "clevr";
    int dg_scenes = 100;
    int dg_val_scenes = 0;
    std::string dg_config_file;
    GeneratorConfig dg_base = GeneratorConfig::clevr();
    datagen->add_option("--mode", dg_mode, "clevr or coco")->check(CLI::IsMember({"clevr", "coco"}));
    datagen->add_option("--scenes", dg_scenes, "training scenes");
    datagen->add_option("--val-scenes", dg_val_scenes, "validation scenes");
    datagen->add_option("--objects-min", dg_base.min_objects, "min objects per scene");
    datagen->add_option("--objects-max", dg_base.max_objects, "max objects per scene");
    datagen->add_option("--feat-dim", dg_base.feat_dim, "vision feature dimension");
    datagen->add_option("--noise", dg_base.noise_sigma, "feature noise sigma");
    datagen->add_option("--bernoulli-p", dg_base.attr_bernoulli_p, "multi-attribute Bernoulli rate");
    datagen->add_option("--config", dg_config_file, "key=value generator config file");

    // fit
    auto* fit = app.add_subcommand("fit", "fit a concept space");
    std::string fit_data, fit_pairs;
    KnowledgeSpaceConfig fit_kcfg;
    ConceptTrainConfig fit_cfg;
    std::string fit_policy = "same_family";
    std::string fit_ordering = "both";
    fit->add_option("--data", fit_data, "dataset file");
    fit->add_option("--pairs", fit_pairs, "pair-probability file");
    fit->add_option("--dim", fit_kcfg.dim, "knowledge-space dimension")->capture_default_str();
    fit->add_option("--eps", fit_kcfg.prob_clamp_eps, "probability clamp")->capture_default_str();
    fit->add_option("--epochs", fit_cfg.epochs)->capture_default_str();
    fit->add_option("--batch", fit_cfg.batch)->capture_default_str();
    fit->add_option("--lr", fit_cfg.lr)->capture_default_str();
    fit->add_option("--weight-decay", fit_cfg.weight_decay)->capture_default_str();
    fit->add_option("--neg-policy", fit_policy, "same_family or uniform")
        ->check(CLI::IsMember({"same_family", "uniform"}));
    fit->add_option("--neg-k", fit_cfg.neg_k)->capture_default_str();
    fit->add_option("--ordering", fit_ordering, "both or canonical")
        ->check(CLI::IsMember({"both", "canonical"}));
    fit->add_option("--init-min-lo", fit_cfg.init_min_lo)->capture_default_str();
    fit->add_option("--init-min-hi", fit_cfg.init_min_hi)->capture_default_str();
    fit->add_option("--init-delta-lo", fit_cfg.init_delta_lo)->capture_default_str();
    fit->add_option("--init-delta-hi", fit_cfg.init_delta_hi)->capture_default_str();

    // probe
    auto* probe_cmd = app.add_subcommand("probe", "query entailments of a fitted space");
    std::string probe_space, probe_data, probe_family, probe_given;
    std::vector<std::string> probe_pairs;
    bool probe_normalize = false;
    probe_cmd->add_option("--space", probe_space, "concept-space file")->required();
    probe_cmd->add_option("--data", probe_data, "dataset for ground-truth targets");
    probe_cmd->add_option("--pair", probe_pairs, "concept1,concept2 (repeatable)");
    probe_cmd->add_option("--family", probe_family, "probe a whole family");
    probe_cmd->add_option("--given", probe_given, "conditioning concept for --family");
    probe_cmd->add_flag("--normalize", probe_normalize, "SoftMax within families");

    // train-proj
    auto* tp = app.add_subcommand("train-proj", "train a projection model");
    std::string tp_data, tp_val, tp_space, tp_modality = "vision";
    int tp_embed = 64;
    double tp_holdout = 0.1;
    bool tp_calibrate = false;
    ProjectionTrainConfig tp_cfg;
    tp->add_option("--data", tp_data)->required();
    tp->add_option("--val", tp_val, "validation dataset file");
    tp->add_option("--space", tp_space)->required();
    tp->add_option("--modality", tp_modality)->check(CLI::IsMember({"vision", "text"}));
    tp->add_option("--embed-dim", tp_embed)->capture_default_str();
    tp->add_option("--epochs", tp_cfg.epochs)->capture_default_str();
    tp->add_option("--batch", tp_cfg.batch)->capture_default_str();
    tp->add_option("--lr", tp_cfg.lr)->capture_default_str();
    tp->add_option("--pos-weight", tp_cfg.pos_weight)->capture_default_str();
    tp->add_option("--warmup-frac", tp_cfg.warmup_frac)->capture_default_str();
    tp->add_option("--decay-floor", tp_cfg.decay_floor)->capture_default_str();
    tp->add_option("--holdout", tp_holdout, "holdout fraction when --val absent")->capture_default_str();
    tp->add_flag("--calibrate", tp_calibrate, "calibrate per-attribute thresholds");

    // joint-train
    auto* jt = app.add_subcommand("joint-train", "cross-modality joint training");
    std::string jt_data, jt_space, jt_vision, jt_text;
    double jt_holdout = 0.1;
    JointTrainConfig jt_cfg;
    jt->add_option("--data", jt_data)->required();
    jt->add_option("--space", jt_space)->required();
    jt->add_option("--vision-enc", jt_vision)->required();
    jt->add_option("--text-enc", jt_text)->required();
    jt->add_option("--steps", jt_cfg.steps)->capture_default_str();
    jt->add_option("--batch", jt_cfg.batch)->capture_default_str();
    jt->add_option("--lr", jt_cfg.lr)->capture_default_str();
    jt->add_option("--beta", jt_cfg.beta)->capture_default_str();
    jt->add_option("--pos-weight", jt_cfg.pos_weight)->capture_default_str();
    jt->add_flag("--log-form", jt_cfg.log_form, "use the -log joint loss form");
    jt->add_option("--holdout", jt_holdout)->capture_default_str();

    // eval-itm
    auto* itm = app.add_subcommand("eval-itm", "image-text matching evaluation");
    std::string itm_data, itm_space, itm_vision, itm_text, itm_mode = "sentence_swap";
    double itm_fraction = 0.5;
    double itm_threshold = 0.5;
    itm->add_option("--data", itm_data)->required();
    itm->add_option("--space", itm_space)->required();
    itm->add_option("--vision-enc", itm_vision)->required();
    itm->add_option("--text-enc", itm_text)->required();
    itm->add_option("--mode", itm_mode)->check(CLI::IsMember({"sentence_swap", "attribute_swap"}));
    itm->add_option("--fraction", itm_fraction)->capture_default_str();
    itm->add_option("--threshold", itm_threshold)->capture_default_str();

    // eval-vqa
    auto* vqa = app.add_subcommand("eval-vqa", "symbolic VQA evaluation");
    std::string vqa_space, vqa_vision, vqa_mode = "projected", vqa_programs;
    std::uint64_t vqa_gen_seed = 0;
    int vqa_offset = 1000000;
    int vqa_scenes = 50;
    int vqa_questions = 20;
    int vqa_feat_dim = 64;
    bool vqa_write_programs = false;
    vqa->add_option("--space", vqa_space)->required();
    vqa->add_option("--vision-enc", vqa_vision, "needed in projected mode");
    vqa->add_option("--mode", vqa_mode)->check(CLI::IsMember({"projected", "oracle"}));
    vqa->add_option("--gen-seed", vqa_gen_seed, "datagen seed the encoder was trained against");
    vqa->add_option("--scene-offset", vqa_offset, "first scene index (fresh scenes)")
        ->capture_default_str();
    vqa->add_option("--scenes", vqa_scenes)->capture_default_str();
    vqa->add_option("--questions", vqa_questions, "questions per scene")->capture_default_str();
    vqa->add_option("--feat-dim", vqa_feat_dim, "feature dim for oracle mode")->capture_default_str();
    vqa->add_option("--programs", vqa_programs, "execute programs from a file");
    vqa->add_flag("--write-programs", vqa_write_programs, "write generated programs");

    // ablate
    auto* ab = app.add_subcommand("ablate", "pretrained vs joint-from-scratch comparison");
    std::string ab_data, ab_val, ab_space;
    int ab_seeds = 5;
    AblationConfig ab_cfg;
    ab->add_option("--data", ab_data)->required();
    ab->add_option("--val", ab_val);
    ab->add_option("--space", ab_space)->required();
    ab->add_option("--target-acc", ab_cfg.target_accuracy)->capture_default_str();
    ab->add_option("--seeds", ab_seeds, "number of paired runs")->capture_default_str();
    ab->add_option("--epochs", ab_cfg.proj.epochs)->capture_default_str();
    ab->add_option("--batch", ab_cfg.proj.batch)->capture_default_str();
    ab->add_option("--lr", ab_cfg.proj.lr)->capture_default_str();
    ab->add_option("--concept-lr", ab_cfg.concept_lr)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {  // --help
            return app.exit(e);
        }
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }

    ctx.out_dir = out_dir;
    try {
        if (datagen->parsed()) {
            ctx.command = "datagen";
            if (!dg_config_file.empty()) {
                ctx.note_input(dg_config_file);
                apply_config_file(dg_base, dg_mode, dg_config_file);
                if (dg_base.scenes != 100) dg_scenes = dg_base.scenes;
                if (dg_base.seed != 0) ctx.seed = dg_base.seed;
            }
            ctx.options = {{"mode", dg_mode},       {"scenes", dg_scenes},
                           {"val_scenes", dg_val_scenes}, {"objects_min", dg_base.min_objects},
                           {"objects_max", dg_base.max_objects}, {"feat_dim", dg_base.feat_dim},
                           {"noise_sigma", dg_base.noise_sigma}};
            const int code = cmd_datagen(ctx, dg_mode, dg_scenes, dg_val_scenes, dg_base);
            ctx.write_manifest();
            return code;
        }
        if (fit->parsed()) {
            ctx.command = "fit";
            if (fit_data.empty() == fit_pairs.empty()) {
                throw std::invalid_argument("fit: exactly one of --data or --pairs is required");
            }
            fit_cfg.neg_policy = negative_policy_from_string(fit_policy);
            fit_cfg.ordering = pair_ordering_from_string(fit_ordering);
            fit_kcfg.validate();
            fit_cfg.validate();
            ctx.options = {{"dim", fit_kcfg.dim},     {"eps", fit_kcfg.prob_clamp_eps},
                           {"epochs", fit_cfg.epochs}, {"batch", fit_cfg.batch},
                           {"lr", fit_cfg.lr},         {"weight_decay", fit_cfg.weight_decay},
                           {"neg_policy", fit_policy}, {"neg_k", fit_cfg.neg_k},
                           {"ordering", fit_ordering}};
            const int code = cmd_fit(ctx, fit_data, fit_pairs, fit_kcfg, fit_cfg);
            ctx.write_manifest();
            return code;
        }
        if (probe_cmd->parsed()) {
            ctx.command = "probe";
            ctx.options = {{"normalize", probe_normalize}};
            const int code = cmd_probe(ctx, probe_space, probe_data, probe_pairs, probe_family,
                                       probe_given, probe_normalize);
            ctx.write_manifest();
            return code;
        }
        if (tp->parsed()) {
            ctx.command = "train-proj";
            ctx.options = {{"modality", tp_modality}, {"embed_dim", tp_embed},
                           {"epochs", tp_cfg.epochs}, {"batch", tp_cfg.batch},
                           {"lr", tp_cfg.lr},         {"pos_weight", tp_cfg.pos_weight},
                           {"holdout", tp_holdout},   {"calibrate", tp_calibrate}};
            const int code = cmd_train_proj(ctx, tp_data, tp_val, tp_space, tp_modality, tp_embed,
                                            tp_cfg, tp_holdout, tp_calibrate);
            ctx.write_manifest();
            return code;
        }
        if (jt->parsed()) {
            ctx.command = "joint-train";
            ctx.options = {{"steps", jt_cfg.steps}, {"batch", jt_cfg.batch},   {"lr", jt_cfg.lr},
                           {"beta", jt_cfg.beta},   {"holdout", jt_holdout},   {"log_form", jt_cfg.log_form}};
            const int code =
                cmd_joint_train(ctx, jt_data, jt_space, jt_vision, jt_text, jt_cfg, jt_holdout);
            ctx.write_manifest();
            return code;
        }
        if (itm->parsed()) {
            ctx.command = "eval-itm";
            ctx.options = {{"mode", itm_mode}, {"fraction", itm_fraction}, {"threshold", itm_threshold}};
            const int code = cmd_eval_itm(ctx, itm_data, itm_space, itm_vision, itm_text, itm_mode,
                                          itm_fraction, itm_threshold);
            ctx.write_manifest();
            return code;
        }
        if (vqa->parsed()) {
            ctx.command = "eval-vqa";
            ctx.options = {{"mode", vqa_mode},           {"gen_seed", vqa_gen_seed},
                           {"scene_offset", vqa_offset}, {"scenes", vqa_scenes},
                           {"questions", vqa_questions}};
            const int code = cmd_eval_vqa(ctx, vqa_space, vqa_vision, vqa_mode, vqa_gen_seed,
                                          vqa_offset, vqa_scenes, vqa_questions, vqa_feat_dim,
                                          vqa_programs, vqa_write_programs);
            ctx.write_manifest();
            return code;
        }
        if (ab->parsed()) {
            ctx.command = "ablate";
            ctx.options = {{"target_accuracy", ab_cfg.target_accuracy}, {"seeds", ab_seeds},
                           {"epochs", ab_cfg.proj.epochs},              {"batch", ab_cfg.proj.batch},
                           {"lr", ab_cfg.proj.lr},                      {"concept_lr", ab_cfg.concept_lr}};
            const int code = cmd_ablate(ctx, ab_data, ab_val, ab_space, ab_cfg, ab_seeds);
            ctx.write_manifest();
            return code;
        }
        std::cerr << "error: no subcommand\n";
        return 1;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::domain_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "runtime failure: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace cbox::cli
