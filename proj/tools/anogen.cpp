#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "anogen/boxes/boxes.hpp"
#include "anogen/detector/detector.hpp"
#include "anogen/diffusion/backbone.hpp"
#include "anogen/embedding/embedding.hpp"
#include "anogen/errors.hpp"
#include "anogen/generation/generator.hpp"
#include "anogen/image_io.hpp"
#include "anogen/log.hpp"
#include "anogen/metrics/evaluate.hpp"
#include "anogen/pipeline/config.hpp"
#include "anogen/pipeline/dataset.hpp"
#include "anogen/pipeline/pipeline.hpp"
#include "anogen/pipeline/toy_world.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace anogen;

namespace {

struct Common {
    std::string config;
    std::string preset = "paper";
    std::optional<std::uint64_t> seed;
    std::string out;
    std::optional<double> tau;
    std::optional<int> k_shot;
    std::optional<int> n;
    std::optional<double> mix_prob;
    std::optional<int> steps;
    bool verbose = false;
};

void add_common(CLI::App* cmd, Common& c, bool overrides) {
    cmd->add_option("--config", c.config, "Pipeline config (JSON)")->check(CLI::ExistingFile);
    cmd->add_option("--preset", c.preset, "Defaults when no config is given")
        ->check(CLI::IsMember({"paper", "toy"}));
    cmd->add_option("--seed", c.seed, "Root seed");
    cmd->add_option("--out", c.out, "Output path");
    cmd->add_flag("-v,--verbose", c.verbose, "Debug logging");
    if (overrides) {
        cmd->add_option("--tau", c.tau, "Confidence threshold");
        cmd->add_option("--k-shot", c.k_shot, "Support anomalies per type");
        cmd->add_option("--n", c.n, "Generated images per normal image");
        cmd->add_option("--mix-prob", c.mix_prob, "Probability of drawing a generated anomaly");
        cmd->add_option("--steps", c.steps, "Iterations / sampling steps of the subcommand's stage");
    }
}

PipelineConfig base_config(const Common& c) {
    PipelineConfig cfg = c.config.empty() ? (c.preset == "toy" ? PipelineConfig::toy_preset() : PipelineConfig{})
                                          : load_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    if (c.tau) cfg.detector.loss.tau = *c.tau;
    if (c.k_shot) cfg.k_shot = *c.k_shot;
    if (c.n) apply_axis(cfg, AblationAxis::n_generated, *c.n);
    if (c.mix_prob) cfg.detector.loss.mix_probability = *c.mix_prob;
    if (c.verbose) log::set_level(log::Level::debug);
    return cfg;
}

void require_out(const Common& c) {
    if (c.out.empty()) throw ConfigurationError("--out is required");
}

std::vector<std::string> read_id_list(const std::string& path) {
    if (path.empty()) return {};
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path);
    json j;
    in >> j;
    return j.get<std::vector<std::string>>();
}

std::optional<std::int64_t> size_of(const PipelineConfig& cfg) {
    if (cfg.dataset.image_size > 0) return cfg.dataset.image_size;
    return std::nullopt;
}

CategoryBoxTable box_table(const PipelineConfig& cfg) {
    return cfg.box_table.empty() ? CategoryBoxTable::builtin() : CategoryBoxTable::from_file(cfg.box_table);
}

std::vector<double> parse_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream s(text);
    std::string item;
    while (std::getline(s, item, ',')) {
        if (!item.empty()) out.push_back(std::stod(item));
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Few-shot anomaly generation and weakly supervised detection"};
    app.require_subcommand(1);

    Common c;
    std::string dataset, category, anomaly_type, backbone_path, detector_path, generated_dir, exclude_file;
    std::vector<std::string> embedding_files;
    std::string image_path, textures_dir, axis = "tau", values = "1.0,0.95,0.9,0.8", seeds;
    int count = 10;

    auto* cfg_cmd = app.add_subcommand("config", "Write a full default config");
    add_common(cfg_cmd, c, true);

    auto* toy_cmd = app.add_subcommand("toy-world", "Export the procedural toy dataset (MVTec layout)");
    add_common(toy_cmd, c, false);

    auto* bb_cmd = app.add_subcommand("train-backbone", "Fit the desk-scale latent diffusion backbone");
    add_common(bb_cmd, c, true);

    auto* emb_cmd = app.add_subcommand("learn-embedding", "Stage 1: learn an anomaly embedding from k support images");
    add_common(emb_cmd, c, true);
    emb_cmd->add_option("--dataset", dataset, "Dataset root")->required();
    emb_cmd->add_option("--category", category, "Category")->required();
    emb_cmd->add_option("--type", anomaly_type, "Anomaly type")->required();
    emb_cmd->add_option("--backbone", backbone_path, "Backbone checkpoint")->required()->check(CLI::ExistingFile);

    auto* box_cmd = app.add_subcommand("sample-boxes", "Sample anomaly boxes on an image");
    add_common(box_cmd, c, false);
    box_cmd->add_option("--image", image_path, "Normal image")->required()->check(CLI::ExistingFile);
    box_cmd->add_option("--category", category, "Category")->required();
    box_cmd->add_option("--type", anomaly_type, "Anomaly type")->required();
    box_cmd->add_option("--count", count, "Number of boxes");

    auto* gen_cmd = app.add_subcommand("generate", "Stage 2: generate box-restricted anomalies");
    add_common(gen_cmd, c, true);
    gen_cmd->add_option("--dataset", dataset, "Dataset root")->required();
    gen_cmd->add_option("--category", category, "Category")->required();
    gen_cmd->add_option("--embedding", embedding_files, "Embedding JSON files")->required();
    gen_cmd->add_option("--backbone", backbone_path, "Backbone checkpoint")->required()->check(CLI::ExistingFile);

    auto* train_cmd = app.add_subcommand("train", "Stage 3: train the detector");
    add_common(train_cmd, c, true);
    train_cmd->add_option("--dataset", dataset, "Dataset root")->required();
    train_cmd->add_option("--category", category, "Category")->required();
    train_cmd->add_option("--generated", generated_dir, "Directory holding manifest.json from 'generate'");
    train_cmd->add_option("--textures", textures_dir, "Texture pool directory (default <dataset>/textures)");

    auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a detector on the test split");
    add_common(eval_cmd, c, false);
    eval_cmd->add_option("--dataset", dataset, "Dataset root")->required();
    eval_cmd->add_option("--category", category, "Category")->required();
    eval_cmd->add_option("--detector", detector_path, "Detector checkpoint")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--exclude", exclude_file, "JSON list of test ids to skip (support images)");

    auto* run_cmd = app.add_subcommand("run", "Run all stages and write a report");
    add_common(run_cmd, c, true);

    auto* ablate_cmd = app.add_subcommand("ablate", "Run the pipeline over one ablation axis");
    add_common(ablate_cmd, c, true);
    ablate_cmd->add_option("--axis", axis, "tau | k_shot | n_generated | mask_guided | anomaly_mix")
        ->check(CLI::IsMember({"tau", "k_shot", "n_generated", "mask_guided", "anomaly_mix"}));
    ablate_cmd->add_option("--values", values, "Comma-separated axis values");
    ablate_cmd->add_option("--seeds", seeds, "Comma-separated seeds (default: the config seed)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*cfg_cmd) {
            require_out(c);
            save_config(base_config(c), c.out);
        } else if (*toy_cmd) {
            require_out(c);
            auto cfg = base_config(c);
            auto world = make_toy_world(cfg.dataset.toy_seed.value_or(derive_seed(cfg.seed, "toy-world")),
                                        cfg.dataset.toy);
            export_toy_world(world, c.out);
            std::cout << "wrote toy world to " << c.out << '\n';
        } else if (*bb_cmd) {
            require_out(c);
            auto cfg = base_config(c);
            if (c.steps) cfg.backbone.train.steps = *c.steps;
            const auto seed = cfg.backbone.seed.value_or(derive_seed(cfg.seed, "backbone"));
            const auto size = cfg.dataset.image_size > 0 ? cfg.dataset.image_size : cfg.dataset.toy.image_size;
            HashConditionEncoder encoder(cfg.backbone.train.unet.cond_dim);
            auto corpus = make_backbone_corpus(derive_seed(seed, "corpus"), cfg.backbone.corpus_size, size);
            Rng rng(seed);
            auto trained = train_tiny_backbone(caption_corpus(corpus, encoder), cfg.backbone.train, rng);
            save_backbone(trained.backbone, c.out);
            std::cout << "held-out LDM loss " << trained.report.initial_heldout_loss << " -> "
                      << trained.report.final_heldout_loss << ", autoencoder mse " << trained.report.autoencoder_mse
                      << '\n';
        } else if (*emb_cmd) {
            require_out(c);
            auto cfg = base_config(c);
            if (c.steps) cfg.inversion.iterations = *c.steps;
            auto layout = load_dataset(dataset);
            Rng support_rng(derive_seed(cfg.seed, "support/" + category + "/" + anomaly_type));
            auto selection = select_support(layout, category, anomaly_type, cfg.k_shot, support_rng, size_of(cfg));
            auto backbone = load_backbone(backbone_path);
            HashConditionEncoder encoder(backbone.cond_dim());
            auto init = init_embedding(cfg.inversion.init_token, encoder, backbone.cond_dim());
            Rng rng(derive_seed(cfg.seed, "embedding/" + category + "/" + anomaly_type));
            auto result = learn_embedding(selection.support, backbone, init, cfg.inversion, rng);
            const fs::path out(c.out);
            save_embedding(result.embedding, out);
            write_loss_curve(fs::path(out).replace_extension(".loss.csv"), result.loss_curve);
            std::ofstream(fs::path(out).replace_extension(".support.json")) << json(selection.ids).dump() << '\n';
            std::cout << "embedding " << result.embedding.id() << ": probe loss " << result.initial_probe_loss
                      << " -> " << result.final_probe_loss << '\n';
        } else if (*box_cmd) {
            auto cfg = base_config(c);
            auto table = box_table(cfg);
            auto box_config = table.lookup(category, anomaly_type);
            auto image = read_image(image_path, size_of(cfg));
            auto fg = extract_foreground(image, box_config.foreground);
            Rng rng(derive_seed(cfg.seed, "boxes"));
            json boxes = json::array();
            for (int i = 0; i < count; ++i) boxes.push_back(sample_box(fg, box_config, rng));
            const auto text = json{{"image", image_path}, {"config", box_config}, {"boxes", boxes}}.dump(1);
            if (c.out.empty()) {
                std::cout << text << '\n';
            } else {
                std::ofstream(c.out) << text << '\n';
            }
        } else if (*gen_cmd) {
            require_out(c);
            auto cfg = base_config(c);
            if (c.steps) cfg.generation.steps = *c.steps;
            auto layout = load_dataset(dataset);
            auto backbone = load_backbone(backbone_path);
            std::map<std::string, AnomalyEmbedding> embeddings;
            std::vector<GenerationRequest> requests;
            for (const auto& f : embedding_files) {
                auto e = load_embedding(f);
                if (e.category != category) throw ConfigurationError(f + " belongs to category " + e.category);
                requests.push_back({e.category, e.anomaly_type});
                embeddings[e.category + "/" + e.anomaly_type] = e;
            }
            Rng rng(derive_seed(cfg.seed, "generation/" + category));
            auto manifest = generate_dataset(requests, {{category, load_train_images(layout, category, size_of(cfg))}},
                                             embeddings, box_table(cfg), backbone, cfg.generation, c.out, rng);
            for (const auto& [key, n] : manifest.counts) std::cout << key << ": " << n << " images\n";
            for (const auto& [key, e] : manifest.errors) std::cerr << key << ": " << e << '\n';
            if (!manifest.errors.empty()) return 1;
        } else if (*train_cmd) {
            require_out(c);
            auto cfg = base_config(c);
            if (c.steps) cfg.detector.steps = *c.steps;
            auto layout = load_dataset(dataset);
            auto normals = load_train_images(layout, category, size_of(cfg));
            DetectorTrainData data;
            for (const auto& n : normals) data.normals.push_back(n.image);
            const fs::path textures = textures_dir.empty() ? fs::path(dataset) / "textures" : fs::path(textures_dir);
            data.textures = load_textures(textures, size_of(cfg));
            if (!generated_dir.empty()) {
                auto manifest = read_manifest(fs::path(generated_dir) / "manifest.json");
                manifest.validate(generated_dir);
                std::map<std::string, torch::Tensor> by_id;
                for (const auto& n : normals) by_id[n.id] = n.image;
                for (const auto& r : manifest.records) {
                    if (r.category != category) continue;
                    data.generated.push_back({read_image(fs::path(generated_dir) / r.file), by_id.at(r.source_id), r.box});
                }
            } else {
                cfg.detector.loss.mix_probability = 0.0;
            }
            Rng rng(derive_seed(cfg.seed, "detector/" + category));
            auto result = train_detector(data, cfg.detector, rng);
            result.detector->save(c.out);
            write_train_log(fs::path(c.out).replace_extension(".log.csv"), result.log);
            std::cout << "saved detector to " << c.out << '\n';
        } else if (*eval_cmd) {
            auto cfg = base_config(c);
            auto layout = load_dataset(dataset);
            auto test = load_test_set(layout, category, size_of(cfg), read_id_list(exclude_file));
            auto detector = load_detector(detector_path);
            auto result = evaluate(*detector, test, cfg.curves);
            result.config_hash = config_hash(cfg);
            if (!c.out.empty()) write_eval_report(result, c.out);
            std::cout << json(result).dump(1) << '\n';
        } else if (*run_cmd) {
            auto cfg = base_config(c);
            if (c.steps) cfg.generation.steps = *c.steps;
            if (!c.out.empty()) cfg.out_dir = c.out;
            auto report = run_pipeline(cfg);
            std::cout << json(report.mean).dump(1) << '\n';
        } else if (*ablate_cmd) {
            auto cfg = base_config(c);
            if (c.steps) cfg.generation.steps = *c.steps;
            if (!c.out.empty()) cfg.out_dir = c.out;
            std::vector<std::uint64_t> seed_list;
            for (double s : parse_list(seeds)) seed_list.push_back(static_cast<std::uint64_t>(s));
            const auto ax = ablation_axis_from_string(axis);
            auto table = run_ablation(cfg, ax, parse_list(values), seed_list);
            write_ablation(table, fs::path(cfg.out_dir) / ("ablation-" + axis));
            for (const auto& [value, m] : table.mean) {
                std::cout << axis << '=' << value << " pixel AU-PR " << m.pixel_aupr << " image AU-ROC "
                          << m.image_auroc << '\n';
            }
        }
    } catch (const StageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const ValidationError& e) {
        std::cerr << "error: dataset validation failed\n";
        for (const auto& issue : e.issues()) std::cerr << "  " << issue << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
