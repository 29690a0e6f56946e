#include "anogen/pipeline/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "anogen/diffusion/external.hpp"
#include "anogen/errors.hpp"
#include "anogen/hashing.hpp"
#include "anogen/image_io.hpp"
#include "anogen/log.hpp"

namespace anogen {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path cache_root(const PipelineConfig& c) {
    return c.cache_dir.empty() ? fs::path(c.out_dir) / "cache" : fs::path(c.cache_dir);
}

std::string key_of(const json& j) { return hex64(fnv1a64(j.dump())); }

bool stage_done(const fs::path& dir) { return fs::exists(dir / "stage.json"); }

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    json j;
    in >> j;
    return j;
}

void write_json(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump(1) << '\n';
}

template <typename F>
auto run_stage(const std::string& name, F&& body) {
    try {
        return body();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
}

std::string format_value(double v) {
    std::ostringstream s;
    s << std::setprecision(6) << v;
    return s.str();
}

MetricSet mean_metrics(const std::vector<MetricSet>& sets) {
    MetricSet m;
    if (sets.empty()) return m;
    for (const auto& s : sets) {
        m.image_auroc += s.image_auroc;
        m.image_aupr += s.image_aupr;
        m.pixel_auroc += s.pixel_auroc;
        m.pixel_aupr += s.pixel_aupr;
        m.images += s.images;
        m.anomalous_images += s.anomalous_images;
        m.pixels += s.pixels;
        m.anomalous_pixels += s.anomalous_pixels;
    }
    const auto n = static_cast<double>(sets.size());
    m.image_auroc /= n;
    m.image_aupr /= n;
    m.pixel_auroc /= n;
    m.pixel_aupr /= n;
    return m;
}

}  // namespace

PreparedDataset prepare_dataset(const PipelineConfig& config) {
    PreparedDataset d;
    fs::path root;
    json key;
    if (config.dataset.root.empty()) {
        const auto seed = config.dataset.toy_seed.value_or(derive_seed(config.seed, "toy-world"));
        key = json{{"kind", "toy"}, {"toy", config.dataset.toy}, {"seed", seed}};
        root = cache_root(config) / ("dataset-" + key_of(key));
        if (!stage_done(root)) {
            export_toy_world(make_toy_world(seed, config.dataset.toy), root);
            write_json(root / "stage.json", key);
        }
    } else {
        root = config.dataset.root;
        key = json{{"kind", "directory"}, {"root", fs::absolute(root).string()}};
    }
    if (config.dataset.image_size > 0) d.image_size = config.dataset.image_size;
    key["image_size"] = config.dataset.image_size;
    d.key = key_of(key);
    d.layout = load_dataset(root);

    if (config.dataset.categories.empty()) {
        for (const auto& [name, cat] : d.layout.categories) d.categories.push_back(name);
    } else {
        for (const auto& name : config.dataset.categories) {
            d.layout.category(name);
            d.categories.push_back(name);
        }
    }
    for (const auto& name : d.categories) {
        const auto available = d.layout.category(name).anomaly_types();
        std::vector<std::string> types;
        if (config.dataset.anomaly_types.empty()) {
            types = available;
        } else {
            for (const auto& t : config.dataset.anomaly_types) {
                if (std::find(available.begin(), available.end(), t) != available.end()) types.push_back(t);
            }
        }
        if (types.empty()) throw DataError("category " + name + " has no selected anomaly types");
        d.anomaly_types[name] = types;
    }
    const fs::path textures = config.dataset.textures.empty() ? root / "textures" : fs::path(config.dataset.textures);
    d.textures = load_textures(textures, d.image_size);
    return d;
}

BackboneBundle obtain_backbone(const PipelineConfig& config, std::int64_t image_size) {
    BackboneBundle b;
    const auto& section = config.backbone;
    json key;
    switch (section.kind) {
        case BackboneKind::toy: {
            const auto seed = section.seed.value_or(derive_seed(config.seed, "backbone"));
            key = json{{"kind", "toy"},
                       {"train", section.train},
                       {"corpus_size", section.corpus_size},
                       {"corpus_version", kBackboneCorpusVersion},
                       {"schema_version", kBackboneSchemaVersion},
                       {"seed", seed},
                       {"image_size", image_size},
                       {"condition", section.condition}};
            b.key = key_of(key);
            const auto dir = cache_root(config) / ("backbone-" + b.key);
            if (section.condition == "hash") {
                b.encoder = std::make_shared<HashConditionEncoder>(section.train.unet.cond_dim);
            } else {
                b.encoder = std::make_shared<TableConditionEncoder>(
                    TableConditionEncoder::from_file(section.condition_table));
            }
            if (stage_done(dir)) {
                b.backbone = load_backbone(dir / "backbone.pt");
            } else {
                auto corpus = make_backbone_corpus(derive_seed(seed, "corpus"), section.corpus_size, image_size);
                Rng rng(seed);
                auto trained = train_tiny_backbone(caption_corpus(corpus, *b.encoder), section.train, rng);
                save_backbone(trained.backbone, dir / "backbone.pt");
                json stage = key;
                stage["initial_heldout_loss"] = trained.report.initial_heldout_loss;
                stage["final_heldout_loss"] = trained.report.final_heldout_loss;
                stage["autoencoder_mse"] = trained.report.autoencoder_mse;
                write_json(dir / "stage.json", stage);
                b.backbone = std::move(trained.backbone);
            }
            return b;
        }
        case BackboneKind::checkpoint:
            b.backbone = load_backbone(section.path);
            key = json{{"kind", "checkpoint"},
                       {"path", fs::absolute(section.path).string()},
                       {"bytes", fs::file_size(section.path)}};
            break;
        case BackboneKind::external:
            b.backbone = load_external_backbone(section.path);
            key = json{{"kind", "external"}, {"path", fs::absolute(section.path).string()}};
            break;
    }
    key["condition"] = section.condition;
    b.key = key_of(key);
    if (section.condition == "hash") {
        b.encoder = std::make_shared<HashConditionEncoder>(b.backbone.cond_dim());
    } else {
        b.encoder = std::make_shared<TableConditionEncoder>(TableConditionEncoder::from_file(section.condition_table));
    }
    return b;
}

void to_json(json& j, const PipelineReport& r) {
    json cats = json::object();
    for (const auto& [name, c] : r.categories) {
        json embeddings = json::object();
        for (const auto& [type, e] : c.embeddings) {
            embeddings[type] = json{{"id", e.id},
                                    {"support_ids", e.support_ids},
                                    {"initial_probe_loss", e.initial_probe_loss},
                                    {"final_probe_loss", e.final_probe_loss}};
        }
        cats[name] = json{{"embeddings", embeddings},
                          {"generated", c.generated},
                          {"generation_errors", c.generation_errors},
                          {"detector_final_loss", c.detector_final_loss},
                          {"eval", c.eval}};
    }
    j = json{{"config_hash", r.config_hash},
             {"seed", r.seed},
             {"stage_keys", r.stage_keys},
             {"skipped_stages", r.skipped_stages},
             {"categories", cats},
             {"mean", r.mean}};
}

void write_report(const PipelineReport& report, const fs::path& path) { write_json(path, json(report)); }

PipelineReport run_pipeline(const PipelineConfig& config) {
    run_stage("config", [&] {
        config.validate();
        return 0;
    });
    using clock = std::chrono::steady_clock;
    json timings = json::object();
    auto timed = [&](const std::string& name, auto&& body) {
        const auto start = clock::now();
        auto result = run_stage(name, body);
        timings[name] = timings.value(name, 0.0) + std::chrono::duration<double>(clock::now() - start).count();
        return result;
    };

    const fs::path out(config.out_dir);
    fs::create_directories(out);
    save_config(config, out / "config.json");

    PipelineReport report;
    report.config_hash = config_hash(config);
    report.seed = config.seed;

    auto data = timed("dataset", [&] { return prepare_dataset(config); });
    report.stage_keys["dataset"] = data.key;

    const bool use_generated =
        config.detector.loss.mix_probability > 0.0 && config.detector.anomaly_probability > 0.0;
    auto boxes = run_stage("config", [&] {
        return config.box_table.empty() ? CategoryBoxTable::builtin() : CategoryBoxTable::from_file(config.box_table);
    });

    BackboneBundle bb;
    if (use_generated) {
        bb = timed("backbone", [&] {
            const auto& first = data.layout.category(data.categories.front()).train_good.front();
            const auto size = data.image_size.value_or(read_image(first).size(1));
            return obtain_backbone(config, size);
        });
        report.stage_keys["backbone"] = bb.key;
    } else {
        report.skipped_stages = {"backbone", "embedding", "generation"};
    }

    std::vector<MetricSet> per_category;
    for (const auto& cat : data.categories) {
        CategoryOutcome outcome;
        auto normals = timed("dataset", [&] { return load_train_images(data.layout, cat, data.image_size); });
        std::vector<std::string> exclude;
        std::map<std::string, AnomalyEmbedding> embeddings;
        json embedding_keys = json::object();

        for (const auto& type : data.anomaly_types.at(cat)) {
            const auto label = cat + "/" + type;
            Rng support_rng(derive_seed(config.seed, "support/" + label));
            auto selection = timed("support", [&] {
                return select_support(data.layout, cat, type, config.k_shot, support_rng, data.image_size);
            });
            exclude.insert(exclude.end(), selection.ids.begin(), selection.ids.end());
            EmbeddingSummary summary;
            summary.support_ids = selection.ids;
            if (use_generated) {
                const json key{{"backbone", bb.key}, {"dataset", data.key}, {"inversion", config.inversion},
                               {"support", selection.ids}, {"seed", config.seed}, {"label", label}};
                const auto ekey = key_of(key);
                const auto dir = cache_root(config) / ("embedding-" + ekey);
                auto embedding = timed("embedding", [&] {
                    if (stage_done(dir)) {
                        const auto stage = read_json(dir / "stage.json");
                        summary.initial_probe_loss = stage.at("initial_probe_loss");
                        summary.final_probe_loss = stage.at("final_probe_loss");
                        return load_embedding(dir / "embedding.json");
                    }
                    auto init = init_embedding(config.inversion.init_token, *bb.encoder, bb.backbone.cond_dim());
                    Rng rng(derive_seed(config.seed, "embedding/" + label));
                    auto result = learn_embedding(selection.support, bb.backbone, init, config.inversion, rng);
                    save_embedding(result.embedding, dir / "embedding.json");
                    write_loss_curve(dir / "loss.csv", result.loss_curve);
                    summary.initial_probe_loss = result.initial_probe_loss;
                    summary.final_probe_loss = result.final_probe_loss;
                    json stage = key;
                    stage["initial_probe_loss"] = result.initial_probe_loss;
                    stage["final_probe_loss"] = result.final_probe_loss;
                    write_json(dir / "stage.json", stage);
                    return result.embedding;
                });
                summary.id = embedding.id();
                embeddings[label] = embedding;
                embedding_keys[type] = ekey;
                report.stage_keys["embedding:" + label] = ekey;
            }
            outcome.embeddings[type] = summary;
        }

        std::vector<GeneratedItem> generated;
        std::string generation_key = "none";
        if (use_generated) {
            const json key{{"embeddings", embedding_keys}, {"generation", config.generation}, {"boxes", boxes},
                           {"dataset", data.key}, {"seed", config.seed}, {"category", cat}};
            generation_key = key_of(key);
            report.stage_keys["generation:" + cat] = generation_key;
            const auto dir = cache_root(config) / ("generation-" + generation_key);
            auto manifest = timed("generation", [&] {
                if (stage_done(dir)) return read_manifest(dir / "manifest.json");
                std::vector<GenerationRequest> requests;
                for (const auto& type : data.anomaly_types.at(cat)) requests.push_back({cat, type});
                Rng rng(derive_seed(config.seed, "generation/" + cat));
                auto m = generate_dataset(requests, {{cat, normals}}, embeddings, boxes, bb.backbone,
                                          config.generation, dir, rng);
                write_json(dir / "stage.json", key);
                return m;
            });
            outcome.generated = manifest.counts;
            outcome.generation_errors = manifest.errors;
            generated = timed("generation", [&] {
                manifest.validate(dir);
                std::map<std::string, const torch::Tensor*> by_id;
                for (const auto& n : normals) by_id[n.id] = &n.image;
                std::vector<GeneratedItem> items;
                for (const auto& r : manifest.records) {
                    auto it = by_id.find(r.source_id);
                    if (it == by_id.end()) throw DataError("generated image has unknown source " + r.source_id);
                    items.push_back({read_image(dir / r.file), *it->second, r.box});
                }
                if (items.empty()) throw DataError("no generated images for category " + cat);
                return items;
            });
        }

        const json detector_key{{"generation", generation_key}, {"detector", config.detector},
                                {"dataset", data.key},          {"seed", config.seed},
                                {"category", cat}};
        const auto dkey = key_of(detector_key);
        report.stage_keys["detector:" + cat] = dkey;
        const auto ddir = cache_root(config) / ("detector-" + dkey);
        auto detector = timed("detector", [&]() -> std::unique_ptr<Detector> {
            if (stage_done(ddir)) {
                outcome.detector_final_loss = read_json(ddir / "stage.json").at("final_loss");
                return load_detector(ddir / "detector.pt");
            }
            DetectorTrainData train;
            for (const auto& n : normals) train.normals.push_back(n.image);
            train.textures = data.textures;
            train.generated = std::move(generated);
            Rng rng(derive_seed(config.seed, "detector/" + cat));
            auto result = train_detector(train, config.detector, rng);
            result.detector->save(ddir / "detector.pt");
            write_train_log(ddir / "train_log.csv", result.log);
            const auto tail = std::min<std::size_t>(50, result.loss_curve.size());
            double final_loss = 0.0;
            for (std::size_t i = result.loss_curve.size() - tail; i < result.loss_curve.size(); ++i) {
                final_loss += result.loss_curve[i];
            }
            outcome.detector_final_loss = final_loss / static_cast<double>(tail);
            json stage = detector_key;
            stage["final_loss"] = outcome.detector_final_loss;
            write_json(ddir / "stage.json", stage);
            return std::move(result.detector);
        });

        outcome.eval = timed("evaluate", [&] {
            auto test = load_test_set(data.layout, cat, data.image_size, exclude);
            auto result = evaluate(*detector, test, config.curves);
            result.config_hash = report.config_hash;
            if (config.curves) {
                write_roc_csv(result.pixel_roc, out / "curves" / (cat + "_pixel_roc.csv"));
                write_pr_csv(result.pixel_pr, out / "curves" / (cat + "_pixel_pr.csv"));
            }
            return result;
        });
        per_category.push_back(outcome.eval.overall);
        report.categories[cat] = std::move(outcome);
    }
    report.mean = mean_metrics(per_category);
    write_report(report, out / "report.json");
    write_json(out / "timings.json", timings);
    log::info("pipeline finished: pixel AU-PR " + std::to_string(report.mean.pixel_aupr) + ", image AU-ROC " +
              std::to_string(report.mean.image_auroc));
    return report;
}

std::string to_string(AblationAxis axis) {
    switch (axis) {
        case AblationAxis::tau: return "tau";
        case AblationAxis::k_shot: return "k_shot";
        case AblationAxis::n_generated: return "n_generated";
        case AblationAxis::mask_guided: return "mask_guided";
        case AblationAxis::anomaly_mix: return "anomaly_mix";
    }
    return "tau";
}

AblationAxis ablation_axis_from_string(const std::string& name) {
    for (auto axis : {AblationAxis::tau, AblationAxis::k_shot, AblationAxis::n_generated, AblationAxis::mask_guided,
                      AblationAxis::anomaly_mix}) {
        if (to_string(axis) == name) return axis;
    }
    throw ConfigurationError("unknown ablation axis: " + name);
}

void apply_axis(PipelineConfig& config, AblationAxis axis, double value) {
    switch (axis) {
        case AblationAxis::tau: config.detector.loss.tau = value; break;
        case AblationAxis::k_shot: config.k_shot = static_cast<int>(std::lround(value)); break;
        case AblationAxis::n_generated: {
            const auto n = static_cast<int>(std::lround(value));
            if (n < 1) throw ConfigurationError("n_generated must be >= 1");
            config.generation.boxes_per_image = (n > 1 && n % 2 == 0) ? 2 : 1;
            config.generation.images_per_box = n / config.generation.boxes_per_image;
            break;
        }
        case AblationAxis::mask_guided: config.inversion.mask_guided = value != 0.0; break;
        case AblationAxis::anomaly_mix: config.detector.loss.mix_probability = value; break;
    }
}

AblationTable run_ablation(const PipelineConfig& base, AblationAxis axis, const std::vector<double>& values,
                           const std::vector<std::uint64_t>& seeds) {
    if (values.empty()) throw ConfigurationError("ablation needs at least one value");
    const std::vector<std::uint64_t> run_seeds = seeds.empty() ? std::vector<std::uint64_t>{base.seed} : seeds;
    AblationTable table;
    table.axis = axis;
    for (double value : values) {
        std::vector<MetricSet> sets;
        for (auto seed : run_seeds) {
            PipelineConfig c = base;
            c.seed = seed;
            apply_axis(c, axis, value);
            c.cache_dir = base.cache_dir.empty() ? (fs::path(base.out_dir) / "cache").string() : base.cache_dir;
            c.out_dir = (fs::path(base.out_dir) / ("ablation-" + to_string(axis)) /
                         (format_value(value) + "-seed" + std::to_string(seed)))
                            .string();
            log::info("ablation " + to_string(axis) + "=" + format_value(value) + " seed " + std::to_string(seed));
            auto report = run_pipeline(c);
            table.rows.push_back({value, seed, report.mean, report.config_hash});
            sets.push_back(report.mean);
        }
        table.mean[value] = mean_metrics(sets);
    }
    return table;
}

void write_ablation(const AblationTable& table, const fs::path& dir) {
    fs::create_directories(dir);
    std::ofstream csv(dir / "ablation.csv");
    if (!csv) throw DataError("cannot write ablation table in " + dir.string());
    csv << to_string(table.axis) << ",seed,image_auroc,image_aupr,pixel_auroc,pixel_aupr,config_hash\n"
        << std::setprecision(9);
    json rows = json::array();
    for (const auto& r : table.rows) {
        csv << format_value(r.value) << ',' << r.seed << ',' << r.metrics.image_auroc << ',' << r.metrics.image_aupr
            << ',' << r.metrics.pixel_auroc << ',' << r.metrics.pixel_aupr << ',' << r.config_hash << '\n';
        rows.push_back({{"value", r.value}, {"seed", r.seed}, {"metrics", r.metrics}, {"config_hash", r.config_hash}});
    }
    json mean = json::array();
    for (const auto& [value, m] : table.mean) mean.push_back({{"value", value}, {"metrics", m}});
    write_json(dir / "ablation.json", json{{"axis", to_string(table.axis)}, {"rows", rows}, {"mean", mean}});
}

}  // namespace anogen
