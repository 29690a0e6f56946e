#include "anogen/pipeline/config.hpp"

#include <algorithm>
#include <fstream>

#include "anogen/errors.hpp"
#include "anogen/hashing.hpp"

namespace anogen {

using nlohmann::json;

std::string to_string(BackboneKind kind) {
    switch (kind) {
        case BackboneKind::toy: return "toy";
        case BackboneKind::checkpoint: return "checkpoint";
        case BackboneKind::external: return "external";
    }
    return "toy";
}

BackboneKind backbone_kind_from_string(const std::string& name) {
    if (name == "toy") return BackboneKind::toy;
    if (name == "checkpoint") return BackboneKind::checkpoint;
    if (name == "external") return BackboneKind::external;
    throw ConfigurationError("unknown backbone kind: " + name);
}

void PipelineConfig::validate() const {
    if (out_dir.empty()) throw ConfigurationError("out_dir is empty");
    if (k_shot < 1) throw ConfigurationError("k_shot must be >= 1");
    if (dataset.image_size < 0) throw ConfigurationError("image_size must be >= 0");
    if (dataset.root.empty()) dataset.toy.validate();
    if (!dataset.root.empty() && !std::filesystem::is_directory(dataset.root)) {
        throw ConfigurationError("dataset root does not exist: " + dataset.root);
    }
    if (backbone.kind != BackboneKind::toy && !std::filesystem::exists(backbone.path)) {
        throw ConfigurationError("backbone path does not exist: " + backbone.path);
    }
    if (backbone.corpus_size < 1) throw ConfigurationError("backbone corpus_size must be >= 1");
    if (backbone.condition != "hash" && backbone.condition != "table") {
        throw ConfigurationError("condition must be 'hash' or 'table'");
    }
    if (backbone.condition == "table" && !std::filesystem::exists(backbone.condition_table)) {
        throw ConfigurationError("condition table does not exist: " + backbone.condition_table);
    }
    if (!box_table.empty() && !std::filesystem::exists(box_table)) {
        throw ConfigurationError("box table does not exist: " + box_table);
    }
    inversion.validate();
    generation.validate();
    detector.validate();
}

PipelineConfig PipelineConfig::toy_preset() {
    PipelineConfig c;
    c.out_dir = "anogen-toy";
    c.generation.steps = 25;
    c.detector.steps = 1000;
    return c;
}

void to_json(json& j, const PipelineConfig& c) {
    json dataset{{"root", c.dataset.root},
                 {"textures", c.dataset.textures},
                 {"categories", c.dataset.categories},
                 {"anomaly_types", c.dataset.anomaly_types},
                 {"image_size", c.dataset.image_size},
                 {"toy", c.dataset.toy}};
    dataset["toy_seed"] = c.dataset.toy_seed ? json(*c.dataset.toy_seed) : json(nullptr);
    json backbone{{"kind", to_string(c.backbone.kind)},
                  {"path", c.backbone.path},
                  {"corpus_size", c.backbone.corpus_size},
                  {"train", c.backbone.train},
                  {"condition", c.backbone.condition},
                  {"condition_table", c.backbone.condition_table}};
    backbone["seed"] = c.backbone.seed ? json(*c.backbone.seed) : json(nullptr);
    j = json{{"seed", c.seed},
             {"out_dir", c.out_dir},
             {"cache_dir", c.cache_dir},
             {"dataset", dataset},
             {"backbone", backbone},
             {"k_shot", c.k_shot},
             {"inversion", c.inversion},
             {"box_table", c.box_table},
             {"generation", c.generation},
             {"detector", c.detector},
             {"curves", c.curves}};
}

void from_json(const json& j, PipelineConfig& c) {
    static const std::vector<std::string> known{"seed", "out_dir", "cache_dir", "dataset",    "backbone", "k_shot",
                                                "inversion", "box_table", "generation", "detector", "curves"};
    for (const auto& [key, value] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw ConfigurationError("unknown config key: " + key);
        }
    }
    c.seed = j.value("seed", c.seed);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.cache_dir = j.value("cache_dir", c.cache_dir);
    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        c.dataset.root = d.value("root", c.dataset.root);
        c.dataset.textures = d.value("textures", c.dataset.textures);
        c.dataset.categories = d.value("categories", c.dataset.categories);
        c.dataset.anomaly_types = d.value("anomaly_types", c.dataset.anomaly_types);
        c.dataset.image_size = d.value("image_size", c.dataset.image_size);
        if (d.contains("toy")) c.dataset.toy = d.at("toy").get<ToyWorldConfig>();
        if (d.contains("toy_seed") && !d.at("toy_seed").is_null()) {
            c.dataset.toy_seed = d.at("toy_seed").get<std::uint64_t>();
        }
    }
    if (j.contains("backbone")) {
        const auto& b = j.at("backbone");
        if (b.contains("kind")) c.backbone.kind = backbone_kind_from_string(b.at("kind"));
        c.backbone.path = b.value("path", c.backbone.path);
        c.backbone.corpus_size = b.value("corpus_size", c.backbone.corpus_size);
        if (b.contains("train")) c.backbone.train = b.at("train").get<BackboneTrainConfig>();
        c.backbone.condition = b.value("condition", c.backbone.condition);
        c.backbone.condition_table = b.value("condition_table", c.backbone.condition_table);
        if (b.contains("seed") && !b.at("seed").is_null()) c.backbone.seed = b.at("seed").get<std::uint64_t>();
    }
    c.k_shot = j.value("k_shot", c.k_shot);
    if (j.contains("inversion")) c.inversion = j.at("inversion").get<InversionConfig>();
    c.box_table = j.value("box_table", c.box_table);
    if (j.contains("generation")) c.generation = j.at("generation").get<GenerationConfig>();
    if (j.contains("detector")) c.detector = j.at("detector").get<DetectorTrainConfig>();
    c.curves = j.value("curves", c.curves);
}

PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigurationError("cannot read config: " + path.string());
    json j;
    try {
        in >> j;
        return j.get<PipelineConfig>();
    } catch (const json::exception& e) {
        throw ConfigurationError("bad config " + path.string() + ": " + e.what());
    }
}

void save_config(const PipelineConfig& config, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw ConfigurationError("cannot write config: " + path.string());
    out << json(config).dump(2) << '\n';
}

std::string config_hash(const PipelineConfig& config) {
    json j = config;
    j.erase("out_dir");
    j.erase("cache_dir");
    return hex64(fnv1a64(j.dump()));
}

}  // namespace anogen
