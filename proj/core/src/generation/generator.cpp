#include "anogen/generation/generator.hpp"

#include <fstream>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "anogen/hashing.hpp"
#include "anogen/image_io.hpp"
#include "anogen/log.hpp"

namespace anogen {

using nlohmann::json;

void GenerationConfig::validate() const {
    if (steps < 1) throw ParameterError("generation needs steps >= 1");
    if (boxes_per_image < 1 || images_per_box < 1) throw ParameterError("boxes_per_image and images_per_box must be >= 1");
}

void to_json(json& j, const GenerationConfig& c) {
    j = json{{"steps", c.steps},
             {"sampler", to_string(c.sampler)},
             {"boxes_per_image", c.boxes_per_image},
             {"images_per_box", c.images_per_box}};
}

void from_json(const json& j, GenerationConfig& c) {
    c.steps = j.value("steps", c.steps);
    if (j.contains("sampler")) c.sampler = sampler_from_string(j.at("sampler"));
    c.boxes_per_image = j.value("boxes_per_image", c.boxes_per_image);
    c.images_per_box = j.value("images_per_box", c.images_per_box);
}

void GenerationManifest::validate(const std::filesystem::path& root) const {
    std::map<std::string, int> seen;
    for (const auto& r : records) {
        ++seen[r.category + "/" + r.anomaly_type];
        if (!root.empty() && !std::filesystem::exists(root / r.file)) {
            throw DataError("manifest references a missing file: " + (root / r.file).string());
        }
    }
    if (seen != counts) throw DataError("manifest counts do not match its records");
}

void write_manifest(const GenerationManifest& manifest, const std::filesystem::path& path) {
    json records = json::array();
    for (const auto& r : manifest.records) {
        records.push_back({{"source_id", r.source_id},
                           {"category", r.category},
                           {"anomaly_type", r.anomaly_type},
                           {"file", r.file.generic_string()},
                           {"box", r.box},
                           {"embedding_id", r.embedding_id},
                           {"seed", r.seed},
                           {"steps", r.steps},
                           {"sampler", to_string(r.sampler)}});
    }
    json j{{"schema_version", kManifestSchemaVersion},
           {"config", manifest.config},
           {"config_hash", manifest.config_hash},
           {"counts", manifest.counts},
           {"errors", manifest.errors},
           {"records", records}};
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest: " + path.string());
    out << j.dump(1) << '\n';
}

GenerationManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read manifest: " + path.string());
    json j;
    in >> j;
    if (j.value("schema_version", 0) != kManifestSchemaVersion) throw DataError("unsupported manifest schema version");
    GenerationManifest m;
    m.config = j.at("config").get<GenerationConfig>();
    m.config_hash = j.at("config_hash");
    m.counts = j.at("counts").get<std::map<std::string, int>>();
    m.errors = j.at("errors").get<std::map<std::string, std::string>>();
    for (const auto& r : j.at("records")) {
        GeneratedSample s;
        s.source_id = r.at("source_id");
        s.category = r.at("category");
        s.anomaly_type = r.at("anomaly_type");
        s.file = r.at("file").get<std::string>();
        s.box = r.at("box").get<BoxMask>();
        s.embedding_id = r.at("embedding_id");
        s.seed = r.at("seed");
        s.steps = r.at("steps");
        s.sampler = sampler_from_string(r.at("sampler"));
        m.records.push_back(std::move(s));
    }
    return m;
}

Latent blend_latents(const Latent& z_noisy_source, const Latent& z_denoised, const torch::Tensor& latent_box) {
    const auto& a = z_noisy_source.data;
    const auto& b = z_denoised.data;
    if (a.sizes() != b.sizes()) throw ShapeError("blend_latents: latent shapes differ");
    if (latent_box.dim() < 2 || latent_box.size(-2) != a.size(-2) || latent_box.size(-1) != a.size(-1)) {
        throw ShapeError("blend_latents: mask is not spatially compatible with the latents");
    }
    torch::Tensor mask;
    try {
        mask = latent_box.gt(0.5).expand_as(a);
    } catch (const c10::Error&) {
        throw ShapeError("blend_latents: mask does not broadcast over the latents");
    }
    return {torch::where(mask, b, a), z_denoised.stride};
}

GeneratedSample generate_anomaly(const torch::Tensor& normal_image, const BoxMask& box,
                                 const AnomalyEmbedding& embedding, const Backbone& backbone,
                                 const GenerationConfig& config, Rng& rng) {
    check_image(normal_image, "generate_anomaly");
    box.validate();
    config.validate();
    embedding.validate();
    if (embedding.dim() != backbone.cond_dim()) {
        throw ConfigurationError("embedding dimension " + std::to_string(embedding.dim()) +
                                 " does not match backbone conditioning dimension " +
                                 std::to_string(backbone.cond_dim()));
    }
    if (config.steps > backbone.schedule.T) throw ConfigurationError("generation steps exceed the schedule length");

    torch::NoGradGuard no_grad;
    const auto H = normal_image.size(1);
    const auto W = normal_image.size(2);
    const Latent source = backbone.autoencoder->encode(normal_image);
    const auto pixel_box = box.rasterize(H, W);
    const auto latent_box = downsample_mask(pixel_box, source.height(), source.width());

    const auto timesteps = sampling_timesteps(backbone.schedule, config.steps);
    Latent z{rng.randn(source.data.sizes()), source.stride};
    for (std::size_t i = 0; i < timesteps.size(); ++i) {
        const int t = timesteps[i];
        const int t_prev = i + 1 < timesteps.size() ? timesteps[i + 1] : 0;
        auto denoised = denoise_step(z, t, embedding.v, *backbone.denoiser, backbone.schedule, rng, config.sampler, t_prev);
        Latent exterior = source;
        if (t_prev > 0) {
            exterior = add_noise(source, t_prev, Latent{rng.randn(source.data.sizes()), source.stride}, backbone.schedule);
        }
        z = blend_latents(exterior, denoised, latent_box);
    }

    auto decoded = backbone.autoencoder->decode(z).squeeze(0).clamp(0.0, 1.0);
    if (decoded.sizes() != normal_image.sizes()) throw ShapeError("decoded image shape differs from the source");
    decoded = quantize_u8(decoded);

    GeneratedSample sample;
    sample.box = box;
    sample.image = torch::where(pixel_box.gt(0.5).expand_as(normal_image), decoded, normal_image);
    sample.embedding_id = embedding.id();
    sample.category = embedding.category;
    sample.anomaly_type = embedding.anomaly_type;
    sample.seed = rng.seed();
    sample.steps = config.steps;
    sample.sampler = config.sampler;
    return sample;
}

GenerationManifest generate_dataset(const std::vector<GenerationRequest>& requests,
                                    const std::map<std::string, std::vector<NormalImage>>& normals,
                                    const std::map<std::string, AnomalyEmbedding>& embeddings,
                                    const CategoryBoxTable& boxes, const Backbone& backbone,
                                    const GenerationConfig& config, const std::filesystem::path& out_dir,
                                    Rng& rng) {
    config.validate();
    GenerationManifest manifest;
    manifest.config = config;
    manifest.config_hash = hex64(fnv1a64(json(config).dump()));

    for (const auto& request : requests) {
        const auto key = request.category + "/" + request.anomaly_type;
        std::vector<GeneratedSample> produced;
        try {
            auto emb = embeddings.find(key);
            if (emb == embeddings.end()) throw ConfigurationError("no embedding for " + key);
            auto imgs = normals.find(request.category);
            if (imgs == normals.end()) throw DataError("no normal images for category " + request.category);
            const auto box_config = boxes.lookup(request.category, request.anomaly_type);
            const auto dir = std::filesystem::path(request.category) / request.anomaly_type;
            std::filesystem::create_directories(out_dir / dir);

            for (const auto& normal : imgs->second) {
                const auto fg = extract_foreground(normal.image, box_config.foreground);
                Rng source_rng = rng.fork(key + "/" + normal.id);
                for (int b = 0; b < config.boxes_per_image; ++b) {
                    Rng box_rng = source_rng.fork("box-" + std::to_string(b));
                    const auto box = sample_box(fg, box_config, box_rng);
                    for (int g = 0; g < config.images_per_box; ++g) {
                        const int k = b * config.images_per_box + g;
                        Rng sample_rng = source_rng.fork(static_cast<std::uint64_t>(k));
                        auto sample = generate_anomaly(normal.image, box, emb->second, backbone, config, sample_rng);
                        sample.source_id = normal.id;
                        sample.category = request.category;
                        sample.anomaly_type = request.anomaly_type;
                        sample.file = dir / (normal.id + "_" + std::to_string(k) + ".png");
                        write_image(out_dir / sample.file, sample.image);
                        produced.push_back(std::move(sample));
                    }
                }
            }
            manifest.counts[key] = static_cast<int>(produced.size());
            for (auto& s : produced) manifest.records.push_back(std::move(s));
            log::info("generated " + std::to_string(manifest.counts[key]) + " images for " + key);
        } catch (const Error& e) {
            log::warn("generation failed for " + key + ": " + e.what());
            manifest.errors[key] = e.what();
            std::error_code ignored;
            for (const auto& s : produced) std::filesystem::remove(out_dir / s.file, ignored);
        }
    }
    write_manifest(manifest, out_dir / "manifest.json");
    return manifest;
}

}  // namespace anogen
