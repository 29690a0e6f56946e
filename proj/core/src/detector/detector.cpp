#include "anogen/detector/detector.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "anogen/errors.hpp"
#include "anogen/image_io.hpp"
#include "anogen/log.hpp"

namespace anogen {

using nlohmann::json;
namespace F = torch::nn::functional;

namespace {

torch::nn::Sequential conv_block(std::int64_t in, std::int64_t out) {
    const auto groups = std::max<std::int64_t>(1, out / 8);
    return torch::nn::Sequential(
        torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1)),
        torch::nn::GroupNorm(groups, out), torch::nn::ReLU(),
        torch::nn::Conv2d(torch::nn::Conv2dOptions(out, out, 3).padding(1)),
        torch::nn::GroupNorm(groups, out), torch::nn::ReLU());
}

torch::Tensor upsample2(const torch::Tensor& x) {
    return F::interpolate(x, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0})
                                 .mode(torch::kNearest));
}

constexpr std::size_t kPredictChunk = 16;

}  // namespace

double image_score(const torch::Tensor& anomaly_map, int window) {
    if (anomaly_map.dim() != 2) throw ShapeError("image_score expects an (H, W) map");
    if (window < 1 || window % 2 == 0) throw ParameterError("score window must be a positive odd number");
    auto m = anomaly_map.to(torch::kFloat).unsqueeze(0).unsqueeze(0);
    if (window > 1) {
        m = F::avg_pool2d(m, F::AvgPool2dFuncOptions(window).stride(1).padding(window / 2).count_include_pad(false));
    }
    return m.max().item<double>();
}

std::vector<ScoreMap> Detector::predict_batch(const std::vector<torch::Tensor>& images) const {
    std::vector<ScoreMap> out;
    out.reserve(images.size());
    for (const auto& image : images) out.push_back(predict(image));
    return out;
}

DraemNetImpl::DraemNetImpl(DraemOptions options) : options_(options) {
    const auto b = options.base_channels;
    if (b < 8) throw ParameterError("detector base_channels must be >= 8");
    torch::nn::Sequential recon;
    auto append = [&recon](const torch::nn::Sequential& block) {
        for (const auto& m : *block) recon->push_back(m);
    };
    auto up = [] {
        return torch::nn::Upsample(
            torch::nn::UpsampleOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
    };
    append(conv_block(3, b));
    recon->push_back(torch::nn::MaxPool2d(2));
    append(conv_block(b, 2 * b));
    recon->push_back(torch::nn::MaxPool2d(2));
    append(conv_block(2 * b, 4 * b));
    recon->push_back(up());
    append(conv_block(4 * b, 2 * b));
    recon->push_back(up());
    append(conv_block(2 * b, b));
    recon->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(b, 3, 1)));
    recon->push_back(torch::nn::Sigmoid());
    recon_ = register_module("recon", recon);
    disc_enc1_ = register_module("disc_enc1", conv_block(6, b));
    disc_enc2_ = register_module("disc_enc2", conv_block(b, 2 * b));
    disc_mid_ = register_module("disc_mid", conv_block(2 * b, 2 * b));
    disc_dec2_ = register_module("disc_dec2", conv_block(4 * b, 2 * b));
    disc_dec1_ = register_module("disc_dec1", conv_block(3 * b, b));
    disc_out_ = register_module("disc_out", torch::nn::Conv2d(torch::nn::Conv2dOptions(b, 1, 1)));
}

DraemNetImpl::Output DraemNetImpl::forward(const torch::Tensor& images) {
    if (images.dim() != 4 || images.size(1) != 3) throw ShapeError("detector expects (N, 3, H, W) images");
    if (images.size(2) % 4 != 0 || images.size(3) % 4 != 0) {
        throw ShapeError("detector needs image sides divisible by 4");
    }
    auto rec = recon_->forward(images);
    auto e1 = disc_enc1_->forward(torch::cat({images, rec}, 1));
    auto e2 = disc_enc2_->forward(F::max_pool2d(e1, F::MaxPool2dFuncOptions(2)));
    auto mid = disc_mid_->forward(F::max_pool2d(e2, F::MaxPool2dFuncOptions(2)));
    auto d2 = disc_dec2_->forward(torch::cat({upsample2(mid), e2}, 1));
    auto d1 = disc_dec1_->forward(torch::cat({upsample2(d2), e1}, 1));
    auto logits = disc_out_->forward(d1).squeeze(1);
    return {rec, torch::sigmoid(logits)};
}

DraemDetector::DraemDetector(DraemOptions options) : net_(options) {}

DraemDetector::DraemDetector(DraemNet net) : net_(std::move(net)) {}

ScoreMap DraemDetector::predict(const torch::Tensor& image) const {
    return predict_batch({image}).front();
}

std::vector<ScoreMap> DraemDetector::predict_batch(const std::vector<torch::Tensor>& images) const {
    torch::NoGradGuard no_grad;
    std::vector<ScoreMap> out;
    out.reserve(images.size());
    auto& net = const_cast<DraemNet&>(net_);
    for (std::size_t start = 0; start < images.size(); start += kPredictChunk) {
        const auto stop = std::min(images.size(), start + kPredictChunk);
        std::vector<torch::Tensor> chunk;
        for (std::size_t i = start; i < stop; ++i) {
            check_image(images[i], "detector input");
            chunk.push_back(images[i]);
        }
        auto anomaly = net->forward(torch::stack(chunk)).anomaly;
        for (std::int64_t i = 0; i < anomaly.size(0); ++i) {
            ScoreMap s;
            s.anomaly = anomaly[i].clone();
            s.image_score = image_score(s.anomaly, net_->options().score_window);
            out.push_back(std::move(s));
        }
    }
    return out;
}

void DraemDetector::save(const std::filesystem::path& path) const {
    json meta{{"schema_version", kDetectorSchemaVersion},
              {"kind", "draem"},
              {"base_channels", net_->options().base_channels},
              {"score_window", net_->options().score_window}};
    torch::serialize::OutputArchive archive;
    archive.write("schema_version", torch::tensor(static_cast<std::int64_t>(kDetectorSchemaVersion)));
    archive.write("meta", c10::IValue(meta.dump()));
    torch::serialize::OutputArchive net_archive;
    net_->save(net_archive);
    archive.write("net", net_archive);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    archive.save_to(path.string());
}

std::unique_ptr<Detector> load_detector(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw CheckpointError("checkpoint not found: " + path.string());
    torch::serialize::InputArchive archive;
    archive.load_from(path.string());
    torch::Tensor version;
    archive.read("schema_version", version);
    if (version.item<std::int64_t>() != kDetectorSchemaVersion) {
        throw CheckpointError("unsupported detector schema version " + std::to_string(version.item<std::int64_t>()));
    }
    c10::IValue meta_value;
    archive.read("meta", meta_value);
    const auto meta = json::parse(meta_value.toStringRef());
    if (meta.at("kind") != "draem") throw CheckpointError("unknown detector kind");
    DraemOptions options;
    options.base_channels = meta.at("base_channels");
    options.score_window = meta.at("score_window");
    auto detector = std::make_unique<DraemDetector>(options);
    torch::serialize::InputArchive net_archive;
    archive.read("net", net_archive);
    detector->net()->load(net_archive);
    return detector;
}

void DetectorTrainConfig::validate() const {
    if (steps < 1) throw ParameterError("detector training needs steps >= 1");
    if (batch_size < 1) throw ParameterError("detector batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ParameterError("detector learning_rate must be > 0");
    if (anomaly_probability < 0.0 || anomaly_probability > 1.0) {
        throw ParameterError("anomaly_probability must be in [0, 1]");
    }
    if (model.score_window < 1 || model.score_window % 2 == 0) throw ParameterError("score_window must be odd");
    loss.validate();
    synthetic.validate();
}

void to_json(json& j, const DetectorTrainConfig& c) {
    j = json{{"steps", c.steps},
             {"batch_size", c.batch_size},
             {"learning_rate", c.learning_rate},
             {"anomaly_probability", c.anomaly_probability},
             {"loss", c.loss},
             {"synthetic", c.synthetic},
             {"generated_reconstruction", c.generated_reconstruction},
             {"base_channels", c.model.base_channels},
             {"score_window", c.model.score_window},
             {"log_every", c.log_every}};
}

void from_json(const json& j, DetectorTrainConfig& c) {
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.anomaly_probability = j.value("anomaly_probability", c.anomaly_probability);
    if (j.contains("loss")) c.loss = j.at("loss").get<LossConfig>();
    if (j.contains("synthetic")) c.synthetic = j.at("synthetic").get<SyntheticConfig>();
    c.generated_reconstruction = j.value("generated_reconstruction", c.generated_reconstruction);
    c.model.base_channels = j.value("base_channels", c.model.base_channels);
    c.model.score_window = j.value("score_window", c.model.score_window);
    c.log_every = j.value("log_every", c.log_every);
}

TrainingBatch sample_training_batch(const DetectorTrainData& data, const DetectorTrainConfig& config, Rng& rng) {
    if (data.normals.empty()) throw DataError("detector training needs normal images");
    const double mix = config.loss.mix_probability;
    if (mix > 0.0 && config.anomaly_probability > 0.0 && data.generated.empty()) {
        throw DataError("generated pool is empty but mix_probability > 0");
    }
    std::vector<SampleSource> synthetic_kinds;
    if (config.synthetic.texture_blend) synthetic_kinds.push_back(SampleSource::texture_blend);
    if (config.synthetic.cut_paste) synthetic_kinds.push_back(SampleSource::cut_paste);
    if (mix < 1.0 && config.anomaly_probability > 0.0) {
        if (synthetic_kinds.empty()) throw DataError("no synthetic anomaly source is enabled");
        if (config.synthetic.texture_blend && data.textures.empty()) throw DataError("texture pool is empty");
    }

    const auto n = static_cast<std::size_t>(config.batch_size);
    std::vector<torch::Tensor> input, target, seg, box;
    std::vector<float> recon_weight;
    TrainingBatch batch;
    auto pick = [&](std::size_t size) {
        return static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(size) - 1));
    };
    for (std::size_t i = 0; i < n; ++i) {
        const auto& normal = data.normals[pick(data.normals.size())];
        const auto H = normal.size(1);
        const auto W = normal.size(2);
        if (!rng.bernoulli(config.anomaly_probability)) {
            input.push_back(normal);
            target.push_back(normal);
            seg.push_back(torch::zeros({H, W}));
            box.push_back(torch::zeros({H, W}));
            recon_weight.push_back(1.0f);
            batch.sources.push_back(SampleSource::normal);
        } else if (rng.bernoulli(mix)) {
            const auto& item = data.generated[pick(data.generated.size())];
            auto b = item.box.rasterize(item.image.size(1), item.image.size(2));
            input.push_back(item.image);
            target.push_back(item.source);
            seg.push_back(b);
            box.push_back(b);
            recon_weight.push_back(config.generated_reconstruction ? 1.0f : 0.0f);
            batch.sources.push_back(SampleSource::generated);
        } else {
            const auto kind = synthetic_kinds[pick(synthetic_kinds.size())];
            auto s = kind == SampleSource::texture_blend
                         ? texture_blend_anomaly(normal, data.textures, config.synthetic, rng)
                         : cut_paste_anomaly(normal, config.synthetic, rng);
            input.push_back(s.input);
            target.push_back(s.target);
            seg.push_back(*s.pixel_mask);
            box.push_back(torch::zeros({H, W}));
            recon_weight.push_back(1.0f);
            batch.sources.push_back(kind);
        }
    }
    batch.input = torch::stack(input);
    batch.recon_target = torch::stack(target);
    batch.recon_weight = torch::tensor(recon_weight);
    batch.seg_target = torch::stack(seg);
    batch.box = torch::stack(box);
    return batch;
}

DetectorTrainResult train_detector(const DetectorTrainData& data, const DetectorTrainConfig& config, Rng& rng) {
    config.validate();
    if (data.normals.empty()) throw DataError("detector training needs normal images");

    torch::manual_seed(derive_seed(rng.seed(), "detector-init"));
    DraemNet net(config.model);
    torch::optim::Adam optimizer(net->parameters(), torch::optim::AdamOptions(config.learning_rate));
    Rng batch_rng = rng.fork("detector-batches");

    DetectorTrainResult result;
    result.loss_curve.reserve(static_cast<std::size_t>(config.steps));
    double rec_sum = 0.0, seg_sum = 0.0;
    int window = 0, anomalous = 0, generated = 0;
    for (int step = 1; step <= config.steps; ++step) {
        auto batch = sample_training_batch(data, config, batch_rng);
        auto out = net->forward(batch.input);
        auto rows = batch.recon_weight.nonzero().squeeze(1);
        auto rec_loss = rows.numel() > 0
                            ? reconstruction_loss(batch.recon_target.index_select(0, rows),
                                                  out.reconstruction.index_select(0, rows), config.loss.lambda)
                            : torch::zeros({});
        auto seg_loss = segmentation_loss(out.anomaly, batch.seg_target, batch.box, config.loss);
        auto loss = rec_loss + seg_loss;
        const double value = loss.item<double>();
        if (!std::isfinite(value)) throw TrainingError("detector training diverged at step " + std::to_string(step));
        optimizer.zero_grad();
        loss.backward();
        optimizer.step();

        result.loss_curve.push_back(value);
        rec_sum += rec_loss.item<double>();
        seg_sum += seg_loss.item<double>();
        ++window;
        for (auto s : batch.sources) {
            if (s != SampleSource::normal) ++anomalous;
            if (s == SampleSource::generated) ++generated;
        }
        if (step % std::max(1, config.log_every) == 0 || step == config.steps) {
            TrainLogRow row;
            row.step = step;
            row.recon_loss = rec_sum / window;
            row.seg_loss = seg_sum / window;
            row.anomalous_slots = anomalous;
            row.generated_fraction = anomalous > 0 ? static_cast<double>(generated) / anomalous : 0.0;
            result.log.push_back(row);
            log::debug("detector step " + std::to_string(step) + " L_rec " + std::to_string(row.recon_loss) +
                       " L_seg " + std::to_string(row.seg_loss));
            rec_sum = seg_sum = 0.0;
            window = anomalous = generated = 0;
        }
    }
    result.detector = std::make_unique<DraemDetector>(net);
    return result;
}

void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogRow>& rows) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write training log: " + path.string());
    out << "step,L_rec,L_seg,generated_fraction,anomalous_slots\n" << std::setprecision(9);
    for (const auto& r : rows) {
        out << r.step << ',' << r.recon_loss << ',' << r.seg_loss << ',' << r.generated_fraction << ','
            << r.anomalous_slots << '\n';
    }
}

}  // namespace anogen
