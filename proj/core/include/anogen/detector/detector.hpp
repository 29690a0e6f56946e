#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>
#include <torch/nn/module.h>
#include <torch/nn/modules/container/sequential.h>
#include <torch/types.h>

#include "anogen/boxes/boxes.hpp"
#include "anogen/detector/losses.hpp"
#include "anogen/detector/synthetic.hpp"
#include "anogen/random.hpp"

namespace anogen {

inline constexpr int kDetectorSchemaVersion = 1;

struct ScoreMap {
    torch::Tensor anomaly;  // M̂, (H, W) in [0, 1]
    double image_score = 0.0;

    torch::Tensor normality() const { return 1.0 - anomaly; }  // p̂
};

// Image-level score: max of the box-filtered anomaly map (`window` odd, zero padding excluded).
double image_score(const torch::Tensor& anomaly_map, int window);

class Detector {
public:
    virtual ~Detector() = default;
    virtual ScoreMap predict(const torch::Tensor& image) const = 0;
    virtual std::vector<ScoreMap> predict_batch(const std::vector<torch::Tensor>& images) const;
    virtual void save(const std::filesystem::path& path) const = 0;
};

struct DraemOptions {
    std::int64_t base_channels = 16;
    int score_window = 5;
};

// Reconstructive autoencoder (no skips) followed by a discriminative U-Net
// over the concatenated input and reconstruction.
class DraemNetImpl : public torch::nn::Module {
public:
    explicit DraemNetImpl(DraemOptions options = {});

    struct Output {
        torch::Tensor reconstruction;  // (N, 3, H, W)
        torch::Tensor anomaly;         // (N, H, W) in (0, 1)
    };
    Output forward(const torch::Tensor& images);

    const DraemOptions& options() const { return options_; }

private:
    DraemOptions options_;
    torch::nn::Sequential recon_{nullptr};
    torch::nn::Sequential disc_enc1_{nullptr}, disc_enc2_{nullptr}, disc_mid_{nullptr};
    torch::nn::Sequential disc_dec2_{nullptr}, disc_dec1_{nullptr};
    torch::nn::Conv2d disc_out_{nullptr};
};
TORCH_MODULE(DraemNet);

class DraemDetector final : public Detector {
public:
    explicit DraemDetector(DraemOptions options = {});
    explicit DraemDetector(DraemNet net);

    ScoreMap predict(const torch::Tensor& image) const override;
    std::vector<ScoreMap> predict_batch(const std::vector<torch::Tensor>& images) const override;
    void save(const std::filesystem::path& path) const override;

    DraemNet& net() { return net_; }
    const DraemNet& net() const { return net_; }

private:
    DraemNet net_;
};

std::unique_ptr<Detector> load_detector(const std::filesystem::path& path);

// A generated anomaly together with the normal image it was made from.
struct GeneratedItem {
    torch::Tensor image;
    torch::Tensor source;
    BoxMask box;
};

struct DetectorTrainData {
    std::vector<torch::Tensor> normals;
    std::vector<torch::Tensor> textures;  // external pool for texture blending
    std::vector<GeneratedItem> generated;
};

struct DetectorTrainConfig {
    int steps = 1500;
    int batch_size = 8;
    double learning_rate = 1e-3;
    double anomaly_probability = 0.5;  // fraction of batch slots that carry an anomaly
    LossConfig loss;
    SyntheticConfig synthetic;
    bool generated_reconstruction = true;  // generated samples also train the reconstruction branch
    DraemOptions model;
    int log_every = 25;

    void validate() const;
};

void to_json(nlohmann::json& j, const DetectorTrainConfig& c);
void from_json(const nlohmann::json& j, DetectorTrainConfig& c);

struct TrainingBatch {
    torch::Tensor input;          // (N, 3, H, W)
    torch::Tensor recon_target;   // (N, 3, H, W)
    torch::Tensor recon_weight;   // (N) 1 where the sample trains the reconstruction branch
    torch::Tensor seg_target;     // (N, H, W)
    torch::Tensor box;            // (N, H, W) rasterised box, zero for exact labels
    std::vector<SampleSource> sources;
};

// Every slot takes a random normal image; with `anomaly_probability` it becomes
// anomalous, drawn from the generated pool with probability mix_probability and
// otherwise from an enabled synthetic generator.
TrainingBatch sample_training_batch(const DetectorTrainData& data, const DetectorTrainConfig& config, Rng& rng);

struct TrainLogRow {
    int step = 0;
    double recon_loss = 0.0;
    double seg_loss = 0.0;
    double generated_fraction = 0.0;  // among anomalous slots since the previous row
    int anomalous_slots = 0;
};

struct DetectorTrainResult {
    std::unique_ptr<DraemDetector> detector;
    std::vector<double> loss_curve;  // total loss per step
    std::vector<TrainLogRow> log;
};

DetectorTrainResult train_detector(const DetectorTrainData& data, const DetectorTrainConfig& config, Rng& rng);

// CSV "step,L_rec,L_seg,generated_fraction,anomalous_slots".
void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogRow>& rows);

}  // namespace anogen
