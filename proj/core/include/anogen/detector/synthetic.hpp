#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>
#include <torch/types.h>

#include "anogen/boxes/boxes.hpp"
#include "anogen/random.hpp"

namespace anogen {

enum class SampleSource { normal, texture_blend, cut_paste, generated };

std::string to_string(SampleSource source);

// One detector training example. Exactly one of `pixel_mask` (exact labels:
// normals and synthetic anomalies) and `box` (generated anomalies) is set.
struct TrainingSample {
    torch::Tensor input;   // (3, H, W)
    torch::Tensor target;  // (3, H, W) reconstruction target, the underlying normal image
    std::optional<torch::Tensor> pixel_mask;  // (H, W)
    std::optional<BoxMask> box;
    SampleSource source = SampleSource::normal;

    void validate() const;
};

// Gradient noise in roughly [-1, 1] on an (H, W) grid with `res_y` × `res_x` lattice cells.
torch::Tensor perlin_noise(std::int64_t height, std::int64_t width, int res_y, int res_x, Rng& rng);

struct SyntheticConfig {
    bool texture_blend = true;
    bool cut_paste = false;
    double perlin_threshold = 0.5;
    int perlin_max_octave = 3;  // lattice resolution drawn from 2^[0, max]
    double min_opacity = 0.2;   // opacity of the blended texture
    double max_opacity = 1.0;
    double patch_min = 0.1;     // cut-paste patch side as a fraction of the image side
    double patch_max = 0.3;

    void validate() const;
};

void to_json(nlohmann::json& j, const SyntheticConfig& c);
void from_json(const nlohmann::json& j, SyntheticConfig& c);

// Binary (H, W) region from thresholded Perlin noise; redrawn until nonempty.
torch::Tensor perlin_region(std::int64_t height, std::int64_t width, const SyntheticConfig& config, Rng& rng);

// normal outside `region`, opacity·texture + (1 − opacity)·normal inside.
torch::Tensor blend_texture(const torch::Tensor& normal, const torch::Tensor& texture, const torch::Tensor& region,
                            double opacity);

TrainingSample texture_blend_anomaly(const torch::Tensor& normal, const std::vector<torch::Tensor>& textures,
                                     const SyntheticConfig& config, Rng& rng);

struct PixelRect {
    std::int64_t y = 0;
    std::int64_t x = 0;
    std::int64_t h = 0;
    std::int64_t w = 0;
};

// Copies the `src` patch onto the same-sized `dst` rectangle; the mask is `dst`.
TrainingSample cut_paste_at(const torch::Tensor& image, const PixelRect& src, const PixelRect& dst);

TrainingSample cut_paste_anomaly(const torch::Tensor& image, const SyntheticConfig& config, Rng& rng);

}  // namespace anogen
