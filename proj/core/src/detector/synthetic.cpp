#include "anogen/detector/synthetic.hpp"

#include <cmath>
#include <numbers>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "anogen/errors.hpp"
#include "anogen/image_io.hpp"

namespace anogen {

using nlohmann::json;

std::string to_string(SampleSource source) {
    switch (source) {
        case SampleSource::normal: return "normal";
        case SampleSource::texture_blend: return "texture_blend";
        case SampleSource::cut_paste: return "cut_paste";
        case SampleSource::generated: return "generated";
    }
    return "unknown";
}

void TrainingSample::validate() const {
    check_image(input, "training input");
    check_image(target, "training target");
    if (input.sizes() != target.sizes()) throw ShapeError("training input and target shapes differ");
    if (pixel_mask.has_value() == box.has_value()) {
        throw DataError("training sample needs exactly one of pixel mask and box");
    }
    if (box.has_value() != (source == SampleSource::generated)) {
        throw DataError("box supervision is reserved for generated samples");
    }
    if (pixel_mask) {
        check_mask(*pixel_mask, "training mask");
        if (pixel_mask->size(0) != input.size(1) || pixel_mask->size(1) != input.size(2)) {
            throw ShapeError("training mask shape differs from the image");
        }
    } else {
        box->validate();
    }
}

torch::Tensor perlin_noise(std::int64_t height, std::int64_t width, int res_y, int res_x, Rng& rng) {
    if (height < 1 || width < 1 || res_y < 1 || res_x < 1) throw ParameterError("perlin_noise: bad size");
    const auto gy = static_cast<std::size_t>(res_y + 1);
    const auto gx = static_cast<std::size_t>(res_x + 1);
    std::vector<double> grad_y(gy * gx);
    std::vector<double> grad_x(gy * gx);
    for (std::size_t i = 0; i < gy * gx; ++i) {
        const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
        grad_y[i] = std::sin(angle);
        grad_x[i] = std::cos(angle);
    }
    auto fade = [](double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); };
    auto out = torch::empty({height, width}, torch::kFloat);
    auto acc = out.accessor<float, 2>();
    for (std::int64_t i = 0; i < height; ++i) {
        const double py = static_cast<double>(i) * res_y / static_cast<double>(height);
        const auto cy = static_cast<std::size_t>(py);
        const double fy = py - static_cast<double>(cy);
        for (std::int64_t j = 0; j < width; ++j) {
            const double px = static_cast<double>(j) * res_x / static_cast<double>(width);
            const auto cx = static_cast<std::size_t>(px);
            const double fx = px - static_cast<double>(cx);
            auto corner = [&](std::size_t dy, std::size_t dx) {
                const auto k = (cy + dy) * gx + (cx + dx);
                return grad_y[k] * (fy - static_cast<double>(dy)) + grad_x[k] * (fx - static_cast<double>(dx));
            };
            const double u = fade(fx);
            const double v = fade(fy);
            const double top = corner(0, 0) + u * (corner(0, 1) - corner(0, 0));
            const double bottom = corner(1, 0) + u * (corner(1, 1) - corner(1, 0));
            acc[i][j] = static_cast<float>(std::sqrt(2.0) * (top + v * (bottom - top)));
        }
    }
    return out;
}

void SyntheticConfig::validate() const {
    if (!(min_opacity > 0.0 && min_opacity <= max_opacity && max_opacity <= 1.0)) {
        throw ParameterError("opacity range must satisfy 0 < min <= max <= 1");
    }
    if (!(patch_min > 0.0 && patch_min <= patch_max && patch_max < 1.0)) {
        throw ParameterError("patch range must satisfy 0 < min <= max < 1");
    }
    if (perlin_max_octave < 0 || perlin_max_octave > 6) throw ParameterError("perlin_max_octave must be in [0, 6]");
}

void to_json(json& j, const SyntheticConfig& c) {
    j = json{{"texture_blend", c.texture_blend},   {"cut_paste", c.cut_paste},
             {"perlin_threshold", c.perlin_threshold}, {"perlin_max_octave", c.perlin_max_octave},
             {"min_opacity", c.min_opacity},       {"max_opacity", c.max_opacity},
             {"patch_min", c.patch_min},           {"patch_max", c.patch_max}};
}

void from_json(const json& j, SyntheticConfig& c) {
    c.texture_blend = j.value("texture_blend", c.texture_blend);
    c.cut_paste = j.value("cut_paste", c.cut_paste);
    c.perlin_threshold = j.value("perlin_threshold", c.perlin_threshold);
    c.perlin_max_octave = j.value("perlin_max_octave", c.perlin_max_octave);
    c.min_opacity = j.value("min_opacity", c.min_opacity);
    c.max_opacity = j.value("max_opacity", c.max_opacity);
    c.patch_min = j.value("patch_min", c.patch_min);
    c.patch_max = j.value("patch_max", c.patch_max);
}

torch::Tensor perlin_region(std::int64_t height, std::int64_t width, const SyntheticConfig& config, Rng& rng) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
        const int ry = 1 << rng.uniform_int(0, config.perlin_max_octave);
        const int rx = 1 << rng.uniform_int(0, config.perlin_max_octave);
        auto region = perlin_noise(height, width, ry, rx, rng).gt(config.perlin_threshold).to(torch::kFloat);
        if (region.sum().item<double>() > 0.0) return region;
    }
    throw SamplingError("perlin_region: no nonempty region after 1000 draws");
}

torch::Tensor blend_texture(const torch::Tensor& normal, const torch::Tensor& texture, const torch::Tensor& region,
                            double opacity) {
    if (normal.sizes() != texture.sizes()) throw ShapeError("blend_texture: texture shape differs from the image");
    if (region.size(0) != normal.size(1) || region.size(1) != normal.size(2)) {
        throw ShapeError("blend_texture: region shape differs from the image");
    }
    auto inside = opacity == 1.0 ? texture : opacity * texture + (1.0 - opacity) * normal;
    return torch::where(region.gt(0.5).expand_as(normal), inside, normal);
}

TrainingSample texture_blend_anomaly(const torch::Tensor& normal, const std::vector<torch::Tensor>& textures,
                                     const SyntheticConfig& config, Rng& rng) {
    check_image(normal, "texture_blend_anomaly");
    if (textures.empty()) throw DataError("texture pool is empty");
    const auto H = normal.size(1);
    const auto W = normal.size(2);
    auto texture = textures[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(textures.size()) - 1))];
    if (texture.size(1) != H || texture.size(2) != W) {
        texture = torch::nn::functional::interpolate(
                      texture.unsqueeze(0),
                      torch::nn::functional::InterpolateFuncOptions().size(std::vector<std::int64_t>{H, W})
                          .mode(torch::kBilinear).align_corners(false))
                      .squeeze(0);
    }
    auto region = perlin_region(H, W, config, rng);
    const double opacity = rng.uniform(config.min_opacity, config.max_opacity);
    TrainingSample s;
    s.input = blend_texture(normal, texture, region, opacity);
    s.target = normal;
    s.pixel_mask = region;
    s.source = SampleSource::texture_blend;
    return s;
}

TrainingSample cut_paste_at(const torch::Tensor& image, const PixelRect& src, const PixelRect& dst) {
    check_image(image, "cut_paste_at");
    const auto H = image.size(1);
    const auto W = image.size(2);
    auto inside = [&](const PixelRect& r) {
        return r.h >= 1 && r.w >= 1 && r.y >= 0 && r.x >= 0 && r.y + r.h <= H && r.x + r.w <= W;
    };
    if (!inside(src) || !inside(dst) || src.h != dst.h || src.w != dst.w) {
        throw ParameterError("cut_paste_at: rectangles must be equal-sized and inside the image");
    }
    using torch::indexing::Slice;
    auto out = image.clone();
    auto patch = image.index({Slice(), Slice(src.y, src.y + src.h), Slice(src.x, src.x + src.w)});
    out.index_put_({Slice(), Slice(dst.y, dst.y + dst.h), Slice(dst.x, dst.x + dst.w)}, patch);
    auto mask = torch::zeros({H, W}, torch::kFloat);
    mask.index_put_({Slice(dst.y, dst.y + dst.h), Slice(dst.x, dst.x + dst.w)}, 1.0f);
    TrainingSample s;
    s.input = out;
    s.target = image;
    s.pixel_mask = mask;
    s.source = SampleSource::cut_paste;
    return s;
}

TrainingSample cut_paste_anomaly(const torch::Tensor& image, const SyntheticConfig& config, Rng& rng) {
    check_image(image, "cut_paste_anomaly");
    const auto H = image.size(1);
    const auto W = image.size(2);
    if (H < 4 || W < 4) throw ShapeError("cut_paste_anomaly needs images of at least 4x4 pixels");
    auto side = [&](std::int64_t n) {
        const auto s = static_cast<std::int64_t>(std::lround(rng.uniform(config.patch_min, config.patch_max) * n));
        return std::clamp<std::int64_t>(s, 1, n - 1);
    };
    PixelRect src{0, 0, side(H), side(W)};
    src.y = rng.uniform_int(0, H - src.h);
    src.x = rng.uniform_int(0, W - src.w);
    PixelRect dst = src;
    while (dst.y == src.y && dst.x == src.x) {
        dst.y = rng.uniform_int(0, H - dst.h);
        dst.x = rng.uniform_int(0, W - dst.w);
    }
    return cut_paste_at(image, src, dst);
}

}  // namespace anogen
