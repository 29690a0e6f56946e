#include "anogen/pipeline/toy_world.hpp"

#include <cmath>
#include <iomanip>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>
#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "anogen/detector/synthetic.hpp"
#include "anogen/errors.hpp"
#include "anogen/image_io.hpp"

namespace anogen {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;

std::string stem(int i) {
    std::ostringstream s;
    s << std::setw(3) << std::setfill('0') << i;
    return s.str();
}

std::pair<torch::Tensor, torch::Tensor> grid(std::int64_t size) {
    auto r = torch::arange(size, torch::kFloat);
    auto g = torch::meshgrid({r, r}, "ij");
    return {g[0], g[1]};
}

torch::Tensor colorize(const torch::Tensor& intensity, const std::array<double, 3>& rgb) {
    auto c = torch::tensor({rgb[0], rgb[1], rgb[2]}, torch::kFloat).view({3, 1, 1});
    return c * intensity.unsqueeze(0);
}

std::array<double, 3> random_color(Rng& rng, double lo, double hi) {
    return {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
}

torch::Tensor finish(const torch::Tensor& image, Rng& rng, double noise) {
    return quantize_u8((image + noise * rng.randn(image.sizes())).clamp(0.0, 1.0));
}

torch::Tensor weave(std::int64_t size, Rng& rng, const std::array<double, 3>& base) {
    auto [y, x] = grid(size);
    const double period = rng.uniform(5.5, 6.5);
    const double theta = rng.uniform(-0.05, 0.05);
    auto u = x * std::cos(theta) - y * std::sin(theta) + rng.uniform(0.0, period);
    auto v = x * std::sin(theta) + y * std::cos(theta) + rng.uniform(0.0, period);
    auto warp = 0.5 + 0.5 * torch::cos(2.0 * kPi * v / period);
    auto weft = 0.5 + 0.5 * torch::cos(2.0 * kPi * u / period);
    auto parity = torch::remainder(torch::floor(u / period) + torch::floor(v / period), 2.0).gt(0.5);
    auto shade = torch::where(parity, warp, weft);
    return colorize(0.7 + 0.3 * shade, base);
}

torch::Tensor stripes(std::int64_t size, Rng& rng) {
    auto [y, x] = grid(size);
    const double angle = rng.uniform(0.0, kPi);
    const double period = rng.uniform(4.0, 12.0);
    auto s = 0.5 + 0.5 * torch::sin(2.0 * kPi * (x * std::cos(angle) + y * std::sin(angle)) / period);
    auto a = colorize(s, random_color(rng, 0.2, 0.9));
    auto b = colorize(1.0 - s, random_color(rng, 0.1, 0.7));
    return a + b;
}

torch::Tensor dots(std::int64_t size, Rng& rng) {
    auto [y, x] = grid(size);
    const double period = rng.uniform(6.0, 10.0);
    const double radius = rng.uniform(1.2, period * 0.35);
    auto dy = torch::remainder(y + rng.uniform(0.0, period), period) - period / 2;
    auto dx = torch::remainder(x + rng.uniform(0.0, period), period) - period / 2;
    auto inside = (dy * dy + dx * dx).le(radius * radius).to(torch::kFloat);
    return colorize(inside, random_color(rng, 0.3, 1.0)) + colorize(1.0 - inside, random_color(rng, 0.0, 0.6));
}

torch::Tensor smooth_noise(std::int64_t size, Rng& rng) {
    std::vector<torch::Tensor> channels;
    for (int c = 0; c < 3; ++c) {
        const int res = 1 << rng.uniform_int(1, 3);
        channels.push_back(0.5 + 0.35 * perlin_noise(size, size, res, res, rng));
    }
    return torch::stack(channels);
}

void paint(torch::Tensor& image, const torch::Tensor& mask, const std::array<double, 3>& rgb) {
    auto color = torch::tensor({rgb[0], rgb[1], rgb[2]}, torch::kFloat).view({3, 1, 1}).expand_as(image);
    image = torch::where(mask.gt(0.5).expand_as(image), color, image);
}

torch::Tensor polyline_mask(std::int64_t size, Rng& rng, int thickness, double dark_margin) {
    cv::Mat canvas = cv::Mat::zeros(static_cast<int>(size), static_cast<int>(size), CV_8UC1);
    const double lo = dark_margin;
    const double hi = static_cast<double>(size) - dark_margin;
    cv::Point2d p(rng.uniform(lo, hi), rng.uniform(lo, hi));
    double angle = rng.uniform(0.0, 2.0 * kPi);
    const int segments = static_cast<int>(rng.uniform_int(2, 3));
    for (int s = 0; s < segments; ++s) {
        const double length = rng.uniform(6.0, 12.0);
        cv::Point2d q(p.x + length * std::cos(angle), p.y + length * std::sin(angle));
        cv::line(canvas, cv::Point(static_cast<int>(std::lround(p.x)), static_cast<int>(std::lround(p.y))),
                 cv::Point(static_cast<int>(std::lround(q.x)), static_cast<int>(std::lround(q.y))), cv::Scalar(255),
                 thickness, cv::LINE_8);
        p = q;
        angle += rng.uniform(-0.7, 0.7);
    }
    auto t = torch::from_blob(canvas.data, {size, size}, torch::kUInt8).clone();
    return t.gt(0).to(torch::kFloat);
}

torch::Tensor blob_mask(std::int64_t size, Rng& rng, double rmin, double rmax) {
    auto [y, x] = grid(size);
    const double cy = rng.uniform(6.0, size - 6.0);
    const double cx = rng.uniform(6.0, size - 6.0);
    const double ry = rng.uniform(rmin, rmax);
    const double rx = rng.uniform(rmin, rmax);
    auto d = (y - cy).pow(2) / (ry * ry) + (x - cx).pow(2) / (rx * rx);
    return d.le(1.0).to(torch::kFloat);
}

}  // namespace

void ToyWorldConfig::validate() const {
    if (image_size < 16 || image_size % 4 != 0) throw ParameterError("toy image_size must be a multiple of 4, >= 16");
    if (train_good < 1 || test_good < 1 || test_anomalous < 1 || textures < 1) {
        throw ParameterError("toy world sizes must be >= 1");
    }
    if (category.empty() || anomaly_type.empty() || anomaly_type == "good") {
        throw ParameterError("toy world needs a category and a non-'good' anomaly type");
    }
}

void to_json(json& j, const ToyWorldConfig& c) {
    j = json{{"image_size", c.image_size},  {"train_good", c.train_good},
             {"test_good", c.test_good},    {"test_anomalous", c.test_anomalous},
             {"textures", c.textures},      {"category", c.category},
             {"anomaly_type", c.anomaly_type}};
}

void from_json(const json& j, ToyWorldConfig& c) {
    c.image_size = j.value("image_size", c.image_size);
    c.train_good = j.value("train_good", c.train_good);
    c.test_good = j.value("test_good", c.test_good);
    c.test_anomalous = j.value("test_anomalous", c.test_anomalous);
    c.textures = j.value("textures", c.textures);
    c.category = j.value("category", c.category);
    c.anomaly_type = j.value("anomaly_type", c.anomaly_type);
}

torch::Tensor toy_fabric(std::int64_t size, Rng& rng) {
    const std::array<double, 3> base{0.62 + 0.03 * rng.normal(), 0.52 + 0.03 * rng.normal(),
                                     0.40 + 0.03 * rng.normal()};
    return finish(weave(size, rng, base), rng, 0.015);
}

torch::Tensor draw_scratch(torch::Tensor& image, Rng& rng) {
    const auto size = image.size(1);
    torch::Tensor mask;
    do {
        mask = polyline_mask(size, rng, rng.bernoulli(0.7) ? 1 : 2, 8.0);
    } while (mask.sum().item<double>() < 1.0);
    const double shade = rng.uniform(0.0, 0.08);
    paint(image, mask, {0.12 + shade, 0.10 + shade, 0.08 + shade});
    image = quantize_u8(image);
    return mask;
}

ToyWorld make_toy_world(std::uint64_t seed, const ToyWorldConfig& config) {
    config.validate();
    ToyWorld world;
    world.config = config;
    const auto size = config.image_size;
    Rng root(seed);

    Rng train_rng = root.fork("train");
    for (int i = 0; i < config.train_good; ++i) world.train.push_back({stem(i), toy_fabric(size, train_rng)});

    Rng test_rng = root.fork("test");
    for (int i = 0; i < config.test_good; ++i) {
        TestImage t;
        t.id = "good/" + stem(i);
        t.category = config.category;
        t.anomaly_type = "good";
        t.image = toy_fabric(size, test_rng);
        t.mask = torch::zeros({size, size});
        world.test.push_back(std::move(t));
    }
    for (int i = 0; i < config.test_anomalous; ++i) {
        TestImage t;
        t.id = config.anomaly_type + "/" + stem(i);
        t.category = config.category;
        t.anomaly_type = config.anomaly_type;
        t.image = toy_fabric(size, test_rng);
        t.mask = draw_scratch(t.image, test_rng);
        world.test.push_back(std::move(t));
    }

    Rng tex_rng = root.fork("textures");
    for (int i = 0; i < config.textures; ++i) {
        torch::Tensor tex;
        switch (i % 3) {
            case 0: tex = smooth_noise(size, tex_rng); break;
            case 1: tex = stripes(size, tex_rng); break;
            default: tex = dots(size, tex_rng); break;
        }
        world.textures.push_back(finish(tex, tex_rng, 0.02));
    }
    return world;
}

void export_toy_world(const ToyWorld& world, const fs::path& root) {
    const auto cat = root / world.config.category;
    for (const auto& n : world.train) write_image(cat / "train" / "good" / (n.id + ".png"), n.image);
    for (const auto& t : world.test) {
        const auto slash = t.id.find('/');
        const auto name = t.id.substr(slash + 1);
        write_image(cat / "test" / t.anomaly_type / (name + ".png"), t.image);
        if (t.anomaly_type != "good") {
            write_mask(cat / "ground_truth" / t.anomaly_type / (name + "_mask.png"), t.mask);
        }
    }
    for (std::size_t i = 0; i < world.textures.size(); ++i) {
        write_image(root / "textures" / (stem(static_cast<int>(i)) + ".png"), world.textures[i]);
    }
}

std::vector<torch::Tensor> load_textures(const fs::path& dir, std::optional<std::int64_t> size) {
    std::vector<fs::path> files;
    if (fs::is_directory(dir)) {
        for (const auto& e : fs::directory_iterator(dir)) {
            if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
        }
    }
    std::sort(files.begin(), files.end());
    std::vector<torch::Tensor> out;
    for (const auto& f : files) out.push_back(read_image(f, size));
    return out;
}

std::vector<CorpusItem> make_backbone_corpus(std::uint64_t seed, int count, std::int64_t size) {
    if (count < 1) throw ParameterError("corpus size must be >= 1");
    Rng rng(seed);
    std::vector<CorpusItem> corpus;
    for (int i = 0; i < count; ++i) {
        CorpusItem item;
        const double kind = rng.uniform();
        if (kind < 0.4) {
            item.image = weave(size, rng, random_color(rng, 0.3, 0.8));
            item.tokens.push_back("fabric");
        } else if (kind < 0.6) {
            item.image = stripes(size, rng);
            item.tokens.push_back("stripes");
        } else if (kind < 0.8) {
            item.image = dots(size, rng);
            item.tokens.push_back("dots");
        } else {
            item.image = smooth_noise(size, rng);
            item.tokens.push_back("noise");
        }
        item.image = (item.image + 0.015 * rng.randn(item.image.sizes())).clamp(0.0, 1.0);
        if (rng.bernoulli(0.5)) {
            item.tokens.push_back("defect");
            const auto defect = rng.uniform_int(0, 2);
            if (defect == 0) {
                auto mask = polyline_mask(size, rng, rng.bernoulli(0.6) ? 1 : 2, 6.0);
                const bool dark = rng.bernoulli(0.75);
                paint(item.image, mask, dark ? random_color(rng, 0.0, 0.2) : random_color(rng, 0.85, 1.0));
                item.tokens.push_back("scratch");
            } else if (defect == 1) {
                auto mask = blob_mask(size, rng, 3.0, 8.0);
                auto tint = colorize(torch::ones({size, size}), random_color(rng, 0.2, 0.8));
                item.image = torch::where(mask.gt(0.5).expand_as(item.image), 0.5 * item.image + 0.5 * tint, item.image);
                item.tokens.push_back("stain");
            } else {
                paint(item.image, blob_mask(size, rng, 2.0, 4.5), {0.02, 0.02, 0.02});
                item.tokens.push_back("hole");
            }
        }
        item.image = quantize_u8(item.image.clamp(0.0, 1.0));
        corpus.push_back(std::move(item));
    }
    return corpus;
}

std::vector<CaptionedImage> caption_corpus(const std::vector<CorpusItem>& corpus, const ConditionEncoder& encoder) {
    std::vector<CaptionedImage> out;
    out.reserve(corpus.size());
    for (const auto& item : corpus) out.push_back({item.image, encode_caption(encoder, item.tokens)});
    return out;
}

}  // namespace anogen
