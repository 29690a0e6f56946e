#include "anogen/pipeline/dataset.hpp"

#include <algorithm>

#include <torch/torch.h>

#include "anogen/errors.hpp"
#include "anogen/image_io.hpp"

namespace anogen {

namespace fs = std::filesystem;

namespace {

bool is_image(const fs::path& p) {
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

std::vector<fs::path> list_images(const fs::path& dir) {
    std::vector<fs::path> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && is_image(entry.path())) out.push_back(entry.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::pair<std::int64_t, std::int64_t> image_shape(const fs::path& p) {
    auto m = read_mask(p);
    return {m.size(0), m.size(1)};
}

}  // namespace

std::vector<std::string> CategoryLayout::anomaly_types() const {
    std::vector<std::string> out;
    for (const auto& [type, files] : test) {
        if (type != "good") out.push_back(type);
    }
    return out;
}

const CategoryLayout& DatasetLayout::category(const std::string& name) const {
    auto it = categories.find(name);
    if (it == categories.end()) throw DataError("dataset has no category '" + name + "'");
    return it->second;
}

std::string file_id(const fs::path& path) { return path.stem().string(); }

DatasetLayout load_dataset(const fs::path& root) {
    if (!fs::is_directory(root)) throw DataError("dataset root does not exist: " + root.string());
    DatasetLayout layout;
    layout.root = root;
    std::vector<std::string> issues;
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory() && fs::is_directory(entry.path() / "train")) dirs.push_back(entry.path());
    }
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) issues.push_back("no category directories with a train/ folder under " + root.string());

    for (const auto& dir : dirs) {
        const auto name = dir.filename().string();
        CategoryLayout cat;
        cat.train_good = list_images(dir / "train" / "good");
        if (cat.train_good.empty()) issues.push_back(name + ": train/good is empty or missing");
        if (fs::is_directory(dir / "test")) {
            std::vector<fs::path> type_dirs;
            for (const auto& entry : fs::directory_iterator(dir / "test")) {
                if (entry.is_directory()) type_dirs.push_back(entry.path());
            }
            std::sort(type_dirs.begin(), type_dirs.end());
            for (const auto& type_dir : type_dirs) {
                const auto type = type_dir.filename().string();
                auto files = list_images(type_dir);
                std::vector<fs::path> masks;
                for (const auto& f : files) {
                    if (type == "good") {
                        masks.emplace_back();
                        continue;
                    }
                    auto mask = dir / "ground_truth" / type / (f.stem().string() + "_mask.png");
                    if (!fs::exists(mask)) {
                        issues.push_back(name + ": missing ground-truth mask " + mask.string());
                    } else {
                        try {
                            if (image_shape(mask) != image_shape(f)) {
                                issues.push_back(name + ": mask shape differs from image " + f.string());
                            }
                        } catch (const std::exception& e) {
                            issues.push_back(name + ": unreadable file next to " + f.string() + " (" + e.what() + ")");
                        }
                    }
                    masks.push_back(mask);
                }
                cat.test[type] = std::move(files);
                cat.ground_truth[type] = std::move(masks);
            }
        }
        layout.categories[name] = std::move(cat);
    }
    if (!issues.empty()) throw ValidationError(issues);
    return layout;
}

std::vector<NormalImage> load_train_images(const DatasetLayout& layout, const std::string& category,
                                           std::optional<std::int64_t> size) {
    std::vector<NormalImage> out;
    for (const auto& p : layout.category(category).train_good) out.push_back({file_id(p), read_image(p, size)});
    return out;
}

std::vector<TestImage> load_test_set(const DatasetLayout& layout, const std::string& category,
                                     std::optional<std::int64_t> size, const std::vector<std::string>& exclude) {
    const auto& cat = layout.category(category);
    std::vector<TestImage> out;
    for (const auto& [type, files] : cat.test) {
        const auto& masks = cat.ground_truth.at(type);
        for (std::size_t i = 0; i < files.size(); ++i) {
            const auto id = type + "/" + file_id(files[i]);
            if (std::find(exclude.begin(), exclude.end(), id) != exclude.end()) continue;
            TestImage t;
            t.id = id;
            t.category = category;
            t.anomaly_type = type;
            t.image = read_image(files[i], size);
            t.mask = type == "good" ? torch::zeros({t.image.size(1), t.image.size(2)}) : read_mask(masks[i], size);
            out.push_back(std::move(t));
        }
    }
    return out;
}

SupportSelection select_support(const DatasetLayout& layout, const std::string& category,
                                const std::string& anomaly_type, int k, Rng& rng,
                                std::optional<std::int64_t> size) {
    const auto& cat = layout.category(category);
    auto it = cat.test.find(anomaly_type);
    if (it == cat.test.end() || anomaly_type == "good") {
        throw DataError(category + " has no anomaly type '" + anomaly_type + "'");
    }
    if (k < 1 || k > static_cast<int>(it->second.size())) {
        throw ParameterError("k_shot must be in [1, " + std::to_string(it->second.size()) + "] for " + category +
                             "/" + anomaly_type);
    }
    std::vector<std::size_t> order(it->second.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    order.resize(static_cast<std::size_t>(k));
    std::sort(order.begin(), order.end());

    SupportSelection sel;
    sel.support.category = category;
    sel.support.anomaly_type = anomaly_type;
    for (auto i : order) {
        const auto& file = it->second[i];
        SupportRecord r;
        r.id = anomaly_type + "/" + file_id(file);
        r.image = read_image(file, size);
        r.mask = read_mask(cat.ground_truth.at(anomaly_type)[i], size);
        sel.ids.push_back(r.id);
        sel.support.records.push_back(std::move(r));
    }
    sel.support.validate();
    return sel;
}

}  // namespace anogen
