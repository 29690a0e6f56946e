#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "anogen/embedding/embedding.hpp"
#include "anogen/generation/generator.hpp"
#include "anogen/metrics/evaluate.hpp"
#include "anogen/random.hpp"

namespace anogen {

// root/<category>/train/good/*.png
// root/<category>/test/<type>/*.png          ("good" holds normal test images)
// root/<category>/ground_truth/<type>/<stem>_mask.png
struct CategoryLayout {
    std::vector<std::filesystem::path> train_good;
    std::map<std::string, std::vector<std::filesystem::path>> test;
    std::map<std::string, std::vector<std::filesystem::path>> ground_truth;  // aligned with test[type]

    std::vector<std::string> anomaly_types() const;
};

struct DatasetLayout {
    std::filesystem::path root;
    std::map<std::string, CategoryLayout> categories;

    const CategoryLayout& category(const std::string& name) const;
};

// Scans and validates the layout. Every problem found is listed in the thrown ValidationError.
DatasetLayout load_dataset(const std::filesystem::path& root);

std::string file_id(const std::filesystem::path& path);

std::vector<NormalImage> load_train_images(const DatasetLayout& layout, const std::string& category,
                                           std::optional<std::int64_t> size = std::nullopt);

// Test images of a category, skipping ids listed in `exclude` ("<type>/<stem>").
std::vector<TestImage> load_test_set(const DatasetLayout& layout, const std::string& category,
                                     std::optional<std::int64_t> size = std::nullopt,
                                     const std::vector<std::string>& exclude = {});

struct SupportSelection {
    SupportSet support;
    std::vector<std::string> ids;  // "<type>/<stem>", to exclude from evaluation
};

// k anomalous test images of one type chosen at random, with their masks.
SupportSelection select_support(const DatasetLayout& layout, const std::string& category,
                                const std::string& anomaly_type, int k, Rng& rng,
                                std::optional<std::int64_t> size = std::nullopt);

}  // namespace anogen
