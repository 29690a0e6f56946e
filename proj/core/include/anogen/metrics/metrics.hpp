#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace anogen {

// Area under the ROC curve: probability that a random positive scores above a
// random negative, ties counting one half. Needs both classes.
double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels);

// Average precision: sum over distinct thresholds (high to low) of
// (R_k - R_{k-1}) * P_k. Needs at least one positive.
double aupr(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct RocPoint {
    double threshold;
    double false_positive_rate;
    double true_positive_rate;
};

struct PrPoint {
    double threshold;
    double recall;
    double precision;
};

// One point per distinct threshold, from the highest score down.
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const std::uint8_t> labels);
std::vector<PrPoint> pr_curve(std::span<const double> scores, std::span<const std::uint8_t> labels);

}  // namespace anogen
