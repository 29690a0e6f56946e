#include "anogen/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "anogen/errors.hpp"

namespace anogen {
namespace {

struct ClassCounts {
    std::size_t positives = 0;
    std::size_t negatives = 0;
};

ClassCounts check_inputs(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    if (scores.size() != labels.size()) throw ShapeError("scores and labels differ in length");
    ClassCounts counts;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (std::isnan(scores[i])) throw ParameterError("score is NaN");
        if (labels[i] > 1) throw ParameterError("labels must be 0 or 1");
        (labels[i] ? counts.positives : counts.negatives)++;
    }
    return counts;
}

// Indices sorted by descending score.
std::vector<std::size_t> descending_order(std::span<const double> scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

// Walk the descending order one tie group at a time, reporting cumulative (tp, fp).
template <typename Fn>
void for_each_threshold(std::span<const double> scores, std::span<const std::uint8_t> labels, Fn&& fn) {
    const auto order = descending_order(scores);
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double threshold = scores[order[i]];
        while (i < order.size() && scores[order[i]] == threshold) {
            (labels[order[i]] ? tp : fp)++;
            ++i;
        }
        fn(threshold, tp, fp);
    }
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    const auto counts = check_inputs(scores, labels);
    if (counts.positives == 0 || counts.negatives == 0) {
        throw UndefinedMetricError("AUROC is undefined unless both classes are present");
    }
    // Rank formulation keeps the arithmetic exact for half-integer ranks.
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        std::size_t group_pos = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            group_pos += labels[order[j]];
            ++j;
        }
        const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        rank_sum += avg_rank * static_cast<double>(group_pos);
        i = j;
    }
    const auto p = static_cast<double>(counts.positives);
    const auto n = static_cast<double>(counts.negatives);
    return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

double aupr(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    const auto counts = check_inputs(scores, labels);
    if (counts.positives == 0) throw UndefinedMetricError("AUPR is undefined without positives");
    const auto p = static_cast<double>(counts.positives);
    double ap = 0.0;
    double prev_recall = 0.0;
    for_each_threshold(scores, labels, [&](double, std::size_t tp, std::size_t fp) {
        const double recall = static_cast<double>(tp) / p;
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    });
    return ap;
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    const auto counts = check_inputs(scores, labels);
    if (counts.positives == 0 || counts.negatives == 0) {
        throw UndefinedMetricError("ROC curve is undefined unless both classes are present");
    }
    std::vector<RocPoint> points;
    for_each_threshold(scores, labels, [&](double threshold, std::size_t tp, std::size_t fp) {
        points.push_back({threshold, static_cast<double>(fp) / static_cast<double>(counts.negatives),
                          static_cast<double>(tp) / static_cast<double>(counts.positives)});
    });
    return points;
}

std::vector<PrPoint> pr_curve(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    const auto counts = check_inputs(scores, labels);
    if (counts.positives == 0) throw UndefinedMetricError("PR curve is undefined without positives");
    std::vector<PrPoint> points;
    for_each_threshold(scores, labels, [&](double threshold, std::size_t tp, std::size_t fp) {
        points.push_back({threshold, static_cast<double>(tp) / static_cast<double>(counts.positives),
                          static_cast<double>(tp) / static_cast<double>(tp + fp)});
    });
    return points;
}

}  // namespace anogen
