#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "m2s/jsonl.hpp"
#include "m2s/numerics/matrix.hpp"

namespace m2s {

struct MetricReport {
    std::string task_id;
    std::string metric;  // precision@k | top1 | mse | mAP | AP
    double value = 0.0;
    int support = 0;
    std::string arm;     // which representation produced it, e.g. "encoder" or "baseline"
};

inline Json to_json(const MetricReport& r) {
    return Json{{"task_id", r.task_id}, {"metric", r.metric}, {"value", r.value}, {"support", r.support}, {"arm", r.arm}};
}

inline MetricReport metric_report_from_json(const Json& j) {
    return {j.at("task_id").get<std::string>(), j.at("metric").get<std::string>(), j.at("value").get<double>(),
            j.at("support").get<int>(), j.value("arm", std::string())};
}

/// Ranking by descending score, ties by ascending index.
inline std::vector<std::size_t> rank_descending(std::span<const double> scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

/// Non-interpolated average precision: mean over positives of the precision
/// at each positive's rank. Empty when there are no positives.
inline std::optional<double> average_precision(std::span<const double> scores, std::span<const int> relevant) {
    if (scores.size() != relevant.size()) throw ShapeError("average_precision: score/label length mismatch");
    const auto order = rank_descending(scores);
    double total = 0.0;
    int hits = 0;
    for (std::size_t r = 0; r < order.size(); ++r) {
        if (relevant[order[r]] != 0) {
            ++hits;
            total += static_cast<double>(hits) / static_cast<double>(r + 1);
        }
    }
    if (hits == 0) return std::nullopt;
    return total / hits;
}

struct MapResult {
    double map = 0.0;
    std::vector<double> per_label;       // NaN for skipped labels
    std::vector<int> skipped_labels;     // columns without positives
    int evaluated = 0;
};

/// Mean AP over label columns that have at least one positive.
inline MapResult multilabel_map(const Matrix& scores, const Matrix& truth) {
    if (scores.rows() != truth.rows() || scores.cols() != truth.cols()) {
        throw ShapeError("multilabel_map: scores " + shape_string(scores) + " vs truth " + shape_string(truth));
    }
    MapResult r;
    double total = 0.0;
    for (Eigen::Index l = 0; l < scores.cols(); ++l) {
        std::vector<double> s(static_cast<std::size_t>(scores.rows()));
        std::vector<int> t(static_cast<std::size_t>(scores.rows()));
        for (Eigen::Index i = 0; i < scores.rows(); ++i) {
            s[static_cast<std::size_t>(i)] = scores(i, l);
            t[static_cast<std::size_t>(i)] = truth(i, l) != 0.0 ? 1 : 0;
        }
        const auto ap = average_precision(s, t);
        if (ap) {
            total += *ap;
            ++r.evaluated;
            r.per_label.push_back(*ap);
        } else {
            r.skipped_labels.push_back(static_cast<int>(l));
            r.per_label.push_back(std::nan(""));
        }
    }
    if (r.evaluated == 0) throw InvalidArgument("multilabel_map: no label column has a positive");
    r.map = total / r.evaluated;
    return r;
}

}  // namespace m2s
