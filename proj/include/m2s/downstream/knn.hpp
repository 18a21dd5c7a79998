#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <vector>

#include "m2s/numerics/matrix.hpp"

namespace m2s {

struct ClassPrecision {
    double precision = 0.0;
    int support = 0;
};

struct KnnResult {
    int k = 0;
    std::vector<std::vector<int>> neighbors;  // gallery indices, nearest first
    double precision = 0.0;                   // mean over all queries
    std::map<int, ClassPrecision> per_class;  // keyed by query label
};

/// Exhaustive L2 nearest neighbours (ties: lower gallery index first) and
/// precision@k = matching-label neighbours / k, averaged over queries.
inline KnnResult knn_retrieve(const Matrix& queries, const std::vector<int>& query_labels, const Matrix& gallery,
                              const std::vector<int>& gallery_labels, int k) {
    if (queries.cols() != gallery.cols()) throw ShapeError("knn_retrieve: query/gallery dimension mismatch");
    if (static_cast<Eigen::Index>(query_labels.size()) != queries.rows() ||
        static_cast<Eigen::Index>(gallery_labels.size()) != gallery.rows()) {
        throw ShapeError("knn_retrieve: label count does not match vector count");
    }
    if (k < 1 || k > gallery.rows()) {
        throw InvalidArgument("knn_retrieve: k=" + std::to_string(k) + " with gallery of " +
                              std::to_string(gallery.rows()));
    }
    if (queries.rows() == 0) throw InvalidArgument("knn_retrieve: no queries");

    KnnResult r;
    r.k = k;
    std::map<int, double> class_sum;
    double total = 0.0;
    std::vector<double> dist(static_cast<std::size_t>(gallery.rows()));
    std::vector<int> idx(dist.size());
    for (Eigen::Index q = 0; q < queries.rows(); ++q) {
        for (Eigen::Index g = 0; g < gallery.rows(); ++g) {
            dist[static_cast<std::size_t>(g)] = (queries.row(q) - gallery.row(g)).squaredNorm();
        }
        std::iota(idx.begin(), idx.end(), 0);
        std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
            const double da = dist[static_cast<std::size_t>(a)], db = dist[static_cast<std::size_t>(b)];
            return da != db ? da < db : a < b;
        });
        std::vector<int> nn(idx.begin(), idx.begin() + k);
        const int label = query_labels[static_cast<std::size_t>(q)];
        int hits = 0;
        for (int g : nn) hits += gallery_labels[static_cast<std::size_t>(g)] == label ? 1 : 0;
        const double p = static_cast<double>(hits) / k;
        total += p;
        class_sum[label] += p;
        r.per_class[label].support += 1;
        r.neighbors.push_back(std::move(nn));
    }
    r.precision = total / static_cast<double>(queries.rows());
    for (auto& [label, cp] : r.per_class) cp.precision = class_sum[label] / cp.support;
    return r;
}

}  // namespace m2s
