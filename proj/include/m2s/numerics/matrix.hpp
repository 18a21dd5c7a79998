#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string>

#include "m2s/error.hpp"

namespace m2s {

/// Training math runs in float64; stored embeddings are float32.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

using Rng = std::mt19937_64;

/// SplitMix64 finalizer. Used to derive independent, reproducible
/// sub-seeds (per epoch, per stage) from one master seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::string shape_string(Eigen::Index rows, Eigen::Index cols) {
    return std::to_string(rows) + "x" + std::to_string(cols);
}

inline std::string shape_string(const Matrix& m) { return shape_string(m.rows(), m.cols()); }

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

struct PoolShape {
    Eigen::Index rows;
    Eigen::Index cols;
};

/// Output shape of a k x k / stride s pooling window sweep. Trailing
/// partial windows are discarded.
inline PoolShape pooled_shape(Eigen::Index rows, Eigen::Index cols, int k, int s) {
    if (k < 1 || s < 1) {
        throw ShapeError("pooling kernel and stride must be positive (k=" + std::to_string(k) +
                         ", s=" + std::to_string(s) + ")");
    }
    if (k > rows || k > cols) {
        throw ShapeError("pooling kernel " + std::to_string(k) + " exceeds input " +
                         shape_string(rows, cols));
    }
    return {(rows - k) / s + 1, (cols - k) / s + 1};
}

/// Window mean. The window is summed sequentially in row-major order and
/// divided by k*k, so results are reproducible bit for bit.
inline Matrix avg_pool2d(const Matrix& m, int k, int s) {
    const auto shape = pooled_shape(m.rows(), m.cols(), k, s);
    Matrix out(shape.rows, shape.cols);
    const double area = static_cast<double>(k) * k;
    for (Eigen::Index i = 0; i < shape.rows; ++i) {
        for (Eigen::Index j = 0; j < shape.cols; ++j) {
            double acc = 0.0;
            for (Eigen::Index a = 0; a < k; ++a) {
                const double* row = m.data() + (i * s + a) * m.cols() + j * s;
                for (Eigen::Index b = 0; b < k; ++b) acc += row[b];
            }
            out(i, j) = acc / area;
        }
    }
    return out;
}

inline Matrix max_pool2d(const Matrix& m, int k, int s) {
    const auto shape = pooled_shape(m.rows(), m.cols(), k, s);
    Matrix out(shape.rows, shape.cols);
    for (Eigen::Index i = 0; i < shape.rows; ++i) {
        for (Eigen::Index j = 0; j < shape.cols; ++j) {
            out(i, j) = m.block(i * s, j * s, k, k).maxCoeff();
        }
    }
    return out;
}

/// Seeded uniform(-bound, bound) fill.
inline Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
}

inline Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
}

}  // namespace m2s
