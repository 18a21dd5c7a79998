#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "m2s/numerics/params.hpp"

namespace m2s {

enum class FiniteDifference {
    Central,
    // Ridders: central differences at eps, eps/1.4, ... extrapolated to zero
    // step. Resolves small gradients of large losses that plain central
    // differences bury in rounding noise. Smooth objectives only: the larger
    // steps would straddle a kink.
    Ridders,
};

struct GradCheckOptions {
    double eps = 1e-5;
    FiniteDifference method = FiniteDifference::Central;
    /// Coordinates checked per parameter; 0 checks all of them.
    std::size_t max_coords_per_param = 0;
    std::uint64_t seed = 0;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    Eigen::Index worst_index = -1;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t coords_checked = 0;
};

namespace detail {

/// g(h) is the objective with the coordinate shifted by h.
template <class G>
double ridders_derivative(G&& g, double h) {
    constexpr int kTable = 10;
    constexpr double kShrink = 1.4, kShrink2 = kShrink * kShrink, kSafe = 2.0;
    double a[kTable][kTable];
    a[0][0] = (g(h) - g(-h)) / (2.0 * h);
    double best = a[0][0], err = std::numeric_limits<double>::infinity();
    for (int i = 1; i < kTable; ++i) {
        h /= kShrink;
        a[0][i] = (g(h) - g(-h)) / (2.0 * h);
        double fac = kShrink2;
        for (int j = 1; j <= i; ++j) {
            a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
            fac *= kShrink2;
            const double e = std::max(std::abs(a[j][i] - a[j - 1][i]), std::abs(a[j][i] - a[j - 1][i - 1]));
            if (e <= err) {
                err = e;
                best = a[j][i];
            }
        }
        if (std::abs(a[i][i] - a[i - 1][i - 1]) >= kSafe * err) break;
    }
    return best;
}

}  // namespace detail

/// Compares reverse-mode gradients of a scalar function against central
/// differences. `f(tape, bound)` must build its graph from the bound
/// parameters and return a 1x1 Var. Relative error per coordinate is
/// |g - g_fd| / max(|g|, |g_fd|, 1e-8).
template <class F>
GradCheckResult grad_check(F&& f, ParameterStore& params, const GradCheckOptions& opt = {}) {
    if (!(opt.eps > 0.0 && opt.eps <= 1e-3)) throw InvalidArgument("grad_check eps must be in (0, 1e-3]");

    auto value_at = [&]() {
        Tape tape;
        const auto bound = params.bind(tape, false);
        const double v = f(tape, bound).scalar();
        if (!std::isfinite(v)) throw NumericalError("grad_check: objective is not finite");
        return v;
    };

    std::vector<Matrix> analytic;
    {
        Tape tape;
        const auto bound = params.bind(tape, true);
        Var out = f(tape, bound);
        if (!std::isfinite(out.scalar())) throw NumericalError("grad_check: objective is not finite");
        tape.backward(out);
        analytic = params.gradients(bound);
    }

    GradCheckResult result;
    Rng rng(opt.seed);
    for (std::size_t p = 0; p < params.size(); ++p) {
        Matrix& theta = params[p];
        std::vector<Eigen::Index> coords(static_cast<std::size_t>(theta.size()));
        std::iota(coords.begin(), coords.end(), Eigen::Index{0});
        if (opt.max_coords_per_param != 0 && coords.size() > opt.max_coords_per_param) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(opt.max_coords_per_param);
        }
        for (Eigen::Index c : coords) {
            const double saved = theta.data()[c];
            auto shifted = [&](double h) {
                theta.data()[c] = saved + h;
                const double v = value_at();
                theta.data()[c] = saved;
                return v;
            };
            const double numeric = opt.method == FiniteDifference::Ridders
                                       ? detail::ridders_derivative(shifted, opt.eps)
                                       : (shifted(opt.eps) - shifted(-opt.eps)) / (2.0 * opt.eps);
            const double g = analytic[p].data()[c];
            const double denom = std::max({std::abs(g), std::abs(numeric), 1e-8});
            const double rel = std::abs(g - numeric) / denom;
            ++result.coords_checked;
            if (result.worst_index < 0 || rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_param = params.name(p);
                result.worst_index = c;
                result.analytic = g;
                result.numeric = numeric;
            }
        }
    }
    return result;
}

}  // namespace m2s
