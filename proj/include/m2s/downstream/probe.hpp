#pragma once

// MLP probes over frozen features: hidden ReLU layers with dropout and an
// output layer sized by the objective.

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "m2s/downstream/metrics.hpp"
#include "m2s/numerics/optim.hpp"
#include "m2s/numerics/params.hpp"

namespace m2s {

enum class ProbeObjective { SoftmaxCrossEntropy, SquaredError, BinaryCrossEntropy };

NLOHMANN_JSON_SERIALIZE_ENUM(ProbeObjective, {
                                                 {ProbeObjective::SoftmaxCrossEntropy, "softmax-ce"},
                                                 {ProbeObjective::SquaredError, "squared-error"},
                                                 {ProbeObjective::BinaryCrossEntropy, "binary-ce"},
                                             })

struct ProbeConfig {
    std::vector<int> hidden_dims{512, 512};
    double lr = 0.1;
    int batch_size = 64;
    int epochs = 400;
    double dropout = 0.25;
    ProbeObjective objective = ProbeObjective::SoftmaxCrossEntropy;
    double momentum = 0.0;

    void validate() const {
        for (int h : hidden_dims) {
            if (h < 1) throw InvalidArgument("probe: hidden dims must be positive");
        }
        if (dropout < 0.0 || dropout >= 1.0) throw InvalidArgument("probe: dropout must be in [0, 1)");
        if (batch_size < 1 || epochs < 0) throw InvalidArgument("probe: batch_size >= 1 and epochs >= 0");
    }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ProbeConfig, hidden_dims, lr, batch_size, epochs, dropout, objective,
                                                momentum)

/// Supervision for a probe. Class targets use `classes` (with
/// `n_classes`); regression and multi-label targets use `values`
/// (n x outputs; 0/1 entries for multi-label).
struct ProbeTargets {
    ProbeObjective objective = ProbeObjective::SoftmaxCrossEntropy;
    std::vector<int> classes;
    int n_classes = 0;
    Matrix values;

    Eigen::Index count() const {
        return objective == ProbeObjective::SoftmaxCrossEntropy ? static_cast<Eigen::Index>(classes.size())
                                                                : values.rows();
    }
    Eigen::Index outputs() const {
        return objective == ProbeObjective::SoftmaxCrossEntropy ? n_classes : values.cols();
    }

    static ProbeTargets classification(std::vector<int> labels, int n_classes) {
        ProbeTargets t;
        t.objective = ProbeObjective::SoftmaxCrossEntropy;
        t.classes = std::move(labels);
        t.n_classes = n_classes;
        return t;
    }
    static ProbeTargets regression(Matrix values) {
        ProbeTargets t;
        t.objective = ProbeObjective::SquaredError;
        t.values = std::move(values);
        return t;
    }
    static ProbeTargets multilabel(Matrix bits) {
        ProbeTargets t;
        t.objective = ProbeObjective::BinaryCrossEntropy;
        t.values = std::move(bits);
        return t;
    }

    ProbeTargets subset(const std::vector<std::size_t>& rows) const {
        ProbeTargets t;
        t.objective = objective;
        t.n_classes = n_classes;
        if (objective == ProbeObjective::SoftmaxCrossEntropy) {
            for (auto r : rows) t.classes.push_back(classes[r]);
        } else {
            t.values.resize(static_cast<Eigen::Index>(rows.size()), values.cols());
            for (std::size_t i = 0; i < rows.size(); ++i) {
                t.values.row(static_cast<Eigen::Index>(i)) = values.row(static_cast<Eigen::Index>(rows[i]));
            }
        }
        return t;
    }
};

struct Probe {
    ProbeConfig config;
    int in_dim = 0;
    int out_dim = 0;
    ParameterStore params;
    std::vector<LinearIndex> layers;

    static Probe create(int in_dim, int out_dim, const ProbeConfig& config, std::uint64_t seed) {
        config.validate();
        Probe p;
        p.config = config;
        p.in_dim = in_dim;
        p.out_dim = out_dim;
        Rng rng(derive_seed(seed, 0x9B0BE));
        int prev = in_dim;
        for (std::size_t i = 0; i < config.hidden_dims.size(); ++i) {
            p.layers.push_back(add_linear(p.params, "hidden" + std::to_string(i), prev, config.hidden_dims[i], rng));
            prev = config.hidden_dims[i];
        }
        p.layers.push_back(add_linear(p.params, "output", prev, out_dim, rng));
        return p;
    }
};

inline Var probe_forward(const Var& x, const std::vector<Var>& bound, const Probe& probe, bool train, Rng* rng) {
    Var h = x;
    for (std::size_t i = 0; i + 1 < probe.layers.size(); ++i) {
        h = ad::relu(apply_linear(h, bound, probe.layers[i]));
        if (train) h = ad::dropout(h, probe.config.dropout, *rng, true);
    }
    return apply_linear(h, bound, probe.layers.back());
}

/// Raw outputs (logits or regression values), evaluation mode.
inline Matrix probe_predict(const Probe& probe, const Matrix& features) {
    if (features.cols() != probe.in_dim) throw ShapeError("probe_predict: feature dimension mismatch");
    Tape tape;
    const auto bound = probe.params.bind(tape, false);
    return probe_forward(tape.constant(features), bound, probe, false, nullptr).value();
}

namespace detail {

inline void check_probe_inputs(const Matrix& features, const ProbeTargets& targets) {
    if (features.rows() != targets.count()) {
        throw ShapeError("probe: " + std::to_string(features.rows()) + " feature rows but " +
                         std::to_string(targets.count()) + " labels");
    }
    if (targets.objective == ProbeObjective::SoftmaxCrossEntropy) {
        if (targets.n_classes < 2) throw InvalidArgument("probe: classification needs >= 2 classes");
        for (int c : targets.classes) {
            if (c < 0 || c >= targets.n_classes) throw InvalidArgument("probe: class label out of range");
        }
    }
}

inline Var probe_loss(const Var& out, const ProbeTargets& t) {
    switch (t.objective) {
        case ProbeObjective::SoftmaxCrossEntropy: return ad::softmax_cross_entropy(out, t.classes);
        case ProbeObjective::SquaredError: return ad::mse(out, t.values);
        case ProbeObjective::BinaryCrossEntropy: return ad::bce_with_logits(out, t.values);
    }
    throw InvalidArgument("probe: unknown objective");
}

}  // namespace detail

/// Mini-batch SGD; the config's objective must match the targets.
inline Probe train_probe(const Matrix& features, const ProbeTargets& targets, const ProbeConfig& config,
                         std::uint64_t seed) {
    detail::check_probe_inputs(features, targets);
    if (config.objective != targets.objective) throw InvalidArgument("probe: config objective does not match targets");
    Probe probe = Probe::create(static_cast<int>(features.cols()), static_cast<int>(targets.outputs()), config, seed);
    const auto n = static_cast<std::size_t>(features.rows());
    if (n == 0) return probe;
    const auto bs = static_cast<std::size_t>(config.batch_size);
    const std::size_t batches = (n + bs - 1) / bs;

    OptimizerState opt;
    opt.kind = OptimizerKind::Sgd;
    opt.lr = config.lr;
    opt.momentum = config.momentum;
    Rng dropout_rng(derive_seed(seed, 0xD3));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(seed, 0x7000 + static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (std::size_t b = 0; b < batches; ++b) {
            const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(b * bs),
                                                order.begin() + static_cast<std::ptrdiff_t>(std::min(n, (b + 1) * bs)));
            Matrix x(static_cast<Eigen::Index>(rows.size()), features.cols());
            for (std::size_t i = 0; i < rows.size(); ++i) {
                x.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(rows[i]));
            }
            Tape tape;
            const auto bound = probe.params.bind(tape, true);
            Var loss = detail::probe_loss(probe_forward(tape.constant(x), bound, probe, true, &dropout_rng),
                                          targets.subset(rows));
            if (!std::isfinite(loss.scalar())) throw NumericalError("train_probe: loss diverged");
            tape.backward(loss);
            sgd_step(probe.params, probe.params.gradients(bound), opt);
        }
    }
    return probe;
}

/// top1 for classification, mse for regression, mAP for multi-label.
inline MetricReport eval_probe(const Probe& probe, const Matrix& features, const ProbeTargets& targets,
                               const std::string& task_id) {
    detail::check_probe_inputs(features, targets);
    if (features.rows() == 0) throw InvalidArgument("eval_probe: no samples");
    const Matrix out = probe_predict(probe, features);
    MetricReport r;
    r.task_id = task_id;
    r.support = static_cast<int>(features.rows());
    switch (targets.objective) {
        case ProbeObjective::SoftmaxCrossEntropy: {
            int correct = 0;
            for (Eigen::Index i = 0; i < out.rows(); ++i) {
                Eigen::Index best = 0;
                out.row(i).maxCoeff(&best);
                correct += static_cast<int>(best) == targets.classes[static_cast<std::size_t>(i)] ? 1 : 0;
            }
            r.metric = "top1";
            r.value = static_cast<double>(correct) / static_cast<double>(out.rows());
            break;
        }
        case ProbeObjective::SquaredError:
            r.metric = "mse";
            r.value = (out - targets.values).squaredNorm() / static_cast<double>(out.size());
            break;
        case ProbeObjective::BinaryCrossEntropy:
            r.metric = "mAP";
            r.value = multilabel_map(out, targets.values).map;
            break;
    }
    return r;
}

}  // namespace m2s
