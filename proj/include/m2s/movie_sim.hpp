#pragma once

// Movie-level similarity network.
//
//   E = fc2(dropout(relu(fc1(x))))          per shot, x zero-padded/truncated to pad_len rows
//   A = E(x1) E(x2)^T                       shot-adjacency, pad_len x pad_len
//   V = flatten(maxpool(avgpool(A)))        scene-adjacency, then best scene pair per neighbourhood
//   logits = V W_out + b_out                class 1 = similar
//
// Padded rows are zeros before fc1, so they still carry the fc biases into
// A; nothing is masked.

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "m2s/checkpoint.hpp"
#include "m2s/corpus.hpp"
#include "m2s/numerics/optim.hpp"
#include "m2s/numerics/params.hpp"
#include "m2s/similarity.hpp"

namespace m2s {

struct MovieSimConfig {
    int pad_len = 1024;
    int hidden_dim = 512;
    double dropout = 0.5;
    int k_avg = 16;
    int s_avg = 8;
    int k_max = 16;
    int s_max = 8;
    double lr = 0.1;
    int batch_size = 256;
    int epochs = 20;
    double momentum = 0.0;
    std::uint64_t seed = 0;

    int scene_side() const { return (pad_len - k_avg) / s_avg + 1; }
    int pooled_side() const { return (scene_side() - k_max) / s_max + 1; }
    int flatten_dim() const { return pooled_side() * pooled_side(); }

    void validate() const {
        if (pad_len < k_avg) throw InvalidArgument("movie_sim: pad_len must be >= k_avg");
        if (k_avg < 1 || s_avg < 1 || k_max < 1 || s_max < 1) {
            throw InvalidArgument("movie_sim: pooling kernels and strides must be positive");
        }
        if (scene_side() < k_max) throw InvalidArgument("movie_sim: scene-adjacency side smaller than k_max");
        if (hidden_dim < 1) throw InvalidArgument("movie_sim: hidden_dim must be positive");
        if (dropout < 0.0 || dropout >= 1.0) throw InvalidArgument("movie_sim: dropout must be in [0, 1)");
        if (batch_size < 1 || epochs < 0) throw InvalidArgument("movie_sim: batch_size >= 1 and epochs >= 0");
    }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(MovieSimConfig, pad_len, hidden_dim, dropout, k_avg, s_avg, k_max,
                                                s_max, lr, batch_size, epochs, momentum, seed)

/// Trainable part of the movie-similarity network: the two-layer shot
/// encoder plus the output layer.
struct MovieSimModel {
    MovieSimConfig config;
    int d_in = 0;
    ParameterStore params;
    LinearIndex fc1{}, fc2{}, out{};

    static MovieSimModel create(int d_in, const MovieSimConfig& config) {
        config.validate();
        if (d_in < 1) throw InvalidArgument("movie_sim: d_in must be positive");
        MovieSimModel m;
        m.config = config;
        m.d_in = d_in;
        Rng rng(derive_seed(config.seed, 0x1417));
        m.fc1 = add_linear(m.params, "fc1", d_in, config.hidden_dim, rng);
        m.fc2 = add_linear(m.params, "fc2", config.hidden_dim, config.hidden_dim, rng);
        m.out = add_linear(m.params, "out", config.flatten_dim(), 2, rng);
        return m;
    }

    Json meta() const { return Json{{"kind", "movie_sim"}, {"d_in", d_in}, {"config", config}}; }

    static MovieSimModel from_checkpoint(const Checkpoint& ck) {
        if (ck.meta.value("kind", std::string()) != "movie_sim") {
            throw InvalidArgument("checkpoint is not a movie-similarity model");
        }
        MovieSimModel m = create(ck.meta.at("d_in").get<int>(), ck.meta.at("config").get<MovieSimConfig>());
        if (!m.params.same_layout(ck.params)) throw InvalidArgument("checkpoint parameter layout mismatch");
        m.params = ck.params;
        return m;
    }
};

/// Zero-pads or truncates to exactly `pad_len` rows, in float64.
inline Matrix pad_shots(const MatrixF& x, int pad_len) {
    Matrix out = Matrix::Zero(pad_len, x.cols());
    const Eigen::Index keep = std::min<Eigen::Index>(pad_len, x.rows());
    out.topRows(keep) = x.topRows(keep).cast<double>();
    return out;
}

/// fc1 -> ReLU -> dropout (train only) -> fc2, row-wise.
inline Var embed_shots(const Var& x, const std::vector<Var>& bound, const MovieSimModel& model, bool train,
                       Rng* rng) {
    if (x.cols() != model.d_in) {
        throw ShapeError("embed_shots: input dim " + std::to_string(x.cols()) + ", model expects " +
                         std::to_string(model.d_in));
    }
    Var h = ad::relu(apply_linear(x, bound, model.fc1));
    if (train) {
        if (rng == nullptr) throw InvalidArgument("embed_shots: training mode needs an RNG");
        h = ad::dropout(h, model.config.dropout, *rng, true);
    }
    return apply_linear(h, bound, model.fc2);
}

/// Evaluation-mode shot embeddings, M x hidden_dim.
inline Matrix embed_shots(const Matrix& x, const MovieSimModel& model) {
    Tape tape;
    const auto bound = model.params.bind(tape, false);
    return embed_shots(tape.constant(x), bound, model, false, nullptr).value();
}

/// Logits from two already-embedded movies.
inline Var similarity_head(const Var& e1, const Var& e2, const std::vector<Var>& bound, const MovieSimModel& model) {
    const auto& c = model.config;
    Var a = ad::matmul_nt(e1, e2);
    Var b = ad::avg_pool2d(a, c.k_avg, c.s_avg);
    Var v = ad::flatten(ad::max_pool2d(b, c.k_max, c.s_max));
    return apply_linear(v, bound, model.out);
}

/// Inputs must already be padded to pad_len rows. Returns 1 x 2 logits.
inline Var forward_pair(const Var& x1, const Var& x2, const std::vector<Var>& bound, const MovieSimModel& model,
                        bool train, Rng* rng) {
    Var e1 = embed_shots(x1, bound, model, train, rng);
    Var e2 = embed_shots(x2, bound, model, train, rng);
    return similarity_head(e1, e2, bound, model);
}

inline RowVector pair_logits(const MatrixF& x1, const MatrixF& x2, const MovieSimModel& model) {
    Tape tape;
    const auto bound = model.params.bind(tape, false);
    Var l = forward_pair(tape.constant(pad_shots(x1, model.config.pad_len)),
                         tape.constant(pad_shots(x2, model.config.pad_len)), bound, model, false, nullptr);
    return l.value().row(0);
}

struct MovieSimEpoch {
    int epoch = 0;
    double loss = 0.0;
    double accuracy = 0.0;
};

inline Json to_json(const MovieSimEpoch& e) {
    return Json{{"epoch", e.epoch}, {"loss", e.loss}, {"acc", e.accuracy}};
}

struct MovieSimTraining {
    MovieSimModel model;
    std::vector<MovieSimEpoch> log;
};

namespace detail {

inline void check_pairs_for_training(const MovieTable& movies, const std::vector<SimilarityPair>& pairs) {
    if (pairs.empty()) throw InvalidArgument("train_movie_sim: no pairs");
    bool pos = false, neg = false;
    for (const auto& p : pairs) {
        if (!movies.contains(p.movie_a)) throw CorpusError(p.movie_a, "pair references unknown movie");
        if (!movies.contains(p.movie_b)) throw CorpusError(p.movie_b, "pair references unknown movie");
        pos = pos || p.label == 1;
        neg = neg || p.label == 0;
    }
    if (!pos || !neg) throw InvalidArgument("train_movie_sim: pair list must contain both labels");
}

}  // namespace detail

/// Evaluation-mode mean cross-entropy and accuracy over `pairs`.
inline MovieSimEpoch evaluate_movie_sim(const MovieTable& movies, const std::vector<SimilarityPair>& pairs,
                                        const MovieSimModel& model) {
    Tape tape;
    const auto bound = model.params.bind(tape, false);
    std::map<std::string, Var> embedded;
    auto embed = [&](const std::string& id) {
        auto it = embedded.find(id);
        if (it != embedded.end()) return it->second;
        Var e = embed_shots(tape.constant(pad_shots(movies.at(id), model.config.pad_len)), bound, model, false,
                            nullptr);
        embedded.emplace(id, e);
        return e;
    };
    std::vector<Var> logits;
    std::vector<int> targets;
    int correct = 0;
    for (const auto& p : pairs) {
        Var l = similarity_head(embed(p.movie_a), embed(p.movie_b), bound, model);
        const int predicted = l.value()(0, 1) > l.value()(0, 0) ? 1 : 0;
        correct += predicted == p.label ? 1 : 0;
        logits.push_back(l);
        targets.push_back(p.label);
    }
    MovieSimEpoch e;
    e.loss = ad::softmax_cross_entropy(ad::concat_rows(logits), targets).scalar();
    e.accuracy = static_cast<double>(correct) / static_cast<double>(pairs.size());
    return e;
}

/// Mini-batch SGD on 2-class cross-entropy. The per-epoch log reports
/// evaluation-mode loss and accuracy over all pairs after the epoch.
inline MovieSimTraining train_movie_sim(const MovieTable& movies, const std::vector<SimilarityPair>& pairs,
                                        const MovieSimConfig& config) {
    detail::check_pairs_for_training(movies, pairs);
    const int d_in = static_cast<int>(movies.begin()->second.cols());
    MovieSimTraining result{MovieSimModel::create(d_in, config), {}};
    MovieSimModel& model = result.model;

    std::map<std::string, Matrix> padded;
    for (const auto& p : pairs) {
        for (const auto* id : {&p.movie_a, &p.movie_b}) {
            if (!padded.contains(*id)) padded.emplace(*id, pad_shots(movies.at(*id), config.pad_len));
        }
    }

    const std::size_t batches =
        (pairs.size() + static_cast<std::size_t>(config.batch_size) - 1) / static_cast<std::size_t>(config.batch_size);
    OptimizerState opt;
    opt.kind = OptimizerKind::Sgd;
    opt.lr = config.lr;
    opt.momentum = config.momentum;
    opt.steps_per_epoch = static_cast<int>(batches);

    Rng dropout_rng(derive_seed(config.seed, 0xD709));
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(config.seed, 0x5000 + static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (std::size_t b = 0; b < batches; ++b) {
            const std::size_t lo = b * static_cast<std::size_t>(config.batch_size);
            const std::size_t hi = std::min(pairs.size(), lo + static_cast<std::size_t>(config.batch_size));
            Tape tape;
            const auto bound = model.params.bind(tape, true);
            std::vector<Var> logits;
            std::vector<int> targets;
            for (std::size_t i = lo; i < hi; ++i) {
                const auto& p = pairs[order[i]];
                logits.push_back(forward_pair(tape.constant(padded.at(p.movie_a)), tape.constant(padded.at(p.movie_b)),
                                              bound, model, true, &dropout_rng));
                targets.push_back(p.label);
            }
            Var loss = ad::softmax_cross_entropy(ad::concat_rows(logits), targets);
            if (!std::isfinite(loss.scalar())) throw NumericalError("train_movie_sim: loss diverged");
            tape.backward(loss);
            const auto grads = model.params.gradients(bound);
            sgd_step(model.params, grads, opt);
        }
        MovieSimEpoch e = evaluate_movie_sim(movies, pairs, model);
        e.epoch = epoch;
        result.log.push_back(e);
    }
    return result;
}

}  // namespace m2s
