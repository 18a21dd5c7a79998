#pragma once

// Momentum-contrast training of the scene encoder on mined scene pairs.
//
// Per batch, in this order:
//   1. queries = query encoder(span on one side), keys = key encoder(other side), no key gradient
//   2. loss = mean InfoNCE with the positive key at index 0 and the queue as negatives
//   3. Adam step (linear warmup, decoupled weight decay) on the query encoder
//   4. key <- m * key + (1 - m) * query, every parameter
//   5. keys replace the oldest queue rows

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "m2s/corpus.hpp"
#include "m2s/numerics/optim.hpp"
#include "m2s/scene_encoder.hpp"
#include "m2s/scene_miner.hpp"

namespace m2s {

struct MoCoConfig {
    int queue_size = 4096;
    double momentum = 0.999;
    double temperature = 0.07;
    double lr = 5e-6;
    double weight_decay = 1e-8;
    int warmup_epochs = 5;
    int batch_size = 128;
    int epochs = 20;
    std::uint64_t seed = 0;

    void validate() const {
        if (batch_size < 1 || queue_size < 1) throw InvalidArgument("moco: batch_size and queue_size must be >= 1");
        if (queue_size % batch_size != 0) {
            throw InvalidArgument("moco: queue_size " + std::to_string(queue_size) +
                                  " must be divisible by batch_size " + std::to_string(batch_size));
        }
        if (momentum < 0.0 || momentum > 1.0) throw InvalidArgument("moco: momentum must be in [0, 1]");
        if (!(temperature > 0.0)) throw InvalidArgument("moco: temperature must be > 0");
        if (epochs < 0 || warmup_epochs < 0) throw InvalidArgument("moco: epochs must be >= 0");
    }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(MoCoConfig, queue_size, momentum, temperature, lr, weight_decay,
                                                warmup_epochs, batch_size, epochs, seed)

struct MoCoState {
    SceneEncoder query;
    SceneEncoder key;
    Matrix queue;  // K x out_dim, unit rows
    int ptr = 0;
    long step = 0;
    OptimizerState optimizer;
};

inline constexpr double kUnitNormTolerance = 1e-9;

/// Key encoder starts as an exact copy of the query encoder; the queue is
/// filled with seeded random unit vectors.
inline MoCoState init_moco_state(int d_in, const EncoderConfig& enc_config, const MoCoConfig& config) {
    config.validate();
    MoCoState s{SceneEncoder::create(d_in, enc_config), {}, {}, 0, 0, {}};
    s.key = s.query;
    Rng rng(derive_seed(config.seed, 0x0E0E));
    s.queue = normal_matrix(config.queue_size, enc_config.out_dim, 1.0, rng);
    s.queue.rowwise().normalize();
    s.optimizer.kind = OptimizerKind::Adam;
    s.optimizer.lr = config.lr;
    s.optimizer.weight_decay = config.weight_decay;
    s.optimizer.warmup_epochs = config.warmup_epochs;
    return s;
}

struct InfoNceResult {
    double loss = 0.0;
    RowVector logits;  // [q.k0, q.queue_1, ..., q.queue_K] / tau
};

/// -log softmax(logits)[0], computed with a max shift.
inline InfoNceResult infonce_loss(const RowVector& q, const RowVector& k0, const Matrix& queue, double tau) {
    if (!(tau > 0.0)) throw InvalidArgument("infonce_loss: temperature must be > 0");
    if (k0.size() != q.size() || queue.cols() != q.size()) throw ShapeError("infonce_loss: dimension mismatch");
    InfoNceResult r;
    r.logits.resize(queue.rows() + 1);
    r.logits(0) = q.dot(k0) / tau;
    r.logits.tail(queue.rows()) = (queue * q.transpose()).transpose() / tau;
    const double mx = r.logits.maxCoeff();
    const double lse = mx + std::log((r.logits.array() - mx).exp().sum());
    r.loss = lse - r.logits(0);
    return r;
}

/// B x (1+K) logits for a batch of queries: column 0 is q.k+, the rest q
/// against the queue, all divided by tau. Keys and queue are constants.
inline Var infonce_logits(const Var& q, const Matrix& keys, const Matrix& queue, double tau) {
    if (keys.rows() != q.rows() || keys.cols() != q.cols() || queue.cols() != q.cols()) {
        throw ShapeError("infonce_logits: query " + shape_string(q.rows(), q.cols()) + ", keys " + shape_string(keys) +
                         ", queue " + shape_string(queue));
    }
    Tape& t = q.tape();
    Var positive = ad::row_sum(ad::mul(q, t.constant(keys)));
    return ad::scale(ad::concat_cols({positive, ad::matmul_nt(q, t.constant(queue))}), 1.0 / tau);
}

/// Mean InfoNCE over the batch; the positive is always column 0.
inline Var infonce_batch_loss(const Var& logits) {
    return ad::softmax_cross_entropy(logits, std::vector<int>(static_cast<std::size_t>(logits.rows()), 0));
}

/// key <- m * key + (1 - m) * query, elementwise over every parameter.
inline void momentum_update(MoCoState& state, double m) {
    if (!state.key.params.same_layout(state.query.params)) throw ShapeError("momentum_update: layout mismatch");
    const double one_minus = 1.0 - m;
    for (std::size_t i = 0; i < state.key.params.size(); ++i) {
        Matrix& k = state.key.params[i];
        const Matrix& q = state.query.params[i];
        for (Eigen::Index j = 0; j < k.size(); ++j) k.data()[j] = m * k.data()[j] + one_minus * q.data()[j];
    }
}

/// Replaces rows [ptr, ptr + batch) with `keys` and advances ptr mod K.
inline void enqueue(MoCoState& state, const Matrix& keys) {
    const Eigen::Index k = state.queue.rows();
    if (keys.cols() != state.queue.cols()) throw ShapeError("enqueue: key dimension mismatch");
    if (keys.rows() > k) throw ShapeError("enqueue: batch larger than queue");
    if (state.ptr + keys.rows() > k) throw ShapeError("enqueue: batch would wrap; K must be divisible by batch");
    for (Eigen::Index i = 0; i < keys.rows(); ++i) {
        if (std::abs(keys.row(i).norm() - 1.0) > kUnitNormTolerance) {
            throw InvalidArgument("enqueue: key row " + std::to_string(i) + " is not unit-norm");
        }
    }
    state.queue.middleRows(state.ptr, keys.rows()) = keys;
    state.ptr = static_cast<int>((state.ptr + keys.rows()) % k);
}

struct ContrastiveEpoch {
    int epoch = 0;
    double loss = 0.0;
    double top1 = 0.0;
    double top5 = 0.0;
};

inline Json to_json(const ContrastiveEpoch& e) {
    return Json{{"epoch", e.epoch}, {"loss", e.loss}, {"top1", e.top1}, {"top5", e.top5}};
}

struct ContrastiveTraining {
    MoCoState state;
    std::vector<ContrastiveEpoch> log;
    const SceneEncoder& encoder() const { return state.query; }
};

/// Called after every completed training step (after enqueue).
using MoCoStepObserver = std::function<void(const MoCoState&)>;

namespace detail {

inline Matrix span_tokens(const MovieTable& movies, const std::string& id, const Span& span) {
    auto it = movies.find(id);
    if (it == movies.end()) throw CorpusError(id, "scene pair references unknown movie");
    if (span.start < 0 || span.end <= span.start || span.end > it->second.rows()) {
        throw CorpusError(id, "scene span [" + std::to_string(span.start) + ", " + std::to_string(span.end) +
                                  ") out of bounds");
    }
    return it->second.middleRows(span.start, span.end - span.start).cast<double>();
}

/// Number of logits strictly greater than the positive logit.
inline int positive_rank(const Matrix& logits, Eigen::Index row) {
    int rank = 0;
    for (Eigen::Index j = 1; j < logits.cols(); ++j) rank += logits(row, j) > logits(row, 0) ? 1 : 0;
    return rank;
}

}  // namespace detail

inline ContrastiveTraining train_contrastive(const MovieTable& movies, const std::vector<ScenePair>& p_scene,
                                             const MoCoConfig& config, const EncoderConfig& enc_config,
                                             const MoCoStepObserver& observer = {}) {
    config.validate();
    if (p_scene.size() < static_cast<std::size_t>(config.batch_size)) {
        throw InvalidArgument("train_contrastive: " + std::to_string(p_scene.size()) +
                              " scene pairs, fewer than batch_size " + std::to_string(config.batch_size));
    }
    if (movies.empty()) throw InvalidArgument("train_contrastive: empty corpus");
    const int d_in = static_cast<int>(movies.begin()->second.cols());

    ContrastiveTraining result{init_moco_state(d_in, enc_config, config), {}};
    MoCoState& st = result.state;

    const auto batch = static_cast<std::size_t>(config.batch_size);
    const std::size_t batches = p_scene.size() / batch;
    st.optimizer.steps_per_epoch = static_cast<int>(batches);

    // Materialize tokens once.
    std::vector<Matrix> tokens_a, tokens_b;
    for (const auto& p : p_scene) {
        tokens_a.push_back(detail::span_tokens(movies, p.movie_a, p.span_a));
        tokens_b.push_back(detail::span_tokens(movies, p.movie_b, p.span_b));
    }

    Rng dropout_rng(derive_seed(config.seed, 0xD2));
    std::vector<std::size_t> order(p_scene.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(config.seed, 0x6000 + static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        const bool a_is_query = epoch % 2 == 1;
        const auto& q_tokens = a_is_query ? tokens_a : tokens_b;
        const auto& k_tokens = a_is_query ? tokens_b : tokens_a;

        double loss_sum = 0.0;
        long hits1 = 0, hits5 = 0, seen = 0;
        for (std::size_t b = 0; b < batches; ++b) {
            // Keys: current key encoder, evaluation mode, outside the gradient graph.
            Matrix keys(static_cast<Eigen::Index>(batch), enc_config.out_dim);
            {
                Tape key_tape;
                const auto kp = st.key.params.bind(key_tape, false);
                for (std::size_t i = 0; i < batch; ++i) {
                    const std::size_t idx = order[b * batch + i];
                    keys.row(static_cast<Eigen::Index>(i)) =
                        encode_scene(key_tape.constant(k_tokens[idx]), kp, st.key, false, nullptr).value();
                }
            }

            Tape tape;
            const auto qp = st.query.params.bind(tape, true);
            std::vector<Var> queries;
            for (std::size_t i = 0; i < batch; ++i) {
                const std::size_t idx = order[b * batch + i];
                queries.push_back(encode_scene(tape.constant(q_tokens[idx]), qp, st.query, true, &dropout_rng));
            }
            Var logits = infonce_logits(ad::concat_rows(queries), keys, st.queue, config.temperature);
            Var loss = infonce_batch_loss(logits);
            if (!std::isfinite(loss.scalar())) throw NumericalError("train_contrastive: loss diverged");

            for (Eigen::Index i = 0; i < logits.rows(); ++i) {
                const int rank = detail::positive_rank(logits.value(), i);
                hits1 += rank == 0 ? 1 : 0;
                hits5 += rank < 5 ? 1 : 0;
            }
            seen += static_cast<long>(batch);
            loss_sum += loss.scalar();

            tape.backward(loss);
            const auto grads = st.query.params.gradients(qp);
            adam_step(st.query.params, grads, st.optimizer);
            momentum_update(st, config.momentum);
            enqueue(st, keys);
            ++st.step;
            if (observer) observer(st);
        }
        ContrastiveEpoch e;
        e.epoch = epoch;
        if (batches > 0) {
            e.loss = loss_sum / static_cast<double>(batches);
            e.top1 = static_cast<double>(hits1) / static_cast<double>(seen);
            e.top5 = static_cast<double>(hits5) / static_cast<double>(seen);
        }
        result.log.push_back(e);
    }
    return result;
}

}  // namespace m2s
