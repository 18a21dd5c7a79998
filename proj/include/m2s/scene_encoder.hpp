#pragma once

// Variable-length multi-shot scene encoder.
//
// Each shot embedding is one token. Tokens are projected to d_model, a
// learned class token is prepended, and a base position table (class row +
// n_base_positions rows) is linearly resampled to the scene length before
// being added. Pre-norm transformer blocks follow; the class token's final
// state goes through a linear head and is L2-normalized.

#include <cmath>
#include <string>
#include <vector>

#include "m2s/checkpoint.hpp"
#include "m2s/numerics/params.hpp"

namespace m2s {

struct EncoderConfig {
    int d_model = 64;
    int n_heads = 4;
    int n_layers = 2;
    int n_base_positions = 9;
    int out_dim = 128;
    double mlp_ratio = 4.0;
    double dropout = 0.0;
    std::uint64_t seed = 0;

    int head_dim() const { return d_model / n_heads; }
    int mlp_dim() const { return static_cast<int>(std::lround(mlp_ratio * d_model)); }

    void validate() const {
        if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) {
            throw InvalidArgument("encoder: d_model must be a positive multiple of n_heads");
        }
        if (n_layers < 0 || n_base_positions < 1 || out_dim < 1 || mlp_dim() < 1) {
            throw InvalidArgument("encoder: invalid layer/position/output sizes");
        }
        if (dropout < 0.0 || dropout >= 1.0) throw InvalidArgument("encoder: dropout must be in [0, 1)");
    }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EncoderConfig, d_model, n_heads, n_layers, n_base_positions, out_dim,
                                                mlp_ratio, dropout, seed)

/// target_len x n_base resampling weights: output row j reads source
/// coordinate j*(n_base-1)/(target_len-1) (0 when target_len == 1) and
/// blends the two neighbouring rows linearly.
inline Matrix interpolation_matrix(int n_base, int target_len) {
    if (target_len < 1) throw InvalidArgument("interpolate_positions: target_len must be >= 1");
    if (n_base < 1) throw InvalidArgument("interpolate_positions: base table must have >= 1 row");
    Matrix w = Matrix::Zero(target_len, n_base);
    for (int j = 0; j < target_len; ++j) {
        const double c = target_len == 1
                             ? 0.0
                             : static_cast<double>(j) * static_cast<double>(n_base - 1) / static_cast<double>(target_len - 1);
        const int lo = static_cast<int>(std::floor(c));
        const int hi = std::min(n_base - 1, static_cast<int>(std::ceil(c)));
        const double frac = c - lo;
        w(j, lo) += 1.0 - frac;
        w(j, hi) += frac;
    }
    return w;
}

/// (n_base+1) x d table -> (target_len+1) x d. Row 0 (class token) is copied.
inline Matrix interpolate_positions(const Matrix& pos_table, int target_len) {
    const int n_base = static_cast<int>(pos_table.rows()) - 1;
    Matrix out(target_len + 1, pos_table.cols());
    out.row(0) = pos_table.row(0);
    out.bottomRows(target_len) = interpolation_matrix(n_base, target_len) * pos_table.bottomRows(n_base);
    return out;
}

inline Var interpolate_positions(const Var& pos_table, int target_len) {
    const int n_base = static_cast<int>(pos_table.rows()) - 1;
    Tape& t = pos_table.tape();
    Var weights = t.constant(interpolation_matrix(n_base, target_len));
    return ad::concat_rows({ad::slice_rows(pos_table, 0, 1),
                            ad::matmul(weights, ad::slice_rows(pos_table, 1, n_base))});
}

struct SceneEncoder {
    struct Block {
        ParameterStore::Index ln1_gain, ln1_bias, ln2_gain, ln2_bias;
        ParameterStore::Index key;  // no bias: it would shift every logit in a row equally
        LinearIndex query, value, attn_out, mlp_in, mlp_out;
    };

    EncoderConfig config;
    int d_in = 0;
    ParameterStore params;
    LinearIndex token_proj{};
    ParameterStore::Index class_token = 0;
    ParameterStore::Index pos_table = 0;
    std::vector<Block> blocks;
    ParameterStore::Index final_gain = 0, final_bias = 0;
    LinearIndex head{};

    static SceneEncoder create(int d_in, const EncoderConfig& config) {
        config.validate();
        if (d_in < 1) throw InvalidArgument("encoder: d_in must be positive");
        SceneEncoder e;
        e.config = config;
        e.d_in = d_in;
        Rng rng(derive_seed(config.seed, 0x5CE7E));
        const int d = config.d_model;
        e.token_proj = add_linear(e.params, "token_proj", d_in, d, rng);
        e.class_token = e.params.add("class_token", normal_matrix(1, d, 0.02, rng));
        e.pos_table = e.params.add("pos_table", normal_matrix(config.n_base_positions + 1, d, 0.02, rng));
        for (int l = 0; l < config.n_layers; ++l) {
            const std::string p = "block" + std::to_string(l) + ".";
            Block b{};
            b.ln1_gain = e.params.add(p + "ln1.gain", Matrix::Ones(1, d));
            b.ln1_bias = e.params.add(p + "ln1.bias", Matrix::Zero(1, d));
            b.query = add_linear(e.params, p + "attn.query", d, d, rng);
            b.key = e.params.add(p + "attn.key.weight", uniform_matrix(d, d, 1.0 / std::sqrt(static_cast<double>(d)), rng));
            b.value = add_linear(e.params, p + "attn.value", d, d, rng);
            b.attn_out = add_linear(e.params, p + "attn.out", d, d, rng);
            b.ln2_gain = e.params.add(p + "ln2.gain", Matrix::Ones(1, d));
            b.ln2_bias = e.params.add(p + "ln2.bias", Matrix::Zero(1, d));
            b.mlp_in = add_linear(e.params, p + "mlp.in", d, config.mlp_dim(), rng);
            b.mlp_out = add_linear(e.params, p + "mlp.out", config.mlp_dim(), d, rng);
            e.blocks.push_back(b);
        }
        e.final_gain = e.params.add("final_ln.gain", Matrix::Ones(1, d));
        e.final_bias = e.params.add("final_ln.bias", Matrix::Zero(1, d));
        e.head = add_linear(e.params, "head", d, config.out_dim, rng);
        return e;
    }

    Json meta() const { return Json{{"kind", "scene_encoder"}, {"d_in", d_in}, {"config", config}}; }

    static SceneEncoder from_checkpoint(const Checkpoint& ck) {
        if (ck.meta.value("kind", std::string()) != "scene_encoder") {
            throw InvalidArgument("checkpoint is not a scene encoder");
        }
        SceneEncoder e = create(ck.meta.at("d_in").get<int>(), ck.meta.at("config").get<EncoderConfig>());
        if (!e.params.same_layout(ck.params)) throw InvalidArgument("checkpoint parameter layout mismatch");
        e.params = ck.params;
        return e;
    }
};

namespace detail {

inline Var self_attention(const Var& x, const std::vector<Var>& p, const SceneEncoder::Block& b,
                          const EncoderConfig& c) {
    Var q = apply_linear(x, p, b.query);
    Var k = ad::matmul(x, p[b.key]);
    Var v = apply_linear(x, p, b.value);
    const int dh = c.head_dim();
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> heads;
    heads.reserve(static_cast<std::size_t>(c.n_heads));
    for (int h = 0; h < c.n_heads; ++h) {
        Var qh = ad::slice_cols(q, h * dh, dh);
        Var kh = ad::slice_cols(k, h * dh, dh);
        Var vh = ad::slice_cols(v, h * dh, dh);
        Var attn = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt));
        heads.push_back(ad::matmul(attn, vh));
    }
    Var merged = c.n_heads == 1 ? heads.front() : ad::concat_cols(heads);
    return apply_linear(merged, p, b.attn_out);
}

}  // namespace detail

/// tokens: n x d_in, n >= 1. Returns a 1 x out_dim unit-norm row.
inline Var encode_scene(const Var& tokens, const std::vector<Var>& p, const SceneEncoder& enc, bool train,
                        Rng* rng) {
    const EncoderConfig& c = enc.config;
    if (tokens.rows() < 1) throw InvalidArgument("encode_scene: empty scene");
    if (tokens.cols() != enc.d_in) {
        throw ShapeError("encode_scene: token dim " + std::to_string(tokens.cols()) + ", encoder expects " +
                         std::to_string(enc.d_in));
    }
    const bool use_dropout = train && c.dropout > 0.0;
    if (use_dropout && rng == nullptr) throw InvalidArgument("encode_scene: training dropout needs an RNG");
    auto drop = [&](const Var& v) { return use_dropout ? ad::dropout(v, c.dropout, *rng, true) : v; };

    const int n = static_cast<int>(tokens.rows());
    Var x = ad::concat_rows({p[enc.class_token], apply_linear(tokens, p, enc.token_proj)});
    x = ad::add(x, interpolate_positions(p[enc.pos_table], n));
    for (const auto& b : enc.blocks) {
        Var y = ad::layer_norm_rows(x, p[b.ln1_gain], p[b.ln1_bias]);
        x = ad::add(x, drop(detail::self_attention(y, p, b, c)));
        Var z = ad::layer_norm_rows(x, p[b.ln2_gain], p[b.ln2_bias]);
        z = apply_linear(ad::gelu(apply_linear(z, p, b.mlp_in)), p, b.mlp_out);
        x = ad::add(x, drop(z));
    }
    Var cls = ad::slice_rows(ad::layer_norm_rows(x, p[enc.final_gain], p[enc.final_bias]), 0, 1);
    Var out = apply_linear(cls, p, enc.head);
    if (out.value().norm() == 0.0) {
        throw NumericalError("encode_scene: head output has zero norm (degenerate parameters)");
    }
    return ad::l2_normalize_rows(out);
}

/// Evaluation-mode encoding of one scene.
inline RowVector encode_scene(const Matrix& tokens, const SceneEncoder& enc) {
    Tape tape;
    const auto p = enc.params.bind(tape, false);
    return encode_scene(tape.constant(tokens), p, enc, false, nullptr).value().row(0);
}

inline RowVector encode_scene(const MatrixF& tokens, const SceneEncoder& enc) {
    return encode_scene(Matrix(tokens.cast<double>()), enc);
}

}  // namespace m2s
