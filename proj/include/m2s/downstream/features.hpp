#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "m2s/corpus.hpp"
#include "m2s/scene_encoder.hpp"

namespace m2s {

/// Maps an n x D_in block of shot embeddings to one feature row.
using SceneFeatureFn = std::function<RowVector(const Matrix& tokens)>;

/// Arithmetic mean of the shot rows in [start, end).
inline RowVector mean_pool_scene(const MatrixF& shots, int start, int end) {
    if (start >= end) throw InvalidArgument("mean_pool_scene: empty span");
    if (start < 0 || end > shots.rows()) throw InvalidArgument("mean_pool_scene: span out of bounds");
    return shots.middleRows(start, end - start).cast<double>().colwise().mean();
}

inline SceneFeatureFn mean_pool_features() {
    return [](const Matrix& tokens) -> RowVector { return tokens.colwise().mean(); };
}

inline SceneFeatureFn encoder_features(const SceneEncoder& encoder) {
    return [&encoder](const Matrix& tokens) -> RowVector { return encode_scene(tokens, encoder); };
}

inline Matrix scene_tokens(const MovieTable& movies, const std::string& id, int start, int end) {
    auto it = movies.find(id);
    if (it == movies.end()) throw CorpusError(id, "unknown movie");
    if (start < 0 || end > it->second.rows() || start >= end) {
        throw CorpusError(id, "span [" + std::to_string(start) + ", " + std::to_string(end) + ") out of bounds");
    }
    return it->second.middleRows(start, end - start).cast<double>();
}

/// One feature row per labeled scene, in input order.
inline Matrix labeled_scene_features(const MovieTable& movies, const std::vector<LabeledScene>& scenes,
                                     const SceneFeatureFn& features) {
    Matrix out;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        const auto& s = scenes[i];
        const RowVector f = features(scene_tokens(movies, s.movie_id, s.start, s.end));
        if (i == 0) out.resize(static_cast<Eigen::Index>(scenes.size()), f.size());
        out.row(static_cast<Eigen::Index>(i)) = f;
    }
    return out;
}

}  // namespace m2s
