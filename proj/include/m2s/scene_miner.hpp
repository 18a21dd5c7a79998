#pragma once

// Mining of similar scene pairs from similar movie pairs with the trained
// shot encoder. Movies are not padded here; all shots take part.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "m2s/movie_sim.hpp"

namespace m2s {

struct MiningConfig {
    int window = 9;
    int stride = 1;
    double keep_fraction = 0.5;

    void validate() const {
        if (window < 1) throw InvalidArgument("mining: window must be >= 1");
        if (stride < 1) throw InvalidArgument("mining: stride must be >= 1");
        if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
            throw InvalidArgument("mining: keep_fraction must be in (0, 1]");
        }
    }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(MiningConfig, window, stride, keep_fraction)

struct Span {
    int start = 0;
    int end = 0;  // exclusive
    friend bool operator==(const Span&, const Span&) = default;
};

struct ScenePair {
    std::string movie_a;
    std::string movie_b;
    Span span_a;
    Span span_b;
    double score = 0.0;
    friend bool operator==(const ScenePair&, const ScenePair&) = default;
};

class SkipError : public CorpusError {
public:
    using CorpusError::CorpusError;
};

/// Window-mean of the unpadded shot-adjacency matrix: entry (i, j) scores
/// the scene pair starting at shots (i*stride, j*stride).
inline Matrix scene_scores_from_adjacency(const Matrix& adjacency, const MiningConfig& config) {
    config.validate();
    return avg_pool2d(adjacency, config.window, config.stride);
}

inline Matrix scene_adjacency(const ShotEmbeddingMatrix& x1, const ShotEmbeddingMatrix& x2,
                              const MovieSimModel& model, const MiningConfig& config) {
    config.validate();
    for (const auto* x : {&x1, &x2}) {
        if (x->shot_count() < config.window) {
            throw SkipError(x->movie_id, "movie has " + std::to_string(x->shot_count()) + " shots, shorter than window " +
                                             std::to_string(config.window));
        }
    }
    const Matrix e1 = embed_shots(Matrix(x1.data.cast<double>()), model);
    const Matrix e2 = embed_shots(Matrix(x2.data.cast<double>()), model);
    return scene_scores_from_adjacency(e1 * e2.transpose(), config);
}

/// Greedy non-overlapping selection. Candidates are all cells ranked by
/// score (descending; ties by ascending row, then column). Only the top
/// ceil(keep_fraction * cells) are examined; a candidate is accepted when
/// its span overlaps no accepted span in either movie. Spans that merely
/// touch do not overlap.
inline std::vector<ScenePair> select_scene_pairs(const Matrix& scores, const std::string& movie_a,
                                                 const std::string& movie_b, const MiningConfig& config) {
    config.validate();
    if (scores.size() == 0) throw InvalidArgument("select_scene_pairs: empty score matrix");
    const Eigen::Index cells = scores.size();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(cells));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    // Row-major index order is (row, col) order, so a stable sort keeps ties ascending.
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index x, Eigen::Index y) { return scores.data()[x] > scores.data()[y]; });
    const auto examine = static_cast<std::size_t>(std::ceil(config.keep_fraction * static_cast<double>(cells)));

    const int w = config.window, s = config.stride;
    const auto len_a = static_cast<std::size_t>((scores.rows() - 1) * s + w);
    const auto len_b = static_cast<std::size_t>((scores.cols() - 1) * s + w);
    std::vector<char> used_a(len_a, 0), used_b(len_b, 0);
    auto free_range = [w](const std::vector<char>& used, int start) {
        return std::none_of(used.begin() + start, used.begin() + start + w, [](char c) { return c != 0; });
    };

    std::vector<ScenePair> out;
    for (std::size_t r = 0; r < std::min(examine, order.size()); ++r) {
        const Eigen::Index idx = order[r];
        const int i = static_cast<int>(idx / scores.cols());
        const int j = static_cast<int>(idx % scores.cols());
        const int sa = i * s, sb = j * s;
        if (!free_range(used_a, sa) || !free_range(used_b, sb)) continue;
        std::fill(used_a.begin() + sa, used_a.begin() + sa + w, 1);
        std::fill(used_b.begin() + sb, used_b.begin() + sb + w, 1);
        out.push_back({movie_a, movie_b, {sa, sa + w}, {sb, sb + w}, scores(i, j)});
    }
    return out;
}

struct MiningResult {
    std::vector<ScenePair> pairs;
    std::vector<std::string> skipped;  // one diagnostic per skipped movie pair
};

/// Runs selection over every positive movie pair, in (movie_a, movie_b)
/// order. Pairs involving a movie shorter than the window are skipped and
/// reported, not fatal.
inline MiningResult mine_corpus(const MovieTable& movies, const std::vector<SimilarityPair>& positives,
                                const MovieSimModel& model, const MiningConfig& config) {
    config.validate();
    std::vector<SimilarityPair> sorted = positives;
    std::sort(sorted.begin(), sorted.end(), [](const SimilarityPair& x, const SimilarityPair& y) {
        return pair_key(x.movie_a, x.movie_b) < pair_key(y.movie_a, y.movie_b);
    });

    std::map<std::string, Matrix> embedded;
    auto embed = [&](const std::string& id) -> const Matrix& {
        auto it = embedded.find(id);
        if (it == embedded.end()) {
            auto found = movies.find(id);
            if (found == movies.end()) throw CorpusError(id, "pair references unknown movie");
            it = embedded.emplace(id, embed_shots(Matrix(found->second.cast<double>()), model)).first;
        }
        return it->second;
    };

    MiningResult result;
    for (const auto& p : sorted) {
        if (p.label != 1) throw InvalidArgument("mine_corpus: expects positive pairs only");
        auto [a, b] = pair_key(p.movie_a, p.movie_b);
        bool skip = false;
        for (const auto* id : {&a, &b}) {
            auto found = movies.find(*id);
            if (found == movies.end()) throw CorpusError(*id, "pair references unknown movie");
            if (found->second.rows() < config.window) {
                result.skipped.push_back(SkipError(*id, "shorter than window; pair " + a + "/" + b + " skipped").what());
                skip = true;
                break;
            }
        }
        if (skip) continue;
        const Matrix scores = scene_scores_from_adjacency(embed(a) * embed(b).transpose(), config);
        auto chosen = select_scene_pairs(scores, a, b, config);
        result.pairs.insert(result.pairs.end(), chosen.begin(), chosen.end());
    }
    return result;
}

inline Json to_json(const ScenePair& p) {
    return Json{{"a", p.movie_a},
                {"span_a", {p.span_a.start, p.span_a.end}},
                {"b", p.movie_b},
                {"span_b", {p.span_b.start, p.span_b.end}},
                {"score", p.score}};
}

inline ScenePair scene_pair_from_json(const Json& j) {
    ScenePair p;
    p.movie_a = j.at("a").get<std::string>();
    p.movie_b = j.at("b").get<std::string>();
    const auto sa = j.at("span_a").get<std::vector<int>>();
    const auto sb = j.at("span_b").get<std::vector<int>>();
    if (sa.size() != 2 || sb.size() != 2) throw IoError("scene pair spans must be [start, end]");
    p.span_a = {sa[0], sa[1]};
    p.span_b = {sb[0], sb[1]};
    p.score = j.at("score").get<double>();
    return p;
}

inline void write_scene_pairs(const std::filesystem::path& path, const std::vector<ScenePair>& pairs) {
    std::vector<Json> rows;
    rows.reserve(pairs.size());
    for (const auto& p : pairs) rows.push_back(to_json(p));
    write_jsonl(path, rows);
}

inline std::vector<ScenePair> read_scene_pairs(const std::filesystem::path& path) {
    std::vector<ScenePair> out;
    for (const auto& j : read_jsonl(path)) out.push_back(scene_pair_from_json(j));
    return out;
}

}  // namespace m2s
