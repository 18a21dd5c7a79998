#pragma once

// Scene-boundary detection probe. A sample is the 4 shots around a
// candidate boundary (two before, two after); each shot is featurized on
// its own as a length-1 scene and the four rows are concatenated.

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "m2s/downstream/features.hpp"
#include "m2s/downstream/metrics.hpp"
#include "m2s/downstream/probe.hpp"

namespace m2s {

inline constexpr int kSbdContext = 2;  // shots on each side of the boundary

struct SbdResult {
    double ap = 0.0;
    double positive_rate = 0.0;
    int support = 0;
};

inline Matrix sbd_features(const MovieTable& movies, const std::vector<BoundarySample>& samples,
                           const SceneFeatureFn& shot_features) {
    std::map<std::pair<std::string, int>, RowVector> cache;
    auto shot = [&](const std::string& id, int index) -> const RowVector& {
        auto key = std::make_pair(id, index);
        auto it = cache.find(key);
        if (it == cache.end()) it = cache.emplace(key, shot_features(scene_tokens(movies, id, index, index + 1))).first;
        return it->second;
    };
    Matrix out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        auto it = movies.find(s.movie_id);
        if (it == movies.end()) throw CorpusError(s.movie_id, "unknown movie");
        if (s.boundary - kSbdContext < 0 || s.boundary + kSbdContext > it->second.rows()) {
            throw CorpusError(s.movie_id, "fewer than 4 shots around boundary " + std::to_string(s.boundary));
        }
        std::vector<RowVector> parts;
        for (int k = s.boundary - kSbdContext; k < s.boundary + kSbdContext; ++k) parts.push_back(shot(s.movie_id, k));
        const Eigen::Index width = parts.front().size();
        if (i == 0) out.resize(static_cast<Eigen::Index>(samples.size()), 2 * kSbdContext * width);
        for (std::size_t p = 0; p < parts.size(); ++p) {
            out.block(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p) * width, 1, width) = parts[p];
        }
    }
    return out;
}

/// Trains a binary probe on the "train" split and reports the AP of the
/// positive class on the "test" split.
inline SbdResult sbd_evaluate(const MovieTable& movies, const std::vector<BoundarySample>& samples,
                              const SceneFeatureFn& shot_features, ProbeConfig probe_config, std::uint64_t seed) {
    std::vector<BoundarySample> train, test;
    for (const auto& s : samples) (s.split == "test" ? test : train).push_back(s);
    if (train.empty() || test.empty()) throw InvalidArgument("sbd_evaluate: need both train and test samples");
    auto targets = [](const std::vector<BoundarySample>& v) {
        Matrix t(static_cast<Eigen::Index>(v.size()), 1);
        for (std::size_t i = 0; i < v.size(); ++i) t(static_cast<Eigen::Index>(i), 0) = v[i].label != 0 ? 1.0 : 0.0;
        return ProbeTargets::multilabel(std::move(t));
    };
    probe_config.objective = ProbeObjective::BinaryCrossEntropy;
    const Probe probe = train_probe(sbd_features(movies, train, shot_features), targets(train), probe_config, seed);
    const Matrix scores = probe_predict(probe, sbd_features(movies, test, shot_features));

    std::vector<double> s(test.size());
    std::vector<int> rel(test.size());
    int positives = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        s[i] = scores(static_cast<Eigen::Index>(i), 0);
        rel[i] = test[i].label != 0 ? 1 : 0;
        positives += rel[i];
    }
    const auto ap = average_precision(s, rel);
    if (!ap) throw InvalidArgument("sbd_evaluate: test split has no positive boundaries");
    return {*ap, static_cast<double>(positives) / static_cast<double>(test.size()), static_cast<int>(test.size())};
}

}  // namespace m2s
