#pragma once

// Desk-scale synthetic movie corpus with planted structure.
//
// Every movie belongs to one theme. Ordinary shots sit at the theme
// centroid; a few contiguous "signature scenes" replay the theme's scene
// motif. Gaussian shot noise (stddev `noise` per coordinate) and an optional
// per-movie style offset (stddev `style * noise`) are added on top, so
// noise = 0 gives every theme exactly two kinds of shot: centroid and motif.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "m2s/corpus.hpp"

namespace m2s {

struct SyntheticOptions {
    int n_movies = 40;
    int n_themes = 8;
    int min_shots = 60;
    int max_shots = 120;
    int d_in = 32;
    double noise = 0.1;
    double style = 0.0;
    int signature_scenes = 2;
    int scene_len = 9;
    double motif_strength = 1.0;
    int synopsis_dim = 16;
    std::uint64_t seed = 0;
};

struct SyntheticCorpus {
    CorpusManifest manifest;
    MovieTable matrices;
    std::vector<std::string> theme_names;
    std::map<std::string, int> theme_of;
    /// Start shot of each planted signature scene, ascending.
    std::map<std::string, std::vector<int>> signature_starts;
    int scene_len = 9;
};

inline std::string synthetic_movie_id(int index, int n_movies) {
    const std::size_t width = std::max<std::size_t>(3, std::to_string(std::max(0, n_movies - 1)).size());
    std::string digits = std::to_string(index);
    if (digits.size() < width) digits.insert(0, width - digits.size(), '0');
    return "m" + digits;
}

inline SyntheticCorpus generate_synthetic_corpus(const SyntheticOptions& opt) {
    if (opt.n_themes < 2) throw InvalidArgument("n_themes must be >= 2");
    if (opt.d_in < opt.n_themes) throw InvalidArgument("d_in must be >= n_themes");
    if (opt.n_movies < 0) throw InvalidArgument("n_movies must be >= 0");
    if (opt.scene_len < 1 || opt.signature_scenes < 0) throw InvalidArgument("invalid signature scene layout");
    if (opt.min_shots > opt.max_shots) throw InvalidArgument("min_shots > max_shots");
    // Signatures keep a 2-shot margin to each other and to the movie edges.
    const int needed = opt.signature_scenes * (opt.scene_len + 2) + 2;
    if (opt.min_shots < std::max(1, needed)) {
        throw InvalidArgument("min_shots too small for " + std::to_string(opt.signature_scenes) +
                              " signature scenes of " + std::to_string(opt.scene_len) + " shots");
    }
    if (opt.noise < 0.0 || opt.style < 0.0) throw InvalidArgument("noise and style must be >= 0");

    Rng rng(opt.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto unit_vector = [&](int dim) {
        Eigen::VectorXd v(dim);
        for (int i = 0; i < dim; ++i) v(i) = gauss(rng);
        return Eigen::VectorXd(v / v.norm());
    };

    SyntheticCorpus out;
    out.scene_len = opt.scene_len;
    out.manifest.d_in = opt.d_in;

    std::vector<Eigen::VectorXd> centroids, text;
    std::vector<Matrix> motifs;
    for (int t = 0; t < opt.n_themes; ++t) {
        out.theme_names.push_back("theme_" + std::to_string(t));
        centroids.push_back(unit_vector(opt.d_in));
        const Eigen::VectorXd direction = unit_vector(opt.d_in);
        Matrix motif(opt.scene_len, opt.d_in);
        for (int r = 0; r < opt.scene_len; ++r) {
            Eigen::VectorXd wobble(opt.d_in);
            for (int i = 0; i < opt.d_in; ++i) wobble(i) = gauss(rng) * 0.5 / std::sqrt(opt.d_in);
            motif.row(r) = (centroids.back() + opt.motif_strength * (direction + wobble)).transpose();
        }
        motifs.push_back(std::move(motif));
        text.push_back(unit_vector(opt.synopsis_dim));
    }

    std::uniform_int_distribution<int> shots_dist(opt.min_shots, opt.max_shots);
    std::vector<Eigen::VectorXd> movie_means;
    for (int m = 0; m < opt.n_movies; ++m) {
        const std::string id = synthetic_movie_id(m, opt.n_movies);
        const int theme = m % opt.n_themes;
        const int shots = shots_dist(rng);

        // Non-overlapping signature placements with 2-shot gaps, by rejection.
        std::vector<int> starts;
        std::uniform_int_distribution<int> start_dist(2, shots - opt.scene_len - 2);
        while (static_cast<int>(starts.size()) < opt.signature_scenes) {
            const int s = start_dist(rng);
            const bool clear = std::all_of(starts.begin(), starts.end(), [&](int o) {
                return s + opt.scene_len + 2 <= o || o + opt.scene_len + 2 <= s;
            });
            if (clear) starts.push_back(s);
        }
        std::sort(starts.begin(), starts.end());

        Eigen::VectorXd style(opt.d_in);
        for (int i = 0; i < opt.d_in; ++i) style(i) = gauss(rng) * opt.style * opt.noise;

        Matrix shots_m(shots, opt.d_in);
        for (int r = 0; r < shots; ++r) shots_m.row(r) = centroids[static_cast<std::size_t>(theme)].transpose();
        for (int s : starts) {
            shots_m.middleRows(s, opt.scene_len) = motifs[static_cast<std::size_t>(theme)];
        }
        for (int r = 0; r < shots; ++r) {
            for (int i = 0; i < opt.d_in; ++i) shots_m(r, i) += style(i) + gauss(rng) * opt.noise;
        }

        MovieRecord rec;
        rec.movie_id = id;
        rec.genres = {out.theme_names[static_cast<std::size_t>(theme)]};
        rec.shot_count = shots;
        std::vector<double> syn(static_cast<std::size_t>(opt.synopsis_dim));
        for (int i = 0; i < opt.synopsis_dim; ++i) {
            syn[static_cast<std::size_t>(i)] =
                text[static_cast<std::size_t>(theme)](i) + 0.25 * gauss(rng) / std::sqrt(opt.synopsis_dim);
        }
        rec.synopsis_embedding = std::move(syn);
        out.manifest.movies.push_back(std::move(rec));

        movie_means.push_back(shots_m.colwise().mean().transpose());
        out.matrices.emplace(id, shots_m.cast<float>());
        out.theme_of.emplace(id, theme);
        out.signature_starts.emplace(id, std::move(starts));
    }

    // more_like_this: same-theme movies by ascending distance between movie means.
    for (int m = 0; m < opt.n_movies; ++m) {
        std::vector<std::pair<double, int>> ranked;
        for (int o = 0; o < opt.n_movies; ++o) {
            if (o == m || o % opt.n_themes != m % opt.n_themes) continue;
            ranked.emplace_back((movie_means[static_cast<std::size_t>(m)] - movie_means[static_cast<std::size_t>(o)]).norm(), o);
        }
        std::sort(ranked.begin(), ranked.end());
        std::vector<std::string> mlt;
        for (const auto& [d, o] : ranked) mlt.push_back(synthetic_movie_id(o, opt.n_movies));
        out.manifest.movies[static_cast<std::size_t>(m)].more_like_this = std::move(mlt);
    }
    return out;
}

/// Movies are dealt to themes round-robin; every fourth round (rounds 3, 7,
/// ...) is held out, so each theme appears in both splits.
inline std::string synthetic_split(int movie_index, int n_themes) {
    return (movie_index / n_themes) % 4 == 3 ? "test" : "train";
}

inline int overlap(int a0, int a1, int b0, int b1) { return std::max(0, std::min(a1, b1) - std::max(a0, b0)); }

/// Labeled scenes over consecutive non-overlapping windows of every movie:
///   theme              class label = theme index
///   signature_fraction real label  = fraction of the window inside a signature scene
///   tags               multi-label = one-hot theme bits + "has signature" bit
inline std::vector<LabeledScene> synthetic_labeled_scenes(const SyntheticCorpus& sc) {
    std::vector<LabeledScene> out;
    const int w = sc.scene_len;
    const int n_themes = static_cast<int>(sc.theme_names.size());
    for (std::size_t mi = 0; mi < sc.manifest.movies.size(); ++mi) {
        const auto& rec = sc.manifest.movies[mi];
        const int theme = sc.theme_of.at(rec.movie_id);
        const auto& sigs = sc.signature_starts.at(rec.movie_id);
        const std::string split = synthetic_split(static_cast<int>(mi), static_cast<int>(sc.theme_names.size()));
        for (int s = 0; s + w <= rec.shot_count; s += w) {
            int inside = 0;
            for (int g : sigs) inside += overlap(s, s + w, g, g + w);
            out.push_back({rec.movie_id, s, s + w, "theme", theme, split});
            out.push_back({rec.movie_id, s, s + w, "signature_fraction", static_cast<double>(inside) / w, split});
            std::vector<std::uint8_t> bits(static_cast<std::size_t>(n_themes + 1), 0);
            bits[static_cast<std::size_t>(theme)] = 1;
            bits.back() = inside > 0 ? 1 : 0;
            out.push_back({rec.movie_id, s, s + w, "tags", std::move(bits), split});
        }
    }
    return out;
}

/// Scene-boundary samples: every signature start/end is a positive; up to
/// `negatives_per_positive` random interior positions at least 2 shots from
/// any true boundary are negatives.
inline std::vector<BoundarySample> synthetic_boundaries(const SyntheticCorpus& sc, int negatives_per_positive,
                                                        std::uint64_t seed) {
    std::vector<BoundarySample> out;
    Rng rng(seed);
    for (std::size_t mi = 0; mi < sc.manifest.movies.size(); ++mi) {
        const auto& rec = sc.manifest.movies[mi];
        const std::string split = synthetic_split(static_cast<int>(mi), static_cast<int>(sc.theme_names.size()));
        std::vector<int> positives;
        for (int g : sc.signature_starts.at(rec.movie_id)) {
            positives.push_back(g);
            positives.push_back(g + sc.scene_len);
        }
        for (int b : positives) out.push_back({rec.movie_id, b, 1, split});
        std::vector<int> candidates;
        for (int b = 2; b <= rec.shot_count - 2; ++b) {
            const bool far = std::all_of(positives.begin(), positives.end(), [b](int p) { return std::abs(p - b) >= 2; });
            if (far) candidates.push_back(b);
        }
        std::shuffle(candidates.begin(), candidates.end(), rng);
        const std::size_t n_neg =
            std::min(candidates.size(), positives.size() * static_cast<std::size_t>(negatives_per_positive));
        std::vector<int> chosen(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(n_neg));
        std::sort(chosen.begin(), chosen.end());
        for (int b : chosen) out.push_back({rec.movie_id, b, 0, split});
    }
    return out;
}

}  // namespace m2s
