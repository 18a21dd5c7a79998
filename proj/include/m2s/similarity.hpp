#pragma once

// Movie-level similarity pseudo-labels from metadata, plus random negatives.

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "m2s/corpus.hpp"

namespace m2s {

enum class SimilaritySource { MoreLikeThis, Synopsis, Genre };

inline std::string to_string(SimilaritySource s) {
    switch (s) {
        case SimilaritySource::MoreLikeThis: return "mlt";
        case SimilaritySource::Synopsis: return "synopsis";
        case SimilaritySource::Genre: return "genre";
    }
    return "?";
}

inline SimilaritySource parse_similarity_source(const std::string& s) {
    if (s == "mlt" || s == "more_like_this" || s == "more-like-this") return SimilaritySource::MoreLikeThis;
    if (s == "synopsis") return SimilaritySource::Synopsis;
    if (s == "genre") return SimilaritySource::Genre;
    throw InvalidArgument("unknown similarity source '" + s + "' (expected mlt|synopsis|genre)");
}

/// Unordered pair; stored with movie_a < movie_b.
struct SimilarityPair {
    std::string movie_a;
    std::string movie_b;
    int label = 1;
    SimilaritySource source = SimilaritySource::Genre;

    friend bool operator==(const SimilarityPair&, const SimilarityPair&) = default;
};

inline std::pair<std::string, std::string> pair_key(const std::string& a, const std::string& b) {
    return a < b ? std::make_pair(a, b) : std::make_pair(b, a);
}

inline SimilarityPair make_pair_record(const std::string& a, const std::string& b, int label, SimilaritySource src) {
    auto [lo, hi] = pair_key(a, b);
    return {lo, hi, label, src};
}

class MissingMetadataError : public CorpusError {
public:
    using CorpusError::CorpusError;
};

namespace detail {

inline void sort_pairs(std::vector<SimilarityPair>& pairs) {
    std::sort(pairs.begin(), pairs.end(), [](const SimilarityPair& x, const SimilarityPair& y) {
        return std::tie(x.movie_a, x.movie_b) < std::tie(y.movie_a, y.movie_b);
    });
}

}  // namespace detail

/// Positive pairs from one metadata source, up to k_per_movie per movie,
/// deduplicated as unordered pairs and sorted by (movie_a, movie_b).
///   MoreLikeThis: first k entries of each ranked list
///   Synopsis:     k highest synopsis inner products (ties: ascending id)
///   Genre:        k uniformly drawn movies sharing at least one genre
inline std::vector<SimilarityPair> positive_pairs(const CorpusManifest& corpus, SimilaritySource source,
                                                  int k_per_movie = 3, std::uint64_t seed = 0) {
    if (k_per_movie < 1) throw InvalidArgument("k_per_movie must be >= 1");
    std::set<std::pair<std::string, std::string>> seen;
    std::vector<SimilarityPair> out;
    auto emit = [&](const std::string& a, const std::string& b) {
        if (a == b) return;
        if (seen.insert(pair_key(a, b)).second) out.push_back(make_pair_record(a, b, 1, source));
    };
    const auto k = static_cast<std::size_t>(k_per_movie);

    switch (source) {
        case SimilaritySource::MoreLikeThis: {
            for (const auto& m : corpus.movies) {
                if (!m.more_like_this) throw MissingMetadataError(m.movie_id, "missing field more_like_this");
                const auto& list = *m.more_like_this;
                for (std::size_t i = 0; i < std::min(k, list.size()); ++i) {
                    if (corpus.find(list[i]) == nullptr) {
                        throw CorpusError(m.movie_id, "more_like_this references unknown movie '" + list[i] + "'");
                    }
                    emit(m.movie_id, list[i]);
                }
            }
            break;
        }
        case SimilaritySource::Synopsis: {
            for (const auto& m : corpus.movies) {
                if (!m.synopsis_embedding) throw MissingMetadataError(m.movie_id, "missing field synopsis_embedding");
            }
            for (const auto& m : corpus.movies) {
                const auto& q = *m.synopsis_embedding;
                std::vector<std::pair<double, const std::string*>> scored;
                for (const auto& o : corpus.movies) {
                    if (o.movie_id == m.movie_id) continue;
                    const auto& e = *o.synopsis_embedding;
                    if (e.size() != q.size()) {
                        throw DimensionMismatchError(o.movie_id, "synopsis embedding dimension differs");
                    }
                    double dot = 0.0;
                    for (std::size_t i = 0; i < q.size(); ++i) dot += q[i] * e[i];
                    scored.emplace_back(dot, &o.movie_id);
                }
                std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
                    if (x.first != y.first) return x.first > y.first;
                    return *x.second < *y.second;
                });
                for (std::size_t i = 0; i < std::min(k, scored.size()); ++i) emit(m.movie_id, *scored[i].second);
            }
            break;
        }
        case SimilaritySource::Genre: {
            Rng rng(seed);
            for (const auto& m : corpus.movies) {
                if (m.genres.empty()) throw MissingMetadataError(m.movie_id, "missing field genres");
            }
            for (const auto& m : corpus.movies) {
                std::vector<const std::string*> candidates;
                for (const auto& o : corpus.movies) {
                    if (o.movie_id == m.movie_id) continue;
                    const bool shares = std::any_of(m.genres.begin(), m.genres.end(), [&](const std::string& g) {
                        return std::find(o.genres.begin(), o.genres.end(), g) != o.genres.end();
                    });
                    if (shares) candidates.push_back(&o.movie_id);
                }
                std::shuffle(candidates.begin(), candidates.end(), rng);
                for (std::size_t i = 0; i < std::min(k, candidates.size()); ++i) emit(m.movie_id, *candidates[i]);
            }
            break;
        }
    }
    detail::sort_pairs(out);
    return out;
}

/// ceil(ratio * |positives|) uniformly drawn unordered pairs that are
/// neither self-pairs nor positives. Sorted by (movie_a, movie_b).
inline std::vector<SimilarityPair> sample_negatives(const CorpusManifest& corpus,
                                                    const std::vector<SimilarityPair>& positives, double ratio = 1.0,
                                                    std::uint64_t seed = 0) {
    const std::size_t n = corpus.movies.size();
    if (n < 2) throw InvalidArgument("sample_negatives needs at least 2 movies");
    if (ratio < 0.0) throw InvalidArgument("negative ratio must be >= 0");
    std::set<std::pair<std::string, std::string>> excluded;
    for (const auto& p : positives) excluded.insert(pair_key(p.movie_a, p.movie_b));
    const auto wanted = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(positives.size())));
    const std::size_t total = n * (n - 1) / 2;
    std::size_t excluded_valid = 0;
    for (const auto& [a, b] : excluded) {
        if (a != b && corpus.find(a) && corpus.find(b)) ++excluded_valid;
    }
    const std::size_t available = total - excluded_valid;
    if (wanted > available) {
        throw InvalidArgument("corpus too small: " + std::to_string(wanted) + " negatives requested, " +
                              std::to_string(available) + " available");
    }
    const SimilaritySource source = positives.empty() ? SimilaritySource::Genre : positives.front().source;

    Rng rng(seed);
    std::vector<SimilarityPair> out;
    if (wanted * 2 > available) {
        // Dense regime: enumerate and shuffle.
        std::vector<std::pair<std::size_t, std::size_t>> all;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                if (!excluded.contains(pair_key(corpus.movies[i].movie_id, corpus.movies[j].movie_id))) {
                    all.emplace_back(i, j);
                }
            }
        }
        std::shuffle(all.begin(), all.end(), rng);
        for (std::size_t i = 0; i < wanted; ++i) {
            out.push_back(make_pair_record(corpus.movies[all[i].first].movie_id, corpus.movies[all[i].second].movie_id,
                                           0, source));
        }
    } else {
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        std::set<std::pair<std::string, std::string>> taken;
        while (out.size() < wanted) {
            const std::size_t i = pick(rng), j = pick(rng);
            if (i == j) continue;
            auto key = pair_key(corpus.movies[i].movie_id, corpus.movies[j].movie_id);
            if (excluded.contains(key) || !taken.insert(key).second) continue;
            out.push_back(make_pair_record(key.first, key.second, 0, source));
        }
    }
    detail::sort_pairs(out);
    return out;
}

inline Json to_json(const SimilarityPair& p) {
    return Json{{"a", p.movie_a}, {"b", p.movie_b}, {"label", p.label}, {"source", to_string(p.source)}};
}

inline SimilarityPair similarity_pair_from_json(const Json& j) {
    SimilarityPair p;
    p.movie_a = j.at("a").get<std::string>();
    p.movie_b = j.at("b").get<std::string>();
    p.label = j.at("label").get<int>();
    p.source = parse_similarity_source(j.at("source").get<std::string>());
    if (p.movie_a == p.movie_b) throw InvalidArgument("self-pair for movie '" + p.movie_a + "'");
    if (p.label != 0 && p.label != 1) throw InvalidArgument("pair label must be 0 or 1");
    return p;
}

inline void write_pairs(const std::filesystem::path& path, const std::vector<SimilarityPair>& pairs) {
    std::vector<Json> rows;
    for (const auto& p : pairs) rows.push_back(to_json(p));
    write_jsonl(path, rows);
}

inline std::vector<SimilarityPair> read_pairs(const std::filesystem::path& path) {
    std::vector<SimilarityPair> out;
    for (const auto& j : read_jsonl(path)) out.push_back(similarity_pair_from_json(j));
    return out;
}

}  // namespace m2s
