#pragma once

// Movies, per-shot embeddings, metadata and labeled downstream samples.
//
// On-disk layout of a corpus directory:
//   manifest.json             movie metadata + embedding file per movie_id
//   embeddings/<id>.m2se      "M2SE" | u32 version | u32 M | u32 D_in | M*D_in f32
// All integers and floats little-endian, rows stored contiguously.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "m2s/binary_io.hpp"
#include "m2s/jsonl.hpp"
#include "m2s/numerics/matrix.hpp"

namespace m2s {

inline constexpr std::uint32_t kEmbeddingFormatVersion = 1;
inline constexpr int kManifestVersion = 1;

class CorpusError : public Error {
public:
    CorpusError(const std::string& movie_id, const std::string& what)
        : Error(what + (movie_id.empty() ? "" : " (movie '" + movie_id + "')")), movie_id_(movie_id) {}
    const std::string& movie_id() const { return movie_id_; }

private:
    std::string movie_id_;
};

class MissingFileError : public CorpusError {
public:
    using CorpusError::CorpusError;
};

class DimensionMismatchError : public CorpusError {
public:
    using CorpusError::CorpusError;
};

class NonFiniteError : public CorpusError {
public:
    using CorpusError::CorpusError;
};

class ManifestError : public CorpusError {
public:
    using CorpusError::CorpusError;
};

struct ShotEmbeddingMatrix {
    std::string movie_id;
    MatrixF data;  // M x D_in

    Eigen::Index shot_count() const { return data.rows(); }
    Eigen::Index dim() const { return data.cols(); }
};

/// Movie id -> M x D_in embeddings. Ordered so iteration is deterministic.
using MovieTable = std::map<std::string, MatrixF>;

struct MovieRecord {
    std::string movie_id;
    std::vector<std::string> genres;
    std::optional<std::vector<double>> synopsis_embedding;
    std::optional<std::vector<std::string>> more_like_this;
    int shot_count = 0;
};

struct CorpusManifest {
    int version = kManifestVersion;
    int d_in = 0;
    std::vector<MovieRecord> movies;
    /// movie_id -> embedding path relative to the manifest directory.
    std::map<std::string, std::string> embedding_files;

    const MovieRecord* find(const std::string& id) const {
        for (const auto& m : movies) {
            if (m.movie_id == id) return &m;
        }
        return nullptr;
    }

    const MovieRecord& at(const std::string& id) const {
        const MovieRecord* m = find(id);
        if (m == nullptr) throw CorpusError(id, "unknown movie id");
        return *m;
    }
};

// ---------------------------------------------------------------------------
// Embedding files

struct EmbeddingHeader {
    std::uint32_t version = kEmbeddingFormatVersion;
    std::uint32_t shots = 0;
    std::uint32_t dim = 0;
};

inline void write_embedding_file(const std::filesystem::path& path, const MatrixF& data) {
    auto out = io::open_output(path);
    io::write_magic(out, "M2SE");
    io::write_le<std::uint32_t>(out, kEmbeddingFormatVersion);
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(data.rows()));
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(data.cols()));
    for (Eigen::Index i = 0; i < data.size(); ++i) io::write_le<float>(out, data.data()[i]);
    if (!out) throw IoError("write failed: " + path.string());
}

inline EmbeddingHeader read_embedding_header(std::istream& in, const std::string& what) {
    io::expect_magic(in, "M2SE", what);
    EmbeddingHeader h;
    h.version = io::read_le<std::uint32_t>(in, what);
    h.shots = io::read_le<std::uint32_t>(in, what);
    h.dim = io::read_le<std::uint32_t>(in, what);
    if (h.version != kEmbeddingFormatVersion) {
        throw IoError(what + ": unsupported embedding format version " + std::to_string(h.version));
    }
    return h;
}

inline MatrixF read_embedding_file(const std::filesystem::path& path) {
    auto in = io::open_input(path);
    const auto h = read_embedding_header(in, path.string());
    MatrixF data(h.shots, h.dim);
    for (Eigen::Index i = 0; i < data.size(); ++i) data.data()[i] = io::read_le<float>(in, path.string());
    return data;
}

// ---------------------------------------------------------------------------
// Manifest JSON

inline Json to_json(const MovieRecord& m) {
    Json j;
    j["movie_id"] = m.movie_id;
    j["genres"] = m.genres;
    j["shot_count"] = m.shot_count;
    if (m.synopsis_embedding) j["synopsis_embedding"] = *m.synopsis_embedding;
    if (m.more_like_this) j["more_like_this"] = *m.more_like_this;
    return j;
}

inline MovieRecord movie_from_json(const Json& j) {
    MovieRecord m;
    try {
        m.movie_id = j.at("movie_id").get<std::string>();
        m.genres = j.value("genres", std::vector<std::string>{});
        m.shot_count = j.at("shot_count").get<int>();
        if (j.contains("synopsis_embedding")) {
            m.synopsis_embedding = j["synopsis_embedding"].get<std::vector<double>>();
        }
        if (j.contains("more_like_this")) m.more_like_this = j["more_like_this"].get<std::vector<std::string>>();
    } catch (const Json::exception& e) {
        throw ManifestError(m.movie_id, std::string("malformed movie record: ") + e.what());
    }
    return m;
}

inline Json to_json(const CorpusManifest& c) {
    Json j;
    j["version"] = c.version;
    j["d_in"] = c.d_in;
    j["movies"] = Json::array();
    for (const auto& m : c.movies) j["movies"].push_back(to_json(m));
    j["embedding_files"] = c.embedding_files;
    return j;
}

inline CorpusManifest manifest_from_json(const Json& j) {
    CorpusManifest c;
    try {
        c.version = j.at("version").get<int>();
        c.d_in = j.at("d_in").get<int>();
        for (const auto& m : j.at("movies")) c.movies.push_back(movie_from_json(m));
        c.embedding_files = j.value("embedding_files", std::map<std::string, std::string>{});
    } catch (const CorpusError&) {
        throw;
    } catch (const Json::exception& e) {
        throw ManifestError("", std::string("malformed manifest: ") + e.what());
    }
    if (c.version != kManifestVersion) {
        throw ManifestError("", "unsupported manifest version " + std::to_string(c.version));
    }
    return c;
}

/// Metadata invariants that do not need the embedding files.
inline void validate_manifest(const CorpusManifest& c) {
    if (c.d_in < 1) throw ManifestError("", "d_in must be positive");
    std::set<std::string> ids;
    for (const auto& m : c.movies) {
        if (m.movie_id.empty() || m.movie_id.find('/') != std::string::npos) {
            throw ManifestError(m.movie_id, "invalid movie id");
        }
        if (!ids.insert(m.movie_id).second) throw ManifestError(m.movie_id, "duplicate movie id");
        if (m.shot_count < 1) throw ManifestError(m.movie_id, "shot_count must be >= 1");
        if (m.more_like_this) {
            std::set<std::string> seen;
            for (const auto& other : *m.more_like_this) {
                if (other == m.movie_id) throw ManifestError(m.movie_id, "more_like_this lists the movie itself");
                if (!seen.insert(other).second) {
                    throw ManifestError(m.movie_id, "duplicate '" + other + "' in more_like_this");
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------

/// A validated corpus on disk. Embeddings are read on demand; the object is
/// immutable after construction.
class Corpus {
public:
    Corpus(CorpusManifest manifest, std::filesystem::path root)
        : manifest_(std::move(manifest)), root_(std::move(root)) {}

    const CorpusManifest& manifest() const { return manifest_; }
    const std::filesystem::path& root() const { return root_; }
    int d_in() const { return manifest_.d_in; }

    std::filesystem::path embedding_path(const std::string& movie_id) const {
        auto it = manifest_.embedding_files.find(movie_id);
        if (it == manifest_.embedding_files.end()) {
            throw MissingFileError(movie_id, "missing embedding file entry in manifest");
        }
        return root_ / it->second;
    }

    ShotEmbeddingMatrix read(const std::string& movie_id) const {
        const MovieRecord& rec = manifest_.at(movie_id);
        const auto path = embedding_path(movie_id);
        if (!std::filesystem::exists(path)) {
            throw MissingFileError(movie_id, "missing embedding file " + path.string());
        }
        MatrixF data = read_embedding_file(path);
        if (data.cols() != manifest_.d_in || data.rows() != rec.shot_count) {
            throw DimensionMismatchError(movie_id, "embedding file is " + shape_string(data.rows(), data.cols()) +
                                                       ", manifest expects " +
                                                       shape_string(rec.shot_count, manifest_.d_in));
        }
        if (!data.allFinite()) throw NonFiniteError(movie_id, "non-finite value in embedding file");
        return {movie_id, std::move(data)};
    }

    MovieTable load_all() const {
        MovieTable table;
        for (const auto& m : manifest_.movies) table.emplace(m.movie_id, read(m.movie_id).data);
        return table;
    }

private:
    CorpusManifest manifest_;
    std::filesystem::path root_;
};

/// Parses the manifest and checks that every embedding file exists with a
/// header matching d_in and shot_count. Values are checked on read.
inline Corpus load_corpus(const std::filesystem::path& manifest_path) {
    if (!std::filesystem::exists(manifest_path)) {
        throw MissingFileError("", "missing manifest " + manifest_path.string());
    }
    CorpusManifest manifest = manifest_from_json(read_json(manifest_path));
    validate_manifest(manifest);
    Corpus corpus(std::move(manifest), manifest_path.parent_path());
    for (const auto& m : corpus.manifest().movies) {
        const auto path = corpus.embedding_path(m.movie_id);
        if (!std::filesystem::exists(path)) {
            throw MissingFileError(m.movie_id, "missing embedding file " + path.string());
        }
        auto in = io::open_input(path);
        const auto h = read_embedding_header(in, path.string());
        if (static_cast<int>(h.dim) != corpus.d_in()) {
            throw DimensionMismatchError(m.movie_id, "embedding file d_in=" + std::to_string(h.dim) +
                                                         " but manifest d_in=" + std::to_string(corpus.d_in()));
        }
        if (static_cast<int>(h.shots) != m.shot_count) {
            throw DimensionMismatchError(m.movie_id, "embedding file has " + std::to_string(h.shots) +
                                                         " shots but manifest says " +
                                                         std::to_string(m.shot_count));
        }
    }
    return corpus;
}

/// Writes `dir/manifest.json` and one embedding file per movie. The
/// manifest's embedding_files map is filled in by the writer.
inline std::filesystem::path write_corpus(CorpusManifest manifest, const MovieTable& matrices,
                                          const std::filesystem::path& dir) {
    validate_manifest(manifest);
    manifest.embedding_files.clear();
    for (const auto& m : manifest.movies) {
        auto it = matrices.find(m.movie_id);
        if (it == matrices.end()) throw CorpusError(m.movie_id, "no embedding matrix supplied");
        const MatrixF& data = it->second;
        if (data.cols() != manifest.d_in || data.rows() != m.shot_count) {
            throw DimensionMismatchError(m.movie_id, "matrix is " + shape_string(data.rows(), data.cols()) +
                                                         ", manifest expects " +
                                                         shape_string(m.shot_count, manifest.d_in));
        }
        if (!data.allFinite()) throw NonFiniteError(m.movie_id, "non-finite embedding value");
        const std::string rel = "embeddings/" + m.movie_id + ".m2se";
        write_embedding_file(dir / rel, data);
        manifest.embedding_files[m.movie_id] = rel;
    }
    const auto path = dir / "manifest.json";
    write_json(path, to_json(manifest));
    return path;
}

// ---------------------------------------------------------------------------
// Labeled downstream samples

enum class LabelKind { Class, Real, MultiLabel };

using SceneLabel = std::variant<int, double, std::vector<std::uint8_t>>;

inline LabelKind label_kind(const SceneLabel& l) { return static_cast<LabelKind>(l.index()); }

struct LabeledScene {
    std::string movie_id;
    int start = 0;  // [start, end)
    int end = 0;
    std::string task_id;
    SceneLabel label;
    std::string split = "train";
};

inline Json to_json(const LabeledScene& s) {
    Json j;
    j["movie_id"] = s.movie_id;
    j["start"] = s.start;
    j["end"] = s.end;
    j["task_id"] = s.task_id;
    j["split"] = s.split;
    std::visit([&j](const auto& v) { j["label"] = v; }, s.label);
    if (label_kind(s.label) == LabelKind::Real) j["label_kind"] = "real";
    return j;
}

inline LabeledScene labeled_scene_from_json(const Json& j) {
    LabeledScene s;
    s.movie_id = j.at("movie_id").get<std::string>();
    s.start = j.at("start").get<int>();
    s.end = j.at("end").get<int>();
    s.task_id = j.at("task_id").get<std::string>();
    s.split = j.value("split", std::string("train"));
    const Json& l = j.at("label");
    if (l.is_array()) {
        s.label = l.get<std::vector<std::uint8_t>>();
    } else if (l.is_number_integer() && j.value("label_kind", std::string()) != "real") {
        s.label = l.get<int>();
    } else if (l.is_number()) {
        s.label = l.get<double>();
    } else {
        throw IoError("label for movie '" + s.movie_id + "' is neither class, real nor bit set");
    }
    return s;
}

/// Spans lie inside their movie; each task uses one label kind (and one
/// width, for multi-label tasks).
inline void validate_labeled_scenes(const CorpusManifest& manifest, const std::vector<LabeledScene>& scenes) {
    std::map<std::string, std::pair<LabelKind, std::size_t>> tasks;
    for (const auto& s : scenes) {
        const MovieRecord& m = manifest.at(s.movie_id);
        if (!(0 <= s.start && s.start < s.end && s.end <= m.shot_count)) {
            throw CorpusError(s.movie_id, "span [" + std::to_string(s.start) + ", " + std::to_string(s.end) +
                                              ") outside movie of " + std::to_string(m.shot_count) + " shots");
        }
        const LabelKind kind = label_kind(s.label);
        const std::size_t width =
            kind == LabelKind::MultiLabel ? std::get<std::vector<std::uint8_t>>(s.label).size() : 1;
        auto [it, inserted] = tasks.emplace(s.task_id, std::make_pair(kind, width));
        if (!inserted && it->second != std::make_pair(kind, width)) {
            throw CorpusError(s.movie_id, "label kind does not match task '" + s.task_id + "'");
        }
    }
}

inline std::vector<LabeledScene> read_labeled_scenes(const std::filesystem::path& path) {
    std::vector<LabeledScene> out;
    for (const auto& j : read_jsonl(path)) out.push_back(labeled_scene_from_json(j));
    return out;
}

inline void write_labeled_scenes(const std::filesystem::path& path, const std::vector<LabeledScene>& scenes) {
    std::vector<Json> rows;
    rows.reserve(scenes.size());
    for (const auto& s : scenes) rows.push_back(to_json(s));
    write_jsonl(path, rows);
}

/// A candidate shot boundary between shots `boundary - 1` and `boundary`.
struct BoundarySample {
    std::string movie_id;
    int boundary = 0;
    int label = 0;
    std::string split = "train";
};

inline Json to_json(const BoundarySample& b) {
    return Json{{"movie_id", b.movie_id}, {"boundary", b.boundary}, {"label", b.label}, {"split", b.split}};
}

inline std::vector<BoundarySample> read_boundaries(const std::filesystem::path& path) {
    std::vector<BoundarySample> out;
    for (const auto& j : read_jsonl(path)) {
        out.push_back({j.at("movie_id").get<std::string>(), j.at("boundary").get<int>(), j.at("label").get<int>(),
                       j.value("split", std::string("train"))});
    }
    return out;
}

inline void write_boundaries(const std::filesystem::path& path, const std::vector<BoundarySample>& samples) {
    std::vector<Json> rows;
    for (const auto& b : samples) rows.push_back(to_json(b));
    write_jsonl(path, rows);
}

}  // namespace m2s
