#pragma once

// Pipeline configuration: a preset ("paper" or "desk"), optionally patched
// by a JSON file, optionally patched again by command-line flags.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "m2s/downstream/probe.hpp"
#include "m2s/jsonl.hpp"
#include "m2s/moco.hpp"
#include "m2s/movie_sim.hpp"
#include "m2s/scene_encoder.hpp"
#include "m2s/scene_miner.hpp"
#include "m2s/similarity.hpp"
#include "m2s/synthetic.hpp"

namespace m2s {

class ConfigError : public Error {
public:
    using Error::Error;
};

NLOHMANN_JSON_SERIALIZE_ENUM(SimilaritySource, {
                                                   {SimilaritySource::MoreLikeThis, "mlt"},
                                                   {SimilaritySource::Synopsis, "synopsis"},
                                                   {SimilaritySource::Genre, "genre"},
                                               })

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SyntheticOptions, n_movies, n_themes, min_shots, max_shots, d_in,
                                                noise, style, signature_scenes, scene_len, motif_strength,
                                                synopsis_dim, seed)

struct SimilarityConfig {
    SimilaritySource source = SimilaritySource::Genre;
    int k_per_movie = 3;
    double negative_ratio = 1.0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SimilarityConfig, source, k_per_movie, negative_ratio)

struct RetrievalConfig {
    std::string task = "theme";
    std::vector<int> ks{1, 5, 10};
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RetrievalConfig, task, ks)

struct PipelineConfig {
    std::string preset = "desk";
    std::uint64_t seed = 0;

    // File locations; each has a matching command-line flag.
    std::string corpus;      // manifest.json
    std::string out;
    std::string checkpoint;
    std::string pairs;
    std::string labels;
    std::string boundaries;
    std::string task;
    std::vector<std::string> inputs;  // report inputs

    SyntheticOptions synthetic;
    int boundary_negatives = 3;
    SimilarityConfig similarity;
    MovieSimConfig movie_sim;
    MiningConfig mining;
    EncoderConfig encoder;
    MoCoConfig moco;
    RetrievalConfig retrieval;
    std::map<std::string, ProbeConfig> probes;  // by task id; "default" is the fallback
    ProbeConfig sbd;

    /// Probe settings for a task, falling back to "default".
    ProbeConfig probe_for(const std::string& task_id) const {
        if (auto it = probes.find(task_id); it != probes.end()) return it->second;
        if (auto it = probes.find("default"); it != probes.end()) return it->second;
        throw ConfigError("config: no probe settings for task '" + task_id + "' and no 'default' entry");
    }

    void validate() const {
        if (similarity.k_per_movie < 1) throw ConfigError("config: similarity.k_per_movie must be >= 1");
        if (!(similarity.negative_ratio > 0.0)) throw ConfigError("config: similarity.negative_ratio must be > 0");
        if (boundary_negatives < 0) throw ConfigError("config: boundary_negatives must be >= 0");
        if (retrieval.ks.empty()) throw ConfigError("config: retrieval.ks must not be empty");
        for (int k : retrieval.ks) {
            if (k < 1) throw ConfigError("config: retrieval.ks entries must be >= 1");
        }
        try {
            movie_sim.validate();
            mining.validate();
            encoder.validate();
            moco.validate();
            sbd.validate();
            for (const auto& [name, p] : probes) p.validate();
        } catch (const InvalidArgument& e) {
            throw ConfigError(std::string("config: ") + e.what());
        }
    }

    /// Copies the master seed into every stage.
    void propagate_seed() {
        synthetic.seed = seed;
        movie_sim.seed = seed;
        encoder.seed = seed;
        moco.seed = seed;
    }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PipelineConfig, preset, seed, corpus, out, checkpoint, pairs, labels,
                                                boundaries, task, inputs, synthetic, boundary_negatives, similarity,
                                                movie_sim, mining, encoder, moco, retrieval, probes, sbd)

namespace detail {

inline ProbeConfig probe(double lr, int batch, int epochs, double dropout,
                         ProbeObjective objective = ProbeObjective::SoftmaxCrossEntropy) {
    ProbeConfig p;
    p.lr = lr;
    p.batch_size = batch;
    p.epochs = epochs;
    p.dropout = dropout;
    p.objective = objective;
    return p;
}

}  // namespace detail

/// Full-scale settings.
inline PipelineConfig paper_preset() {
    PipelineConfig c;
    c.preset = "paper";
    c.similarity = {SimilaritySource::MoreLikeThis, 3, 1.0};
    c.movie_sim = MovieSimConfig{};
    c.mining = MiningConfig{};
    c.encoder.d_model = 768;
    c.encoder.n_heads = 12;
    c.encoder.n_layers = 12;
    c.encoder.out_dim = 128;
    c.moco.queue_size = 65536;
    c.moco.momentum = 0.999;
    c.moco.temperature = 0.07;
    c.moco.lr = 5e-6;
    c.moco.weight_decay = 1e-8;
    c.moco.warmup_epochs = 5;
    c.moco.batch_size = 128;
    c.moco.epochs = 20;

    using detail::probe;
    using O = ProbeObjective;
    c.probes = {
        {"default", probe(0.1, 64, 400, 0.25)},
        {"place", probe(0.1, 64, 400, 0.25)},
        {"director", probe(0.1, 16, 400, 0.875)},
        {"relationship", probe(0.5, 16, 400, 0.25)},
        {"speaking", probe(0.01, 32, 400, 0.75)},
        {"writer", probe(0.1, 16, 400, 0.75)},
        {"year", probe(0.1, 64, 400, 0.75)},
        {"genre", probe(0.01, 128, 400, 0.25)},
        {"view", probe(0.01, 16, 500, 0.75, O::SquaredError)},
        {"like", probe(0.1, 16, 500, 0.5, O::SquaredError)},
        {"place_tagging", probe(5.0, 512, 200, 0.25, O::BinaryCrossEntropy)},
    };
    c.sbd = probe(0.03, 4096, 800, 0.8, O::BinaryCrossEntropy);
    return c;
}

/// Settings sized for the synthetic corpus on one CPU core.
inline PipelineConfig desk_preset() {
    PipelineConfig c;
    c.preset = "desk";
    c.synthetic.n_movies = 40;
    c.synthetic.n_themes = 8;
    c.synthetic.min_shots = 60;
    c.synthetic.max_shots = 120;
    c.synthetic.d_in = 32;
    c.synthetic.noise = 0.1;
    c.synthetic.style = 5.0;
    c.similarity = {SimilaritySource::Genre, 3, 1.0};

    c.movie_sim.pad_len = 128;
    c.movie_sim.hidden_dim = 64;
    c.movie_sim.k_avg = 9;
    c.movie_sim.s_avg = 4;
    c.movie_sim.k_max = 8;
    c.movie_sim.s_max = 4;
    c.movie_sim.lr = 0.03;
    c.movie_sim.batch_size = 8;
    c.movie_sim.epochs = 20;

    c.mining = MiningConfig{};
    c.encoder = EncoderConfig{};
    c.moco.queue_size = 256;
    c.moco.momentum = 0.99;
    c.moco.temperature = 0.07;
    c.moco.lr = 1e-3;
    c.moco.weight_decay = 1e-8;
    c.moco.warmup_epochs = 1;
    c.moco.batch_size = 16;
    c.moco.epochs = 20;

    using detail::probe;
    using O = ProbeObjective;
    auto small = [](ProbeConfig p) {
        p.hidden_dims = {64, 64};
        return p;
    };
    c.probes = {
        {"default", small(probe(0.1, 16, 60, 0.25))},
        {"theme", small(probe(0.1, 16, 60, 0.25))},
        {"signature_fraction", small(probe(0.05, 16, 60, 0.25, O::SquaredError))},
        {"tags", small(probe(0.5, 16, 60, 0.25, O::BinaryCrossEntropy))},
    };
    c.sbd = small(probe(0.1, 16, 60, 0.25, O::BinaryCrossEntropy));
    return c;
}

inline PipelineConfig preset_config(const std::string& name) {
    if (name == "paper") return paper_preset();
    if (name == "desk") return desk_preset();
    throw ConfigError("unknown preset '" + name + "' (expected paper|desk)");
}

namespace detail {

// Every key of `patch` must exist in `base`, except below free-form maps.
inline void check_known_keys(const Json& base, const Json& patch, const std::string& prefix) {
    if (!patch.is_object() || !base.is_object()) return;
    for (const auto& [key, value] : patch.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!base.contains(key)) throw ConfigError("config: unknown key '" + path + "'");
        if (path == "probes") continue;
        check_known_keys(base.at(key), value, path);
    }
}

}  // namespace detail

/// Applies a JSON patch (file contents or flag overrides) to a config.
/// Unknown keys are rejected. A "preset" key in the patch selects the base.
inline PipelineConfig apply_config_patch(const PipelineConfig& base, const Json& patch) {
    if (!patch.is_object()) throw ConfigError("config: top level must be a JSON object");
    Json doc = base;
    if (patch.contains("preset")) {
        if (!patch.at("preset").is_string()) throw ConfigError("config: 'preset' must be a string");
        doc = preset_config(patch.at("preset").get<std::string>());
    }
    detail::check_known_keys(doc, patch, "");
    doc.merge_patch(patch);
    try {
        return doc.get<PipelineConfig>();
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

/// preset -> file -> flag overrides, then seed propagation and validation.
/// The base preset is the flag if given, else the file's "preset" key, else
/// "desk".
inline PipelineConfig resolve_config(const std::optional<std::string>& preset,
                                     const std::optional<std::string>& file, Json overrides) {
    Json doc = Json::object();
    if (file) {
        try {
            doc = read_json(*file);
        } catch (const Json::exception& e) {
            throw ConfigError("config: cannot parse " + *file + ": " + e.what());
        }
        if (!doc.is_object()) throw ConfigError("config: " + *file + " must contain a JSON object");
    }
    std::string base = "desk";
    if (preset) {
        base = *preset;
    } else if (doc.contains("preset")) {
        if (!doc.at("preset").is_string()) throw ConfigError("config: 'preset' must be a string");
        base = doc.at("preset").get<std::string>();
    }
    doc.erase("preset");
    overrides.erase("preset");
    PipelineConfig cfg = apply_config_patch(preset_config(base), doc);
    cfg = apply_config_patch(cfg, overrides);
    cfg.propagate_seed();
    cfg.validate();
    return cfg;
}

}  // namespace m2s
