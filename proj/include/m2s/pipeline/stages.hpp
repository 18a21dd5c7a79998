#pragma once

// One function per CLI subcommand. Each reads its inputs from the paths in
// the config, writes only its documented outputs, and returns what it
// computed so callers can inspect results without re-reading files.
//
//   gen-synthetic      out/ <- manifest.json, embeddings/, labels.jsonl,
//                             boundaries.jsonl, ground_truth.json
//   make-pairs         out  <- similarity pairs (JSONL)
//   train-movie-sim    out/ <- movie_sim.m2sc, movie_sim_log.jsonl
//   mine-scenes        out  <- P_scene (JSONL)
//   train-contrastive  out/ <- encoder.m2sc, contrastive_log.jsonl
//   eval-retrieval     out  <- metric document (JSON)
//   eval-probe         out  <- metric document (JSON)
//   eval-sbd           out  <- metric document (JSON)
//   report             out  <- aggregated metric document (JSON)

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "m2s/checkpoint.hpp"
#include "m2s/downstream/features.hpp"
#include "m2s/downstream/knn.hpp"
#include "m2s/downstream/probe.hpp"
#include "m2s/downstream/sbd.hpp"
#include "m2s/pipeline/config.hpp"

namespace m2s {

/// A required stage input is absent or unset.
class MissingInputError : public Error {
public:
    using Error::Error;
};

inline constexpr const char* kMovieSimCheckpoint = "movie_sim.m2sc";
inline constexpr const char* kMovieSimLog = "movie_sim_log.jsonl";
inline constexpr const char* kEncoderCheckpoint = "encoder.m2sc";
inline constexpr const char* kContrastiveLog = "contrastive_log.jsonl";

namespace detail {

inline std::filesystem::path require_file(const std::string& path, const std::string& what) {
    if (path.empty()) throw MissingInputError("missing " + what + ": no path given");
    if (!std::filesystem::exists(path)) throw MissingInputError("missing " + what + ": " + path + " does not exist");
    return path;
}

inline std::filesystem::path require_out(const std::string& path) {
    if (path.empty()) throw MissingInputError("missing output path (--out)");
    return path;
}

inline Json metric_document(const std::string& stage, const std::vector<MetricReport>& reports, Json extra = {}) {
    Json doc{{"stage", stage}, {"reports", Json::array()}};
    for (const auto& r : reports) doc["reports"].push_back(to_json(r));
    if (!extra.is_null()) doc.update(extra);
    return doc;
}

inline std::vector<LabeledScene> scenes_for_task(const std::vector<LabeledScene>& all, const std::string& task) {
    std::vector<LabeledScene> out;
    for (const auto& s : all) {
        if (s.task_id == task) out.push_back(s);
    }
    if (out.empty()) throw InvalidArgument("no labeled scenes for task '" + task + "'");
    return out;
}

/// The feature arms to evaluate: always the pooled baseline, plus the
/// encoder when a checkpoint is configured.
struct FeatureArm {
    std::string name;
    SceneFeatureFn fn;
};

}  // namespace detail

// ---------------------------------------------------------------------------

struct GeneratedCorpus {
    SyntheticCorpus corpus;
    std::vector<LabeledScene> labels;
    std::vector<BoundarySample> boundaries;
    std::filesystem::path manifest_path;
};

inline GeneratedCorpus stage_gen_synthetic(const PipelineConfig& cfg) {
    const auto dir = detail::require_out(cfg.out);
    GeneratedCorpus g;
    g.corpus = generate_synthetic_corpus(cfg.synthetic);
    g.labels = synthetic_labeled_scenes(g.corpus);
    g.boundaries = synthetic_boundaries(g.corpus, cfg.boundary_negatives, derive_seed(cfg.seed, 0xB0));
    g.manifest_path = write_corpus(g.corpus.manifest, g.corpus.matrices, dir);
    write_labeled_scenes(dir / "labels.jsonl", g.labels);
    write_boundaries(dir / "boundaries.jsonl", g.boundaries);

    Json truth{{"scene_len", g.corpus.scene_len}, {"themes", g.corpus.theme_names}, {"movies", Json::object()}};
    for (const auto& [id, theme] : g.corpus.theme_of) {
        truth["movies"][id] = Json{{"theme", theme}, {"signature_starts", g.corpus.signature_starts.at(id)}};
    }
    write_json(dir / "ground_truth.json", truth);
    return g;
}

inline std::vector<SimilarityPair> stage_make_pairs(const PipelineConfig& cfg) {
    const Corpus corpus = load_corpus(detail::require_file(cfg.corpus, "corpus manifest"));
    const auto out = detail::require_out(cfg.out);
    auto pairs = positive_pairs(corpus.manifest(), cfg.similarity.source, cfg.similarity.k_per_movie,
                                derive_seed(cfg.seed, 0x9A1));
    auto negatives =
        sample_negatives(corpus.manifest(), pairs, cfg.similarity.negative_ratio, derive_seed(cfg.seed, 0x9A2));
    pairs.insert(pairs.end(), negatives.begin(), negatives.end());
    write_pairs(out, pairs);
    return pairs;
}

inline MovieSimTraining stage_train_movie_sim(const PipelineConfig& cfg) {
    const Corpus corpus = load_corpus(detail::require_file(cfg.corpus, "corpus manifest"));
    const auto pairs = read_pairs(detail::require_file(cfg.pairs, "similarity pairs"));
    const auto dir = detail::require_out(cfg.out);
    auto training = train_movie_sim(corpus.load_all(), pairs, cfg.movie_sim);
    write_checkpoint(dir / kMovieSimCheckpoint, training.model.meta(), training.model.params);
    std::vector<Json> log;
    for (const auto& e : training.log) log.push_back(to_json(e));
    write_jsonl(dir / kMovieSimLog, log);
    return training;
}

inline MiningResult stage_mine_scenes(const PipelineConfig& cfg) {
    const Corpus corpus = load_corpus(detail::require_file(cfg.corpus, "corpus manifest"));
    const auto all_pairs = read_pairs(detail::require_file(cfg.pairs, "similarity pairs"));
    const auto model = MovieSimModel::from_checkpoint(
        read_checkpoint(detail::require_file(cfg.checkpoint, "movie-similarity checkpoint")));
    const auto out = detail::require_out(cfg.out);
    if (model.d_in != corpus.d_in()) throw ShapeError("checkpoint d_in does not match corpus d_in");
    std::vector<SimilarityPair> positives;
    for (const auto& p : all_pairs) {
        if (p.label == 1) positives.push_back(p);
    }
    auto result = mine_corpus(corpus.load_all(), positives, model, cfg.mining);
    write_scene_pairs(out, result.pairs);
    return result;
}

inline ContrastiveTraining stage_train_contrastive(const PipelineConfig& cfg) {
    const Corpus corpus = load_corpus(detail::require_file(cfg.corpus, "corpus manifest"));
    const auto p_scene = read_scene_pairs(detail::require_file(cfg.pairs, "P_scene"));
    const auto dir = detail::require_out(cfg.out);
    auto training = train_contrastive(corpus.load_all(), p_scene, cfg.moco, cfg.encoder);
    write_checkpoint(dir / kEncoderCheckpoint, training.state.query.meta(), training.state.query.params);
    std::vector<Json> log;
    for (const auto& e : training.log) log.push_back(to_json(e));
    write_jsonl(dir / kContrastiveLog, log);
    return training;
}

// ---------------------------------------------------------------------------
// Evaluation stages. Without a checkpoint only the pooled baseline runs.

namespace detail {

struct EvalInputs {
    Corpus corpus;
    MovieTable movies;
    std::optional<SceneEncoder> encoder;

    std::vector<FeatureArm> arms() const {
        std::vector<FeatureArm> out{{"baseline", mean_pool_features()}};
        if (encoder) out.push_back({"encoder", encoder_features(*encoder)});
        return out;
    }
};

inline EvalInputs load_eval_inputs(const PipelineConfig& cfg) {
    EvalInputs in{load_corpus(require_file(cfg.corpus, "corpus manifest")), {}, std::nullopt};
    in.movies = in.corpus.load_all();
    if (!cfg.checkpoint.empty()) {
        in.encoder = SceneEncoder::from_checkpoint(read_checkpoint(require_file(cfg.checkpoint, "encoder checkpoint")));
        if (in.encoder->d_in != in.corpus.d_in()) throw ShapeError("encoder d_in does not match corpus d_in");
    }
    return in;
}

inline std::vector<LabeledScene> load_task_scenes(const PipelineConfig& cfg, const CorpusManifest& manifest,
                                                  const std::string& task) {
    const auto all = read_labeled_scenes(require_file(cfg.labels, "labeled scenes"));
    validate_labeled_scenes(manifest, all);
    return scenes_for_task(all, task);
}

inline void split_scenes(const std::vector<LabeledScene>& scenes, std::vector<LabeledScene>& train,
                         std::vector<LabeledScene>& test) {
    for (const auto& s : scenes) (s.split == "test" ? test : train).push_back(s);
    if (train.empty() || test.empty()) throw InvalidArgument("labeled scenes need both train and test splits");
}

}  // namespace detail

/// kNN retrieval: test-split scenes query the train-split gallery.
inline Json stage_eval_retrieval(const PipelineConfig& cfg) {
    const auto out = detail::require_out(cfg.out);
    const auto in = detail::load_eval_inputs(cfg);
    const std::string task = cfg.task.empty() ? cfg.retrieval.task : cfg.task;
    std::vector<LabeledScene> gallery, queries;
    detail::split_scenes(detail::load_task_scenes(cfg, in.corpus.manifest(), task), gallery, queries);
    auto class_labels = [&](const std::vector<LabeledScene>& v) {
        std::vector<int> l;
        for (const auto& s : v) {
            if (label_kind(s.label) != LabelKind::Class) throw InvalidArgument("retrieval task must have class labels");
            l.push_back(std::get<int>(s.label));
        }
        return l;
    };
    const auto q_labels = class_labels(queries), g_labels = class_labels(gallery);

    std::vector<MetricReport> reports;
    Json per_class = Json::array();
    for (const auto& arm : in.arms()) {
        const Matrix q = labeled_scene_features(in.movies, queries, arm.fn);
        const Matrix g = labeled_scene_features(in.movies, gallery, arm.fn);
        for (int k : cfg.retrieval.ks) {
            const auto r = knn_retrieve(q, q_labels, g, g_labels, k);
            reports.push_back({task, "precision@" + std::to_string(k), r.precision, static_cast<int>(queries.size()),
                               arm.name});
            for (const auto& [label, cp] : r.per_class) {
                per_class.push_back(Json{{"arm", arm.name}, {"k", k}, {"label", label},
                                         {"precision", cp.precision}, {"support", cp.support}});
            }
        }
    }
    Json doc = detail::metric_document("eval-retrieval", reports, Json{{"per_class", per_class}});
    write_json(out, doc);
    return doc;
}

/// MLP probe trained on the train split, scored on the test split. The
/// objective follows the task's label kind.
inline Json stage_eval_probe(const PipelineConfig& cfg) {
    const auto out = detail::require_out(cfg.out);
    if (cfg.task.empty()) throw MissingInputError("missing task id (--task)");
    const auto in = detail::load_eval_inputs(cfg);
    std::vector<LabeledScene> train, test;
    detail::split_scenes(detail::load_task_scenes(cfg, in.corpus.manifest(), cfg.task), train, test);

    const LabelKind kind = label_kind(train.front().label);
    int n_classes = 0;
    for (const auto* v : {&train, &test}) {
        for (const auto& s : *v) {
            if (kind == LabelKind::Class) n_classes = std::max(n_classes, std::get<int>(s.label) + 1);
        }
    }
    auto targets = [&](const std::vector<LabeledScene>& v) {
        const auto n = static_cast<Eigen::Index>(v.size());
        switch (kind) {
            case LabelKind::Class: {
                std::vector<int> c;
                for (const auto& s : v) c.push_back(std::get<int>(s.label));
                return ProbeTargets::classification(std::move(c), n_classes);
            }
            case LabelKind::Real: {
                Matrix t(n, 1);
                for (Eigen::Index i = 0; i < n; ++i) t(i, 0) = std::get<double>(v[static_cast<std::size_t>(i)].label);
                return ProbeTargets::regression(std::move(t));
            }
            case LabelKind::MultiLabel: {
                const auto width = static_cast<Eigen::Index>(std::get<std::vector<std::uint8_t>>(v.front().label).size());
                Matrix t(n, width);
                for (Eigen::Index i = 0; i < n; ++i) {
                    const auto& bits = std::get<std::vector<std::uint8_t>>(v[static_cast<std::size_t>(i)].label);
                    for (Eigen::Index l = 0; l < width; ++l) t(i, l) = bits[static_cast<std::size_t>(l)] ? 1.0 : 0.0;
                }
                return ProbeTargets::multilabel(std::move(t));
            }
        }
        throw InvalidArgument("unknown label kind");
    };
    const ProbeTargets train_t = targets(train), test_t = targets(test);
    ProbeConfig probe_cfg = cfg.probe_for(cfg.task);
    probe_cfg.objective = train_t.objective;

    std::vector<MetricReport> reports;
    for (const auto& arm : in.arms()) {
        const Probe probe = train_probe(labeled_scene_features(in.movies, train, arm.fn), train_t, probe_cfg,
                                        derive_seed(cfg.seed, 0xE7));
        MetricReport r = eval_probe(probe, labeled_scene_features(in.movies, test, arm.fn), test_t, cfg.task);
        r.arm = arm.name;
        reports.push_back(r);
    }
    Json doc = detail::metric_document("eval-probe", reports);
    write_json(out, doc);
    return doc;
}

inline Json stage_eval_sbd(const PipelineConfig& cfg) {
    const auto out = detail::require_out(cfg.out);
    const auto in = detail::load_eval_inputs(cfg);
    const auto samples = read_boundaries(detail::require_file(cfg.boundaries, "boundary samples"));
    std::vector<MetricReport> reports;
    Json extra = Json::object();
    for (const auto& arm : in.arms()) {
        const auto r = sbd_evaluate(in.movies, samples, arm.fn, cfg.sbd, derive_seed(cfg.seed, 0x5BD));
        reports.push_back({"sbd", "AP", r.ap, r.support, arm.name});
        extra["positive_rate"] = r.positive_rate;
    }
    Json doc = detail::metric_document("eval-sbd", reports, extra);
    write_json(out, doc);
    return doc;
}

/// Concatenates the reports of several metric documents.
inline Json stage_report(const PipelineConfig& cfg) {
    const auto out = detail::require_out(cfg.out);
    if (cfg.inputs.empty()) throw MissingInputError("missing report inputs (--inputs)");
    Json doc{{"stage", "report"}, {"preset", cfg.preset}, {"seed", cfg.seed}, {"sources", Json::array()},
             {"reports", Json::array()}};
    for (const auto& path : cfg.inputs) {
        const Json part = read_json(detail::require_file(path, "metric document"));
        if (!part.contains("reports")) throw InvalidArgument(path + " is not a metric document");
        doc["sources"].push_back(Json{{"path", std::filesystem::path(path).filename().string()},
                                      {"stage", part.value("stage", std::string())}});
        for (const auto& r : part.at("reports")) {
            const MetricReport m = metric_report_from_json(r);
            if (!std::isfinite(m.value)) throw NumericalError(path + ": non-finite metric value");
            doc["reports"].push_back(to_json(m));
        }
    }
    write_json(out, doc);
    return doc;
}

}  // namespace m2s
