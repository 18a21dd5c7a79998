// m2s: command-line driver for the scene-representation pipeline.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "m2s/pipeline/stages.hpp"

namespace {

struct Flags {
    std::optional<std::string> config, preset, corpus, out, checkpoint, pairs, source, labels, boundaries, task;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> inputs;
};

m2s::Json overrides_from(const Flags& f) {
    m2s::Json j = m2s::Json::object();
    auto put = [&j](const char* key, const std::optional<std::string>& v) {
        if (v) j[key] = *v;
    };
    put("corpus", f.corpus);
    put("out", f.out);
    put("checkpoint", f.checkpoint);
    put("pairs", f.pairs);
    put("labels", f.labels);
    put("boundaries", f.boundaries);
    put("task", f.task);
    if (f.seed) j["seed"] = *f.seed;
    if (f.source) j["similarity"]["source"] = m2s::to_string(m2s::parse_similarity_source(*f.source));
    if (!f.inputs.empty()) j["inputs"] = f.inputs;
    return j;
}

void summarize(const m2s::Json& doc) {
    for (const auto& r : doc.at("reports")) {
        std::cout << r.at("task_id").get<std::string>() << "  " << r.at("metric").get<std::string>() << "  "
                  << r.value("arm", std::string()) << "  " << r.at("value").get<double>() << "  (n="
                  << r.at("support").get<int>() << ")\n";
    }
}

int run(const std::string& command, const m2s::PipelineConfig& cfg) {
    using namespace m2s;
    if (command == "gen-synthetic") {
        const auto g = stage_gen_synthetic(cfg);
        std::cout << "wrote " << g.corpus.manifest.movies.size() << " movies, " << g.labels.size()
                  << " labeled scenes, " << g.boundaries.size() << " boundary samples to " << cfg.out << "\n";
    } else if (command == "make-pairs") {
        const auto pairs = stage_make_pairs(cfg);
        std::cout << "wrote " << pairs.size() << " pairs to " << cfg.out << "\n";
    } else if (command == "train-movie-sim") {
        const auto t = stage_train_movie_sim(cfg);
        for (const auto& e : t.log) std::cout << "epoch " << e.epoch << "  loss " << e.loss << "  acc " << e.accuracy << "\n";
    } else if (command == "mine-scenes") {
        const auto r = stage_mine_scenes(cfg);
        for (const auto& s : r.skipped) std::cerr << "skipped: " << s << "\n";
        std::cout << "mined " << r.pairs.size() << " scene pairs to " << cfg.out << "\n";
    } else if (command == "train-contrastive") {
        const auto t = stage_train_contrastive(cfg);
        for (const auto& e : t.log) {
            std::cout << "epoch " << e.epoch << "  loss " << e.loss << "  top1 " << e.top1 << "  top5 " << e.top5 << "\n";
        }
    } else if (command == "eval-retrieval") {
        summarize(stage_eval_retrieval(cfg));
    } else if (command == "eval-probe") {
        summarize(stage_eval_probe(cfg));
    } else if (command == "eval-sbd") {
        summarize(stage_eval_sbd(cfg));
    } else if (command == "report") {
        summarize(stage_report(cfg));
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Scene representations from movie-similarity mining and momentum contrast"};
    app.require_subcommand(1);
    app.fallthrough();

    Flags f;
    app.add_option("--config", f.config, "JSON config file (patched over the preset)");
    app.add_option("--preset", f.preset, "paper | desk (default: file's preset, else desk)");
    app.add_option("--seed", f.seed, "master seed");
    app.add_option("--corpus", f.corpus, "corpus manifest.json");
    app.add_option("--out", f.out, "output file or directory");
    app.add_option("--checkpoint", f.checkpoint, "model checkpoint");
    app.add_option("--pairs", f.pairs, "similarity pairs, or P_scene for train-contrastive");
    app.add_option("--source", f.source, "mlt | synopsis | genre");
    app.add_option("--labels", f.labels, "labeled scenes (JSONL)");
    app.add_option("--boundaries", f.boundaries, "boundary samples (JSONL)");
    app.add_option("--task", f.task, "task id for eval-probe / eval-retrieval");
    app.add_option("--inputs", f.inputs, "metric documents for report");
    bool print_config = false;
    app.add_flag("--print-config", print_config, "print the resolved config and exit");

    const char* commands[][2] = {
        {"gen-synthetic", "generate a synthetic corpus with planted themes and signature scenes"},
        {"make-pairs", "movie-level positive pairs from metadata plus random negatives"},
        {"train-movie-sim", "train the movie-similarity network"},
        {"mine-scenes", "mine positive scene pairs from similar movies"},
        {"train-contrastive", "train the scene encoder with momentum contrast"},
        {"eval-retrieval", "kNN scene retrieval precision@k"},
        {"eval-probe", "MLP probe on a labeled-scene task"},
        {"eval-sbd", "scene-boundary detection AP"},
        {"report", "aggregate metric documents"},
    };
    for (const auto& c : commands) app.add_subcommand(c[0], c[1]);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        const m2s::PipelineConfig cfg = m2s::resolve_config(f.preset, f.config, overrides_from(f));
        if (print_config) {
            std::cout << m2s::Json(cfg).dump(2) << "\n";
            return 0;
        }
        return run(command, cfg);
    } catch (const std::exception& e) {
        std::cerr << "m2s " << command << ": error: " << e.what() << "\n";
        return 1;
    }
}
