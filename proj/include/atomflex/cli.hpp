#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pipeline.hpp"

namespace atomflex {

namespace clidetail {

/// Loads and validates the run config. ATOMFLEX_CACHE_DIR, when set, wins
/// over the configured cache path so shared machines can point every run at
/// one structure cache.
inline PipelineConfig load_run_config(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path))
        throw ContractError("config file " + path.string() + " does not exist");
    PipelineConfig cfg = load_config(path);
    if (const char* env = std::getenv("ATOMFLEX_CACHE_DIR"); env != nullptr && *env != '\0')
        cfg.paths.cache = env;
    return cfg;
}

inline CorpusManifest require_manifest(const PipelineConfig& cfg) {
    const auto path = manifest_path(cfg);
    if (!std::filesystem::exists(path))
        throw ContractError("no corpus manifest at " + path.string() +
                            "; run the ingest command first");
    return CorpusManifest::load(path);
}

inline LoadedCheckpoint require_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path))
        throw ContractError("checkpoint " + path.string() +
                            " does not exist; run the train command first");
    return load_checkpoint(path);
}

inline ProteinStructure read_structure_file(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path))
        throw ContractError("structure file " + path.string() + " does not exist");
    ProteinStructure s = parse_pdb(iodetail::read_file(path));
    s = strip_hetero(std::move(s));
    if (s.id.empty()) s.id = path.stem().string();
    return s;
}

/// reports/<utc timestamp>/, suffixed when two reports land in one second.
inline std::filesystem::path fresh_report_dir(const PipelineConfig& cfg) {
    std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
    std::filesystem::path dir = cfg.paths.reports / stamp;
    for (int k = 2; std::filesystem::exists(dir); ++k)
        dir = cfg.paths.reports / (std::string(stamp) + "-" + std::to_string(k));
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return std::string(buf);
}

inline double vec_mean(const std::vector<double>& xs) {
    double s = 0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

inline double vec_std(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0;
    const double m = vec_mean(xs);
    double s = 0;
    for (double x : xs) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

inline std::string mean_pm_std(const std::vector<double>& xs) {
    if (xs.empty()) return "n/a";
    return fmt(vec_mean(xs)) + " " + "±" + " " + fmt(vec_std(xs));
}

inline std::string opt_fmt(const std::optional<double>& v) {
    return v ? fmt(*v) : "n/a";
}

inline int cmd_ingest(const std::filesystem::path& config_path,
                      const std::filesystem::path& codes_file, bool include_hetero,
                      std::size_t workers, const std::string& base_url, std::ostream& out,
                      std::ostream& err) {
    const PipelineConfig cfg = load_run_config(config_path);
    const std::vector<std::string> codes = read_code_list(codes_file);
    if (codes.empty()) throw ContractError("ingest: " + codes_file.string() + " lists no codes");
    CorpusManifest manifest = load_or_create_manifest(cfg);
    FetchOptions fetch;
    if (!base_url.empty()) fetch.base_url = base_url;

    const IngestSummary s = ingest_codes(codes, cfg, manifest, fetch, include_hetero, workers);
    out << "ingest: " << s.accepted << " accepted, " << s.rejected << " rejected, "
        << s.unchanged << " unchanged of " << codes.size() << " code(s)\n";
    if (s.rejected > 0) out << "rejections logged in " << rejects_path(cfg).string() << "\n";
    if (!s.ok()) {
        err << "ingest: " << s.failures.size() << " code(s) failed:\n";
        for (const StageFailure& f : s.failures) err << "  " << f.code << ": " << f.message << "\n";
        return 1;
    }
    return 0;
}

inline int cmd_featurize(const std::filesystem::path& config_path, std::size_t workers,
                         std::ostream& out, std::ostream& err) {
    const PipelineConfig cfg = load_run_config(config_path);
    CorpusManifest manifest = require_manifest(cfg);
    const FeaturizeSummary s = featurize_corpus(cfg, manifest, workers);
    out << "featurize: " << s.built << " graph(s) built, " << s.unchanged << " unchanged\n";
    if (!s.ok()) {
        err << "featurize: " << s.failures.size() << " code(s) failed:\n";
        for (const StageFailure& f : s.failures) err << "  " << f.code << ": " << f.message << "\n";
        return 1;
    }
    return 0;
}

inline int cmd_train(const std::filesystem::path& config_path, std::size_t runs_override,
                     std::ostream& out, std::ostream&) {
    const PipelineConfig cfg = load_run_config(config_path);
    const CorpusManifest manifest = require_manifest(cfg);
    const std::vector<std::string> codes = manifest.codes_with_status(CorpusStatus::Featurized);
    if (codes.empty())
        throw ContractError(
            "the corpus has no featurized graphs; run the featurize command first");

    const std::vector<AtomGraph> graphs = load_featurized_graphs(cfg, manifest, codes);
    std::map<std::string, const AtomGraph*> by_id;
    for (const AtomGraph& g : graphs) by_id[g.protein_id] = &g;

    const auto [train_ids, val_ids] =
        split_dataset(codes, cfg.train.split_ratio, cfg.train.split_seed);
    std::vector<const AtomGraph*> train_set, val_set;
    for (const std::string& id : train_ids) train_set.push_back(by_id.at(id));
    for (const std::string& id : val_ids) val_set.push_back(by_id.at(id));
    out << "training on " << train_set.size() << " / validating on " << val_set.size()
        << " structure(s)\n";

    const std::size_t runs = runs_override > 0 ? runs_override : cfg.train.num_runs;
    const std::filesystem::path family_dir = cfg.paths.checkpoints / cfg.model.family;
    std::vector<RunSummary> summaries;
    json runs_json = json::array();
    for (std::size_t r = 0; r < runs; ++r) {
        const std::uint64_t seed = run_seed_for(cfg.seed, r);
        Model model(cfg.model, cfg.features.node_dim(), cfg.features.edge_dim(), seed);
        const std::filesystem::path run_dir = family_dir / ("run_" + std::to_string(r));
        const TrainHistory h =
            train_model(model, train_set, val_set, cfg.train, seed, run_dir, cfg.features);
        iodetail::write_file_atomic(run_dir / "history.json",
                                    history_to_json(h).dump(2) + "\n");

        const EpochRecord& last = h.epochs.back();
        RunSummary rs;
        rs.run_id = "run_" + std::to_string(r);
        rs.train_cc = last.train_metrics.mean.cc.value_or(-1.0);
        rs.val_cc = last.val_metrics.mean.cc.value_or(-1.0);
        rs.val_mape = last.val_metrics.mean.mape;
        summaries.push_back(rs);

        char ckpt_name[32];
        std::snprintf(ckpt_name, sizeof ckpt_name, "epoch_%03zu.ckpt", h.epochs.size());
        runs_json.push_back(json{{"run_id", rs.run_id},
                                 {"run_seed", seed},
                                 {"train_cc", rs.train_cc},
                                 {"val_cc", rs.val_cc},
                                 {"val_mape", rs.val_mape},
                                 {"checkpoint", (run_dir / ckpt_name).string()}});
        out << rs.run_id << ": train cc " << fmt(rs.train_cc) << ", val cc " << fmt(rs.val_cc)
            << ", val mape " << fmt(rs.val_mape) << "\n";
    }

    const SelectionOutcome sel = select_best(summaries, cfg.selection);
    const std::filesystem::path best_src = runs_json[sel.index].at("checkpoint").get<std::string>();
    const std::filesystem::path best_dst = family_dir / "best.ckpt";
    std::filesystem::copy_file(best_src, best_dst,
                               std::filesystem::copy_options::overwrite_existing);

    const json selection{{"criteria", selection_criteria_to_json(cfg.selection)},
                         {"qualified", sel.qualified},
                         {"selected", summaries[sel.index].run_id},
                         {"runs", runs_json},
                         {"best_checkpoint", best_dst.string()}};
    iodetail::write_file_atomic(family_dir / "selection.json", selection.dump(2) + "\n");

    if (sel.qualified)
        out << "selected " << summaries[sel.index].run_id << "\n";
    else
        out << "no run met the selection gates; keeping best-effort "
            << summaries[sel.index].run_id << "\n";
    out << "best checkpoint: " << best_dst.string() << "\n";
    return 0;
}

inline int cmd_evaluate(const std::filesystem::path& config_path,
                        const std::filesystem::path& checkpoint,
                        const std::filesystem::path& codes_file, std::ostream& out,
                        std::ostream&) {
    const PipelineConfig cfg = load_run_config(config_path);
    LoadedCheckpoint lc = require_checkpoint(checkpoint);
    const CorpusManifest manifest = require_manifest(cfg);
    if (feature_config_to_json(lc.features) != feature_config_to_json(cfg.features))
        throw ContractError(
            "the checkpoint was trained with a different feature set than this config; "
            "evaluate with the config the model was trained from");

    const std::vector<std::string> codes = read_code_list(codes_file);
    if (codes.empty())
        throw ContractError("evaluate: " + codes_file.string() + " lists no codes");
    const std::vector<AtomGraph> graphs = load_featurized_graphs(cfg, manifest, codes);
    std::vector<const AtomGraph*> ptrs;
    for (const AtomGraph& g : graphs) ptrs.push_back(&g);

    const MetricsReport rep = evaluate(lc.model, ptrs);
    const std::filesystem::path dir = fresh_report_dir(cfg);
    iodetail::write_file_atomic(dir / "evaluation.json",
                                metrics_report_to_json(rep).dump(2) + "\n");
    iodetail::write_file_atomic(dir / "evaluation.csv", metrics_report_to_csv(rep));

    out << "evaluated " << ptrs.size() << " structure(s)\n";
    out << "  cc   " << opt_fmt(rep.mean.cc) << " " << "±" << " "
        << opt_fmt(rep.stddev.cc) << " (pooled " << opt_fmt(rep.pooled.cc) << ")\n";
    out << "  mae  " << fmt(rep.mean.mae) << " " << "±" << " " << fmt(rep.stddev.mae)
        << " (pooled " << fmt(rep.pooled.mae) << ")\n";
    out << "  mape " << fmt(rep.mean.mape) << " " << "±" << " " << fmt(rep.stddev.mape)
        << " (pooled " << fmt(rep.pooled.mape) << ")\n";
    out << "  rrse " << opt_fmt(rep.mean.rrse) << " " << "±" << " "
        << opt_fmt(rep.stddev.rrse) << " (pooled " << opt_fmt(rep.pooled.rrse) << ")\n";
    out << "report written to " << dir.string() << "\n";
    return 0;
}

inline int cmd_predict(const std::filesystem::path& config_path,
                       const std::filesystem::path& checkpoint,
                       const std::filesystem::path& pdb_file,
                       const std::filesystem::path& out_file, std::ostream& out, std::ostream&) {
    load_run_config(config_path);  // validates the config and env overrides
    LoadedCheckpoint lc = require_checkpoint(checkpoint);
    const ProteinStructure s = read_structure_file(pdb_file);
    const AtomGraph g = build_graph(s, infer_bonds(s), lc.features);
    Tensor pred = lc.model.forward(g, false);
    std::vector<double> values;
    values.reserve(g.num_nodes());
    for (std::size_t i = 0; i < g.num_nodes(); ++i) values.push_back(pred.at(i, 0));
    iodetail::write_file_atomic(out_file, write_predictions(s, values));
    out << "wrote " << values.size() << " prediction(s) to " << out_file.string() << "\n";
    return 0;
}

inline int cmd_explain(const std::filesystem::path& config_path,
                       const std::filesystem::path& checkpoint,
                       const std::filesystem::path& pdb_file, std::size_t atom,
                       const std::filesystem::path& out_file, std::ostream& out, std::ostream&) {
    const PipelineConfig cfg = load_run_config(config_path);
    LoadedCheckpoint lc = require_checkpoint(checkpoint);
    const ProteinStructure s = read_structure_file(pdb_file);
    const AtomGraph g = build_graph(s, infer_bonds(s), lc.features);

    Explanation ex = explain_node(lc.model, g, atom, cfg.explain, cfg.seed);
    aggregate_importance(ex, feature_categories(lc.features));
    const json j = explanation_to_json(ex);

    const auto* top = &ex.category_importance.front();
    for (const auto& c : ex.category_importance)
        if (c.second > top->second) top = &c;
    out << "atom " << atom << ": leading category '" << top->first << "' at "
        << fmt(top->second) << "%\n";

    if (!out_file.empty()) {
        iodetail::write_file_atomic(out_file, j.dump(2) + "\n");
        out << "explanation written to " << out_file.string() << "\n";
    } else {
        out << j.dump(2) << "\n";
    }
    return 0;
}

inline int cmd_report(const std::filesystem::path& config_path, std::ostream& out,
                      std::ostream&) {
    const PipelineConfig cfg = load_run_config(config_path);
    const CorpusManifest manifest = require_manifest(cfg);

    const auto counts = manifest.counts();
    const auto count_of = [&](CorpusStatus s) {
        auto it = counts.find(s);
        return it == counts.end() ? std::size_t{0} : it->second;
    };
    json rejects = json::array();
    for (const auto& [code, e] : manifest.entries())
        if (e.status == CorpusStatus::FilteredOut)
            rejects.push_back(json{{"code", code}, {"reason", e.reject_reason}});
    const json corpus{{"total", manifest.size()},
                      {"fetched", count_of(CorpusStatus::Fetched)},
                      {"parsed", count_of(CorpusStatus::Parsed)},
                      {"filtered_out", count_of(CorpusStatus::FilteredOut)},
                      {"featurized", count_of(CorpusStatus::Featurized)},
                      {"rejects", rejects}};

    json dataset;
    const std::vector<std::string> codes = manifest.codes_with_status(CorpusStatus::Featurized);
    if (!codes.empty()) {
        const std::vector<AtomGraph> graphs = load_featurized_graphs(cfg, manifest, codes);
        std::size_t total = 0, mn = graphs.front().num_nodes(), mx = 0;
        for (const AtomGraph& g : graphs) {
            total += g.num_nodes();
            mn = std::min(mn, g.num_nodes());
            mx = std::max(mx, g.num_nodes());
        }
        dataset = json{{"structures", graphs.size()},
                       {"atoms_total", total},
                       {"atoms_mean", static_cast<double>(total) / graphs.size()},
                       {"atoms_min", mn},
                       {"atoms_max", mx}};
        if (codes.size() >= 2) {
            const auto [train_ids, val_ids] =
                split_dataset(codes, cfg.train.split_ratio, cfg.train.split_seed);
            dataset["train_structures"] = train_ids.size();
            dataset["val_structures"] = val_ids.size();
        }
    }

    json models = json::object();
    std::string table =
        "| model | runs | val cc | val mae | val mape | val rrse |\n"
        "| --- | --- | --- | --- | --- | --- |\n";
    if (std::filesystem::is_directory(cfg.paths.checkpoints)) {
        std::vector<std::filesystem::path> family_dirs;
        for (const auto& entry : std::filesystem::directory_iterator(cfg.paths.checkpoints))
            if (entry.is_directory() && std::filesystem::exists(entry.path() / "selection.json"))
                family_dirs.push_back(entry.path());
        std::sort(family_dirs.begin(), family_dirs.end());
        for (const auto& dir : family_dirs) {
            const std::string family = dir.filename().string();
            std::vector<double> ccs, maes, mapes, rrses;
            std::vector<std::filesystem::path> run_dirs;
            for (const auto& run : std::filesystem::directory_iterator(dir))
                if (run.is_directory() && std::filesystem::exists(run.path() / "history.json"))
                    run_dirs.push_back(run.path());
            std::sort(run_dirs.begin(), run_dirs.end());
            for (const auto& run : run_dirs) {
                const json h = json::parse(iodetail::read_file(run / "history.json"));
                if (h.at("epochs").empty()) continue;
                const json& last = h.at("epochs").back().at("validation").at("aggregate").at(
                    "mean");
                if (!last.at("cc").is_null()) ccs.push_back(last.at("cc").get<double>());
                maes.push_back(last.at("mae").get<double>());
                mapes.push_back(last.at("mape").get<double>());
                if (!last.at("rrse").is_null()) rrses.push_back(last.at("rrse").get<double>());
            }
            const json selection = json::parse(iodetail::read_file(dir / "selection.json"));
            models[family] =
                json{{"runs", run_dirs.size()},
                     {"qualified", selection.at("qualified")},
                     {"selected", selection.at("selected")},
                     {"val_cc", {{"mean", ccs.empty() ? json() : json(vec_mean(ccs))},
                                 {"std", ccs.empty() ? json() : json(vec_std(ccs))}}},
                     {"val_mae", {{"mean", maes.empty() ? json() : json(vec_mean(maes))},
                                  {"std", maes.empty() ? json() : json(vec_std(maes))}}},
                     {"val_mape", {{"mean", mapes.empty() ? json() : json(vec_mean(mapes))},
                                   {"std", mapes.empty() ? json() : json(vec_std(mapes))}}},
                     {"val_rrse", {{"mean", rrses.empty() ? json() : json(vec_mean(rrses))},
                                   {"std", rrses.empty() ? json() : json(vec_std(rrses))}}}};
            table += "| " + family + " | " + std::to_string(run_dirs.size()) + " | " +
                     mean_pm_std(ccs) + " | " + mean_pm_std(maes) + " | " + mean_pm_std(mapes) +
                     " | " + mean_pm_std(rrses) + " |\n";
        }
    }

    const std::filesystem::path dir = fresh_report_dir(cfg);
    const json report{{"corpus", corpus}, {"dataset", dataset}, {"models", models}};
    iodetail::write_file_atomic(dir / "report.json", report.dump(2) + "\n");

    std::string md = "# Corpus report\n\n## Corpus\n\n";
    md += "- total structures: " + std::to_string(manifest.size()) + "\n";
    md += "- screened in: " +
          std::to_string(count_of(CorpusStatus::Parsed) + count_of(CorpusStatus::Featurized)) +
          "\n";
    md += "- screened out: " + std::to_string(count_of(CorpusStatus::FilteredOut)) + "\n";
    md += "- featurized: " + std::to_string(count_of(CorpusStatus::Featurized)) + "\n";
    if (!rejects.empty()) {
        md += "\nRejected structures:\n\n";
        for (const auto& r : rejects)
            md += "- " + r.at("code").get<std::string>() + ": " +
                  r.at("reason").get<std::string>() + "\n";
    }
    if (!dataset.is_null()) {
        md += "\n## Dataset\n\n";
        md += "- structures: " + dataset.at("structures").dump();
        if (dataset.contains("train_structures"))
            md += " (train " + dataset.at("train_structures").dump() + ", validation " +
                  dataset.at("val_structures").dump() + ")";
        md += "\n- atoms: " + dataset.at("atoms_total").dump() + " total, mean " +
              fmt(dataset.at("atoms_mean").get<double>()) + " per structure (min " +
              dataset.at("atoms_min").dump() + ", max " + dataset.at("atoms_max").dump() + ")\n";
    }
    md += "\n## Models\n\n";
    if (models.empty())
        md += "No trained models under " + cfg.paths.checkpoints.string() +
              "; run the train command first.\n";
    else
        md += table;
    iodetail::write_file_atomic(dir / "report.md", md);

    out << md;
    out << "\nreport written to " << dir.string() << "\n";
    return 0;
}

}  // namespace clidetail

/// Parses and runs one command line (without argv[0]). Returns the process
/// exit code: 0 only when every requested action succeeded.
inline int run_command(const std::vector<std::string>& args, std::ostream& out = std::cout,
                       std::ostream& err = std::cerr) {
    CLI::App app{"per-atom displacement parameter prediction pipeline"};
    app.name("atomflex");
    app.require_subcommand(1);

    std::string config_path;
    std::string codes_file;
    std::string checkpoint;
    std::string pdb_file;
    std::string out_file;
    std::string base_url;
    bool include_hetero = false;
    std::size_t workers = 0;
    std::size_t runs = 0;
    std::int64_t atom = -1;

    const auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "pipeline config JSON")->required();
    };

    CLI::App* ingest = app.add_subcommand("ingest", "fetch, parse and screen structures");
    add_config(ingest);
    ingest->add_option("--codes", codes_file, "file listing one structure code per line")
        ->required();
    ingest->add_flag("--include-hetero", include_hetero, "keep non-water HETATM records");
    ingest->add_option("--workers", workers, "worker threads (default: CPU count)");
    ingest->add_option("--base-url", base_url, "override the download endpoint");

    CLI::App* featurize =
        app.add_subcommand("featurize", "build graphs for every screened structure");
    add_config(featurize);
    featurize->add_option("--workers", workers, "worker threads (default: CPU count)");

    CLI::App* train = app.add_subcommand("train", "train models and select the best run");
    add_config(train);
    train->add_option("--runs", runs, "number of training runs (default: from config)");

    CLI::App* evaluate = app.add_subcommand("evaluate", "score a checkpoint on stored graphs");
    add_config(evaluate);
    evaluate->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    evaluate->add_option("--codes", codes_file, "file listing the codes to score")->required();

    CLI::App* predict =
        app.add_subcommand("predict", "write predicted displacement parameters into a PDB file");
    add_config(predict);
    predict->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    predict->add_option("--pdb", pdb_file, "input structure file")->required();
    predict->add_option("--out", out_file, "output structure file")->required();

    CLI::App* explain =
        app.add_subcommand("explain", "attribute one atom's prediction to its inputs");
    add_config(explain);
    explain->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    explain->add_option("--pdb", pdb_file, "input structure file")->required();
    explain->add_option("--atom", atom, "node index to explain")->required();
    explain->add_option("--out", out_file, "write the explanation JSON here instead of stdout");

    CLI::App* report =
        app.add_subcommand("report", "summarize the corpus and all trained models");
    add_config(report);

    try {
        std::vector<const char*> argv;
        argv.reserve(args.size() + 1);
        argv.push_back("atomflex");
        for (const std::string& a : args) argv.push_back(a.c_str());
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        if (*ingest)
            return clidetail::cmd_ingest(config_path, codes_file, include_hetero, workers,
                                         base_url, out, err);
        if (*featurize) return clidetail::cmd_featurize(config_path, workers, out, err);
        if (*train) return clidetail::cmd_train(config_path, runs, out, err);
        if (*evaluate) return clidetail::cmd_evaluate(config_path, checkpoint, codes_file, out, err);
        if (*predict)
            return clidetail::cmd_predict(config_path, checkpoint, pdb_file, out_file, out, err);
        if (*explain) {
            if (atom < 0) throw ContractError("--atom must be a non-negative node index");
            return clidetail::cmd_explain(config_path, checkpoint, pdb_file,
                                          static_cast<std::size_t>(atom), out_file, out, err);
        }
        if (*report) return clidetail::cmd_report(config_path, out, err);
        err << "atomflex: no command selected\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace atomflex
