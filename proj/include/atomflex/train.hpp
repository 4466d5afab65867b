#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "atomflex/featurize.hpp"
#include "atomflex/metrics.hpp"
#include "atomflex/model.hpp"
#include "atomflex/optim.hpp"
#include "atomflex/rng.hpp"

namespace atomflex {

struct TrainConfig {
    std::size_t max_epochs = 50;
    std::size_t batch_size_proteins = 1;  // one protein per step, not configurable
    OptimizerConfig optimizer;
    double split_ratio = 0.85;
    std::uint64_t split_seed = 0;
    std::size_t num_runs = 3;
    std::string loss = "mae";
    std::size_t max_atoms_per_protein = 100000;  // memory guard, skip + log

    void validate() const {
        optimizer.validate();
        if (max_epochs < 1) throw ContractError("TrainConfig: max_epochs must be >= 1");
        if (batch_size_proteins != 1)
            throw ContractError("TrainConfig: batch size is fixed at one protein");
        if (!(split_ratio > 0 && split_ratio < 1))
            throw ContractError("TrainConfig: split_ratio must lie in (0, 1)");
        if (num_runs < 1) throw ContractError("TrainConfig: num_runs must be >= 1");
        if (loss != "mae") throw ContractError("TrainConfig: only the mae loss is supported");
        if (max_atoms_per_protein < 1)
            throw ContractError("TrainConfig: max_atoms_per_protein must be >= 1");
    }
};

inline json train_config_to_json(const TrainConfig& c) {
    return json{{"max_epochs", c.max_epochs},
                {"batch_size_proteins", c.batch_size_proteins},
                {"optimizer", optimizer_config_to_json(c.optimizer)},
                {"split_ratio", c.split_ratio},
                {"split_seed", c.split_seed},
                {"num_runs", c.num_runs},
                {"loss", c.loss},
                {"max_atoms_per_protein", c.max_atoms_per_protein}};
}

inline TrainConfig train_config_from_json(const json& j, const std::string& where = "train") {
    schemadetail::require_keys(j,
                               {"max_epochs", "batch_size_proteins", "optimizer",
                                "split_ratio", "split_seed", "num_runs", "loss",
                                "max_atoms_per_protein"},
                               where);
    TrainConfig c;
    c.max_epochs = schemadetail::get_field<std::size_t>(j, "max_epochs", c.max_epochs, where);
    c.batch_size_proteins = schemadetail::get_field<std::size_t>(j, "batch_size_proteins",
                                                                 c.batch_size_proteins, where);
    if (j.contains("optimizer"))
        c.optimizer = optimizer_config_from_json(j.at("optimizer"), where + ".optimizer");
    c.split_ratio = schemadetail::get_field<double>(j, "split_ratio", c.split_ratio, where);
    c.split_seed = schemadetail::get_field<std::uint64_t>(j, "split_seed", c.split_seed, where);
    c.num_runs = schemadetail::get_field<std::size_t>(j, "num_runs", c.num_runs, where);
    c.loss = schemadetail::get_field<std::string>(j, "loss", c.loss, where);
    c.max_atoms_per_protein = schemadetail::get_field<std::size_t>(
        j, "max_atoms_per_protein", c.max_atoms_per_protein, where);
    c.validate();
    return c;
}

struct SelectionCriteria {
    double min_cc = 0.6;        // gate on both train and validation cc
    double max_val_mape = 0.5;  // gate on validation mape

    void validate() const {
        if (!std::isfinite(min_cc) || !std::isfinite(max_val_mape))
            throw ContractError("SelectionCriteria: thresholds must be finite");
    }
};

inline json selection_criteria_to_json(const SelectionCriteria& c) {
    return json{{"min_cc", c.min_cc}, {"max_val_mape", c.max_val_mape}};
}

inline SelectionCriteria selection_criteria_from_json(const json& j,
                                                      const std::string& where = "selection") {
    schemadetail::require_keys(j, {"min_cc", "max_val_mape"}, where);
    SelectionCriteria c;
    c.min_cc = schemadetail::get_field<double>(j, "min_cc", c.min_cc, where);
    c.max_val_mape = schemadetail::get_field<double>(j, "max_val_mape", c.max_val_mape, where);
    c.validate();
    return c;
}

/// Deterministic 85/15-style split: sort ids, shuffle them with the seed, and
/// take the first ceil(ratio * n) as the training set. The same seed over the
/// same id set yields the same partition no matter who asks.
inline std::pair<std::vector<std::string>, std::vector<std::string>> split_dataset(
    std::vector<std::string> ids, double ratio, std::uint64_t seed) {
    if (ids.size() < 2) throw ContractError("split_dataset: need at least 2 proteins");
    if (!(ratio > 0 && ratio < 1)) throw ContractError("split_dataset: ratio must lie in (0, 1)");
    std::sort(ids.begin(), ids.end());
    Rng rng(seed);
    rng.shuffle(ids);
    const std::size_t k = static_cast<std::size_t>(
        std::ceil(ratio * static_cast<double>(ids.size())));
    if (k >= ids.size())
        throw ContractError("split_dataset: ratio " + std::to_string(ratio) +
                            " leaves no validation proteins");
    std::vector<std::string> train(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k));
    std::vector<std::string> val(ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end());
    return {std::move(train), std::move(val)};
}

namespace traindetail {

inline std::vector<double> to_doubles(const std::vector<Real>& v) {
    return std::vector<double>(v.begin(), v.end());
}

inline std::vector<double> predict(Model& model, const AtomGraph& g) {
    return to_doubles(model.forward(g, false).values());
}

}  // namespace traindetail

/// Eval-mode metrics over a set of graphs: per protein, aggregated, pooled.
inline MetricsReport evaluate(Model& model, const std::vector<const AtomGraph*>& graphs) {
    if (graphs.empty()) throw ContractError("evaluate: no graphs");
    std::vector<std::pair<std::string, std::pair<std::vector<double>, std::vector<double>>>>
        rows;
    for (const AtomGraph* g : graphs)
        rows.emplace_back(g->protein_id,
                          std::make_pair(traindetail::to_doubles(g->targets.values()),
                                         traindetail::predict(model, *g)));
    return make_report(rows);
}

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0;  // mean per-protein loss under dropout
    MetricsReport train_metrics;
    MetricsReport val_metrics;
};

struct TrainHistory {
    std::uint64_t run_seed = 0;
    std::vector<std::string> skipped;  // oversized proteins, with reasons
    std::vector<EpochRecord> epochs;
};

inline json history_to_json(const TrainHistory& h) {
    json epochs = json::array();
    for (const EpochRecord& e : h.epochs)
        epochs.push_back(json{{"epoch", e.epoch},
                              {"train_loss", e.train_loss},
                              {"train", metrics_report_to_json(e.train_metrics)},
                              {"validation", metrics_report_to_json(e.val_metrics)}});
    return json{{"run_seed", h.run_seed}, {"skipped", h.skipped}, {"epochs", epochs}};
}

/// Seed for run r, derived so distinct runs differ in both initialization
/// and shuffling order while remaining reproducible from the base seed.
inline std::uint64_t run_seed_for(std::uint64_t base_seed, std::size_t run_index) {
    return Rng(base_seed).split("run" + std::to_string(run_index)).next_u64();
}

/// One training run: per epoch, visit each training protein once in a seeded
/// shuffled order, step AdamW on the MAE loss after every protein, then score
/// both splits in eval mode. A checkpoint lands in checkpoint_dir (when
/// given) after every epoch. No early stopping; runs to max_epochs.
inline TrainHistory train_model(Model& model, const std::vector<const AtomGraph*>& train_set,
                                const std::vector<const AtomGraph*>& val_set,
                                const TrainConfig& cfg, std::uint64_t run_seed,
                                const std::optional<std::filesystem::path>& checkpoint_dir,
                                const FeatureConfig& features) {
    cfg.validate();
    TrainHistory hist;
    hist.run_seed = run_seed;

    std::vector<const AtomGraph*> train_use, val_use;
    auto admit = [&](const std::vector<const AtomGraph*>& in,
                     std::vector<const AtomGraph*>& out) {
        for (const AtomGraph* g : in) {
            if (g->num_nodes() > cfg.max_atoms_per_protein)
                hist.skipped.push_back(g->protein_id + ": " + std::to_string(g->num_nodes()) +
                                       " atoms exceed the cap of " +
                                       std::to_string(cfg.max_atoms_per_protein));
            else
                out.push_back(g);
        }
    };
    admit(train_set, train_use);
    admit(val_set, val_use);
    if (train_use.empty()) throw ContractError("train_model: no training proteins admitted");
    if (val_use.empty()) throw ContractError("train_model: no validation proteins admitted");

    if (checkpoint_dir) std::filesystem::create_directories(*checkpoint_dir);
    Rng base(run_seed);
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        Rng er = base.split("epoch" + std::to_string(epoch));
        std::vector<std::size_t> order(train_use.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        er.shuffle(order);

        double loss_sum = 0;
        for (std::size_t idx : order) {
            const AtomGraph& g = *train_use[idx];
            // the graph engine also traps non-finite values mid-forward;
            // either way the abort names the offending protein
            try {
                Tensor pred = model.forward(g, true, er.next_u64());
                Tensor loss = mae_loss(pred, g.targets);
                const double value = loss.values()[0];
                if (!std::isfinite(value)) throw ContractError("loss is not finite");
                loss.backward();
                model.parameters().adamw_step(cfg.optimizer);
                loss_sum += value;
            } catch (const ContractError& e) {
                throw ContractError("train_model: training diverged on protein " +
                                    g.protein_id + " at epoch " + std::to_string(epoch) +
                                    " (" + e.what() + ")");
            }
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(train_use.size());
        rec.train_metrics = evaluate(model, train_use);
        rec.val_metrics = evaluate(model, val_use);
        hist.epochs.push_back(std::move(rec));

        if (checkpoint_dir) {
            char name[32];
            std::snprintf(name, sizeof(name), "epoch_%03zu.ckpt", epoch);
            save_checkpoint(*checkpoint_dir / name, model, cfg.optimizer, features);
        }
    }
    return hist;
}

struct RunSummary {
    std::string run_id;
    double train_cc = 0;
    double val_cc = 0;
    double val_mape = 0;
};

struct SelectionOutcome {
    bool qualified = false;  // false: nothing passed the gates
    std::size_t index = 0;   // chosen run, or the best-effort run when none qualify
};

/// Gate runs on train/validation cc and validation mape, then take the
/// qualifier with the highest validation cc. When nothing qualifies, the
/// outcome says so and still points at the best validation cc overall.
inline SelectionOutcome select_best(const std::vector<RunSummary>& runs,
                                    const SelectionCriteria& criteria) {
    if (runs.empty()) throw ContractError("select_best: no runs");
    criteria.validate();
    SelectionOutcome out;
    std::size_t fallback = 0;
    for (std::size_t i = 1; i < runs.size(); ++i)
        if (runs[i].val_cc > runs[fallback].val_cc) fallback = i;
    bool have = false;
    std::size_t best = 0;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const RunSummary& r = runs[i];
        if (!(r.train_cc > criteria.min_cc && r.val_cc > criteria.min_cc &&
              r.val_mape < criteria.max_val_mape))
            continue;
        if (!have || r.val_cc > runs[best].val_cc) {
            best = i;
            have = true;
        }
    }
    out.qualified = have;
    out.index = have ? best : fallback;
    return out;
}

}  // namespace atomflex
