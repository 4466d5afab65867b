#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "explain.hpp"
#include "pdb.hpp"
#include "train.hpp"

namespace atomflex {

inline json filter_policy_to_json(const FilterPolicy& p) {
    return json{{"max_resolution", p.max_resolution},
                {"reject_zero_b", p.reject_zero_b},
                {"reject_constant_b", p.reject_constant_b},
                {"constant_b_variance_floor", p.constant_b_variance_floor}};
}

inline FilterPolicy filter_policy_from_json(const json& j, const std::string& where = "filter") {
    schemadetail::require_keys(
        j, {"max_resolution", "reject_zero_b", "reject_constant_b", "constant_b_variance_floor"},
        where);
    FilterPolicy p;
    p.max_resolution = schemadetail::get_field<double>(j, "max_resolution", p.max_resolution, where);
    p.reject_zero_b = schemadetail::get_field<bool>(j, "reject_zero_b", p.reject_zero_b, where);
    p.reject_constant_b =
        schemadetail::get_field<bool>(j, "reject_constant_b", p.reject_constant_b, where);
    p.constant_b_variance_floor = schemadetail::get_field<double>(
        j, "constant_b_variance_floor", p.constant_b_variance_floor, where);
    if (!(p.max_resolution > 0))
        throw ContractError(where + ": max_resolution must be positive");
    return p;
}

/// Where pipeline artifacts live. Relative entries resolve against the
/// working directory at run time.
struct PipelinePaths {
    std::filesystem::path cache = "cache";
    std::filesystem::path graphs = "graphs";
    std::filesystem::path checkpoints = "checkpoints";
    std::filesystem::path reports = "reports";

    void validate() const {
        for (const auto* p : {&cache, &graphs, &checkpoints, &reports})
            if (p->empty()) throw ContractError("paths: every pipeline path must be non-empty");
    }
};

inline json pipeline_paths_to_json(const PipelinePaths& p) {
    return json{{"cache", p.cache.string()},
                {"graphs", p.graphs.string()},
                {"checkpoints", p.checkpoints.string()},
                {"reports", p.reports.string()}};
}

inline PipelinePaths pipeline_paths_from_json(const json& j, const std::string& where = "paths") {
    schemadetail::require_keys(j, {"cache", "graphs", "checkpoints", "reports"}, where);
    PipelinePaths p;
    p.cache = schemadetail::get_field<std::string>(j, "cache", p.cache.string(), where);
    p.graphs = schemadetail::get_field<std::string>(j, "graphs", p.graphs.string(), where);
    p.checkpoints =
        schemadetail::get_field<std::string>(j, "checkpoints", p.checkpoints.string(), where);
    p.reports = schemadetail::get_field<std::string>(j, "reports", p.reports.string(), where);
    p.validate();
    return p;
}

/// Everything one pipeline invocation needs. The seed is mandatory in config
/// files: no run may depend on implicit nondeterminism.
struct PipelineConfig {
    PipelinePaths paths;
    FilterPolicy filter;
    FeatureConfig features = FeatureConfig::defaults();
    ModelSpec model;
    TrainConfig train;
    SelectionCriteria selection;
    ExplainConfig explain;
    std::uint64_t seed = 0;

    void validate() const {
        paths.validate();
        features.validate();
        model.validate();
        train.validate();
        selection.validate();
        explain.validate();
        if (!(filter.max_resolution > 0))
            throw ContractError("config: filter.max_resolution must be positive");
    }
};

inline json pipeline_config_to_json(const PipelineConfig& c) {
    return json{{"paths", pipeline_paths_to_json(c.paths)},
                {"filter", filter_policy_to_json(c.filter)},
                {"features", feature_config_to_json(c.features)},
                {"model", model_spec_to_json(c.model)},
                {"train", train_config_to_json(c.train)},
                {"selection", selection_criteria_to_json(c.selection)},
                {"explain", explain_config_to_json(c.explain)},
                {"seed", c.seed}};
}

inline PipelineConfig pipeline_config_from_json(const json& j) {
    schemadetail::require_keys(
        j, {"paths", "filter", "features", "model", "train", "selection", "explain", "seed"},
        "config");
    PipelineConfig c;
    if (j.contains("paths")) c.paths = pipeline_paths_from_json(j.at("paths"));
    if (j.contains("filter")) c.filter = filter_policy_from_json(j.at("filter"));
    if (j.contains("features")) c.features = feature_config_from_json(j.at("features"));
    if (j.contains("model")) c.model = model_spec_from_json(j.at("model"));
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    if (j.contains("selection")) c.selection = selection_criteria_from_json(j.at("selection"));
    if (j.contains("explain")) c.explain = explain_config_from_json(j.at("explain"));
    if (!j.contains("seed"))
        throw SchemaError("config: the 'seed' key is required; runs must be reproducible",
                          "seed");
    c.seed = schemadetail::get_field<std::uint64_t>(j, "seed", 0, "config");
    c.validate();
    return c;
}

/// Parse a JSON config file with a strict schema: unknown keys anywhere are
/// schema errors naming the key.
inline PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ContractError("load_config: cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    json j;
    try {
        j = json::parse(buf.str());
    } catch (const json::parse_error& e) {
        throw ParseError("load_config: " + path.string() + " is not valid JSON: " + e.what());
    }
    return pipeline_config_from_json(j);
}

}  // namespace atomflex
