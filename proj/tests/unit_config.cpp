#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "atomflex/config.hpp"
#include "support/presets.hpp"
#include "support/test_util.hpp"

using namespace atomflex;

#ifndef ATOMFLEX_REPO_ROOT
#define ATOMFLEX_REPO_ROOT "."
#endif

namespace {

PipelineConfig sample_config() {
    PipelineConfig c;
    c.paths.cache = "my/cache";
    c.paths.graphs = "my/graphs";
    c.paths.checkpoints = "my/ckpt";
    c.paths.reports = "my/reports";
    c.filter.max_resolution = 2.0;
    c.filter.reject_zero_b = false;
    c.model = presets::model_spec("meta");
    c.train.max_epochs = 12;
    c.train.optimizer = presets::optimizer("meta");
    c.selection.min_cc = 0.55;
    c.explain.epochs = 64;
    c.seed = 42;
    return c;
}

}  // namespace

TEST_CASE("pipeline config round trips through json") {
    const PipelineConfig a = sample_config();
    const PipelineConfig b = pipeline_config_from_json(pipeline_config_to_json(a));
    REQUIRE(pipeline_config_to_json(b) == pipeline_config_to_json(a));
    REQUIRE(b.paths.cache == std::filesystem::path("my/cache"));
    REQUIRE(b.filter.max_resolution == 2.0);
    REQUIRE_FALSE(b.filter.reject_zero_b);
    REQUIRE(b.model.family == "meta");
    REQUIRE(b.train.max_epochs == 12);
    REQUIRE(b.selection.min_cc == 0.55);
    REQUIRE(b.explain.epochs == 64);
    REQUIRE(b.seed == 42);
}

TEST_CASE("a bare seed is a complete config") {
    const PipelineConfig c = pipeline_config_from_json(json{{"seed", 9}});
    REQUIRE(c.seed == 9);
    REQUIRE(c.paths.cache == std::filesystem::path("cache"));
    REQUIRE(c.filter.max_resolution == 2.5);
    REQUIRE(c.features.node_dim() == FeatureConfig::defaults().node_dim());
    REQUIRE(c.train.max_epochs == 50);
    REQUIRE(c.train.num_runs == 3);
    REQUIRE(c.train.split_ratio == 0.85);
    REQUIRE(c.selection.min_cc == 0.6);
    REQUIRE(c.selection.max_val_mape == 0.5);
    REQUIRE(c.explain.epochs == 200);
}

TEST_CASE("the seed key is mandatory") {
    json j = pipeline_config_to_json(sample_config());
    j.erase("seed");
    try {
        pipeline_config_from_json(j);
        FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
        REQUIRE(e.key == "seed");
    }
}

TEST_CASE("unknown keys are rejected at every level") {
    json j = pipeline_config_to_json(sample_config());

    SECTION("top level") {
        j["sede"] = 1;
        try {
            pipeline_config_from_json(j);
            FAIL("expected SchemaError");
        } catch (const SchemaError& e) {
            REQUIRE(e.key == "sede");
        }
    }
    SECTION("nested in train") {
        j["train"]["learning_rte"] = 1e-3;
        try {
            pipeline_config_from_json(j);
            FAIL("expected SchemaError");
        } catch (const SchemaError& e) {
            REQUIRE(e.key == "learning_rte");
        }
    }
    SECTION("nested in paths") {
        j["paths"]["chache"] = "x";
        REQUIRE_THROWS_AS(pipeline_config_from_json(j), SchemaError);
    }
    SECTION("wrong value type") {
        j["filter"]["max_resolution"] = "tight";
        try {
            pipeline_config_from_json(j);
            FAIL("expected SchemaError");
        } catch (const SchemaError& e) {
            REQUIRE(e.key == "max_resolution");
        }
    }
}

TEST_CASE("invalid values fail validation") {
    json j = pipeline_config_to_json(sample_config());

    SECTION("empty path") {
        j["paths"]["graphs"] = "";
        REQUIRE_THROWS_AS(pipeline_config_from_json(j), ContractError);
    }
    SECTION("non-positive resolution cut") {
        j["filter"]["max_resolution"] = 0.0;
        REQUIRE_THROWS_AS(pipeline_config_from_json(j), ContractError);
    }
}

TEST_CASE("load_config reads files and reports failures usefully") {
    testutil::TempDir dir;
    const auto path = dir.path() / "run.json";

    SECTION("round trip through disk") {
        std::ofstream(path) << pipeline_config_to_json(sample_config()).dump(2);
        const PipelineConfig c = load_config(path);
        REQUIRE(pipeline_config_to_json(c) == pipeline_config_to_json(sample_config()));
    }
    SECTION("missing file") {
        REQUIRE_THROWS_AS(load_config(dir.path() / "absent.json"), ContractError);
    }
    SECTION("malformed json") {
        std::ofstream(path) << "{\"seed\": ";
        REQUIRE_THROWS_AS(load_config(path), ParseError);
    }
}

TEST_CASE("shipped presets match the tuned per-family settings") {
    const auto configs = std::filesystem::path(ATOMFLEX_REPO_ROOT) / "configs";
    for (const std::string& family : presets::family_names()) {
        INFO("family " << family);
        const PipelineConfig c = load_config(configs / (family + ".json"));
        REQUIRE(model_spec_to_json(c.model) == model_spec_to_json(presets::model_spec(family)));
        const OptimizerConfig want = presets::optimizer(family);
        REQUIRE(c.train.optimizer.learning_rate == want.learning_rate);
        REQUIRE(c.train.optimizer.epsilon == want.epsilon);
        REQUIRE(c.train.optimizer.weight_decay == want.weight_decay);
        REQUIRE(c.train.max_epochs == 50);
        REQUIRE(c.train.num_runs == 3);
        REQUIRE(c.train.split_ratio == 0.85);
        REQUIRE(c.train.batch_size_proteins == 1);
        REQUIRE(c.selection.min_cc == 0.6);
        REQUIRE(c.selection.max_val_mape == 0.5);
        REQUIRE(c.features.node_dim() == FeatureConfig::defaults().node_dim());
    }
}
