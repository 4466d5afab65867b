#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "atomflex/explain.hpp"
#include "support/synthetic.hpp"
#include "support/test_util.hpp"

using namespace atomflex;

namespace {

FeatureConfig small_features() {
    FeatureConfig fc;
    fc.element_vocab = {"C", "N", "other"};
    fc.locant_vocab = {"CA", "CB", "other"};
    fc.residue_vocab = {"ALA", "GLY", "other"};
    return fc;  // 10 node features; degree sits in column 9
}

constexpr std::size_t kDegreeCol = 9;

ModelSpec passthrough_spec() {
    ModelSpec s;
    s.family = "gcn";
    s.num_layers = 1;
    s.hidden_channels = 10;  // matches node_dim so the residual is direct
    s.head_hidden_channels = 4;
    s.activation = "relu";
    s.dropout = 0.0;
    s.use_batch_norm = false;
    s.use_residual = true;
    s.use_self_loops = true;
    s.use_mlp_head = true;
    return s;
}

void zero_parameters(Model& m) {
    m.parameters().for_each_parameter([](const std::string&, Tensor& t) {
        std::fill(t.values().begin(), t.values().end(), Real(0));
    });
}

/// Prediction = the degree column of the node's own features: the conv stack
/// is zeroed (residual keeps x alive) and the head reads one column.
Model single_feature_model(const FeatureConfig& fc) {
    Model m(passthrough_spec(), fc.node_dim(), fc.edge_dim(), 3);
    zero_parameters(m);
    m.parameters().get("head/l1/w").at(kDegreeCol, 0) = Real(1);
    m.parameters().get("head/l2/w").at(0, 0) = Real(1);
    return m;
}

/// Prediction = 4.5 regardless of input.
Model constant_model(const FeatureConfig& fc) {
    Model m(passthrough_spec(), fc.node_dim(), fc.edge_dim(), 3);
    zero_parameters(m);
    m.parameters().get("head/l2/b").at(0, 0) = Real(4.5);
    return m;
}

/// Undirected path 0-1-2-3-4 with both edge directions stored.
AtomGraph path_graph(const FeatureConfig& fc) {
    const std::size_t n = 5;
    AtomGraph g;
    g.protein_id = "9PTH";
    g.node_features = Tensor(n, fc.node_dim());
    Rng rng(17);
    for (Real& v : g.node_features.values()) v = static_cast<Real>(rng.uniform(0.0, 1.0));
    g.coords = Tensor(n, 3);
    for (std::size_t i = 0; i < n; ++i) g.coords.at(i, 0) = static_cast<Real>(i) * Real(1.5);
    g.targets = Tensor(n, 1);
    for (std::size_t i = 0; i < n; ++i) g.targets.at(i, 0) = Real(10 + i);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        g.senders.push_back(static_cast<std::int32_t>(i));
        g.receivers.push_back(static_cast<std::int32_t>(i + 1));
        g.senders.push_back(static_cast<std::int32_t>(i + 1));
        g.receivers.push_back(static_cast<std::int32_t>(i));
    }
    g.edge_features = Tensor(g.senders.size(), fc.edge_dim());
    for (std::size_t e = 0; e < g.senders.size(); ++e) {
        g.edge_features.at(e, 0) = Real(1);
        g.edge_features.at(e, fc.edge_dim() - 1) = Real(0.75);
    }
    return g;
}

std::map<std::string, std::vector<Real>> weight_snapshot(const Model& m) {
    std::map<std::string, std::vector<Real>> out;
    m.parameters().for_each([&](const std::string& name, const Tensor& t, bool) {
        out[name] = t.values();
    });
    return out;
}

}  // namespace

TEST_CASE("explain config validates and round-trips") {
    ExplainConfig c;
    REQUIRE(c.epochs == 200);
    REQUIRE(c.size_penalty == 0.005);
    REQUIRE(c.entropy_penalty == 1.0);
    REQUIRE(c.hops == 0);
    REQUIRE_NOTHROW(c.validate());

    ExplainConfig back = explain_config_from_json(explain_config_to_json(c));
    REQUIRE(back.epochs == 200);
    REQUIRE(back.mask_learning_rate == c.mask_learning_rate);

    json j = explain_config_to_json(c);
    j["masc_lr"] = 0.1;
    REQUIRE_THROWS_AS(explain_config_from_json(j), SchemaError);

    ExplainConfig bad;
    bad.epochs = 0;
    REQUIRE_THROWS_AS(bad.validate(), ContractError);
    bad = ExplainConfig{};
    bad.entropy_penalty = -0.1;
    REQUIRE_THROWS_AS(bad.validate(), ContractError);
    bad = ExplainConfig{};
    bad.mask_learning_rate = 0.0;
    REQUIRE_THROWS_AS(bad.validate(), ContractError);
}

TEST_CASE("the stock feature categories partition the layout") {
    FeatureConfig fc = FeatureConfig::defaults();
    std::vector<FeatureCategory> cats = feature_categories(fc);
    REQUIRE(cats.size() == 4);
    std::map<std::string, std::size_t> widths;
    std::vector<int> hits(fc.node_dim(), 0);
    for (const FeatureCategory& cat : cats) {
        widths[cat.name] = cat.end - cat.begin;
        REQUIRE(cat.end <= fc.node_dim());
        for (std::size_t i = cat.begin; i < cat.end; ++i) ++hits[i];
    }
    REQUIRE(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
    REQUIRE(widths.at("atom degree") == 1);
    REQUIRE(widths.at("atom type") == fc.element_vocab.size());
    REQUIRE(widths.at("atom name") == fc.locant_vocab.size());
    REQUIRE(widths.at("residue type") == fc.residue_vocab.size());
}

TEST_CASE("k-hop subgraphs follow the message-passing horizon") {
    FeatureConfig fc = small_features();
    AtomGraph g = path_graph(fc);

    auto one = explaindetail::khop_subgraph(g, 0, 1);
    REQUIRE(one.nodes == std::vector<std::int32_t>{0, 1});
    REQUIRE(one.target_row == 0);
    REQUIRE(one.graph.num_edges() == 2);  // both directions of 0-1

    auto two = explaindetail::khop_subgraph(g, 0, 2);
    REQUIRE(two.nodes == std::vector<std::int32_t>{0, 1, 2});
    REQUIRE(two.graph.num_edges() == 4);

    auto mid = explaindetail::khop_subgraph(g, 2, 1);
    REQUIRE(mid.nodes == std::vector<std::int32_t>{1, 2, 3});
    REQUIRE(mid.target_row == 1);

    // features and targets come along with their rows
    auto sub = explaindetail::khop_subgraph(g, 3, 1);
    REQUIRE(sub.nodes == std::vector<std::int32_t>{2, 3, 4});
    for (std::size_t r = 0; r < sub.nodes.size(); ++r) {
        const std::size_t orig = static_cast<std::size_t>(sub.nodes[r]);
        REQUIRE(sub.graph.targets.at(r, 0) == g.targets.at(orig, 0));
        for (std::size_t c = 0; c < fc.node_dim(); ++c)
            REQUIRE(sub.graph.node_features.at(r, c) == g.node_features.at(orig, c));
    }

    // a huge horizon saturates at the whole component
    auto all = explaindetail::khop_subgraph(g, 0, 50);
    REQUIRE(all.nodes.size() == 5);
    REQUIRE(all.graph.num_edges() == g.num_edges());
}

TEST_CASE("a constant prediction drives every mask toward zero") {
    FeatureConfig fc = small_features();
    AtomGraph g = path_graph(fc);
    Model m = constant_model(fc);
    REQUIRE(m.forward(g, false).at(2, 0) == Catch::Approx(4.5));

    ExplainConfig cfg;
    Explanation e = explain_node(m, g, 2, cfg, 11);
    REQUIRE(e.feature_mask.size() == fc.node_dim());
    REQUIRE_FALSE(e.edge_mask.empty());
    for (double v : e.feature_mask) REQUIRE(v < 0.2);
    for (double v : e.edge_mask) REQUIRE(v < 0.2);
}

TEST_CASE("masks stay strictly inside the unit interval") {
    FeatureConfig fc = small_features();
    AtomGraph g = path_graph(fc);
    Model m = single_feature_model(fc);
    ExplainConfig cfg;
    cfg.epochs = 5;  // early in the optimization
    Explanation e = explain_node(m, g, 1, cfg, 7);
    for (double v : e.feature_mask) {
        REQUIRE(v > 0.0);
        REQUIRE(v < 1.0);
    }
    for (double v : e.edge_mask) {
        REQUIRE(v > 0.0);
        REQUIRE(v < 1.0);
    }
}

TEST_CASE("the generating feature wins the mask on a single-feature model") {
    FeatureConfig fc = small_features();
    AtomGraph g = path_graph(fc);
    g.node_features.at(2, kDegreeCol) = Real(0.8);
    Model m = single_feature_model(fc);
    REQUIRE(m.forward(g, false).at(2, 0) == Catch::Approx(0.8));

    ExplainConfig cfg;
    int wins = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Explanation e = explain_node(m, g, 2, cfg, seed);
        const std::size_t top = static_cast<std::size_t>(
            std::max_element(e.feature_mask.begin(), e.feature_mask.end()) -
            e.feature_mask.begin());
        if (top == kDegreeCol) ++wins;
    }
    REQUIRE(wins >= 9);
}

TEST_CASE("explanations are deterministic in the seed") {
    FeatureConfig fc = small_features();
    AtomGraph g = path_graph(fc);
    Model m = single_feature_model(fc);
    ExplainConfig cfg;
    cfg.epochs = 30;
    Explanation a = explain_node(m, g, 1, cfg, 21);
    Explanation b = explain_node(m, g, 1, cfg, 21);
    REQUIRE(a.feature_mask == b.feature_mask);
    REQUIRE(a.edge_mask == b.edge_mask);
    Explanation c = explain_node(m, g, 1, cfg, 22);
    REQUIRE(a.feature_mask != c.feature_mask);
}

TEST_CASE("explaining never touches the model weights") {
    FeatureConfig fc = small_features();
    AtomGraph g = path_graph(fc);
    Model m(passthrough_spec(), fc.node_dim(), fc.edge_dim(), 5);
    auto before = weight_snapshot(m);
    Tensor pred_before = m.forward(g, false);

    ExplainConfig cfg;
    cfg.epochs = 40;
    explain_node(m, g, 0, cfg, 3);

    REQUIRE(weight_snapshot(m) == before);
    Tensor pred_after = m.forward(g, false);
    REQUIRE(pred_after.values() == pred_before.values());

    // the weights can still train afterwards: grads flow and step cleanly
    Tensor loss = mae_loss(m.forward(g, true, 1), g.targets);
    loss.backward();
    REQUIRE_NOTHROW(m.parameters().adamw_step(OptimizerConfig{}));
}

TEST_CASE("an isolated node is explained over its own features") {
    FeatureConfig fc = small_features();
    AtomGraph g = path_graph(fc);
    // node 5 joins with no edges at all
    AtomGraph iso;
    iso.protein_id = g.protein_id;
    iso.node_features = Tensor(1, fc.node_dim());
    for (std::size_t c = 0; c < fc.node_dim(); ++c)
        iso.node_features.at(0, c) = Real(0.4);
    iso.coords = Tensor(1, 3);
    iso.targets = Tensor(1, 1);
    iso.edge_features = Tensor(0, fc.edge_dim());

    Model m = single_feature_model(fc);
    ExplainConfig cfg;
    cfg.epochs = 50;
    Explanation e = explain_node(m, iso, 0, cfg, 2);
    REQUIRE(e.feature_mask.size() == fc.node_dim());
    REQUIRE(e.edge_mask.empty());
    REQUIRE(e.edge_endpoints.empty());
}

TEST_CASE("node ids out of range are contract errors") {
    FeatureConfig fc = small_features();
    AtomGraph g = path_graph(fc);
    Model m = single_feature_model(fc);
    REQUIRE_THROWS_AS(explain_node(m, g, 5, ExplainConfig{}, 0), ContractError);
}

TEST_CASE("importance aggregation normalizes to one hundred percent") {
    Explanation e;
    e.feature_mask = {0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5};
    std::vector<FeatureCategory> cats = {{"a", 0, 2}, {"b", 2, 4}, {"c", 4, 6}, {"d", 6, 8}};
    aggregate_importance(e, cats);
    double total = 0;
    for (const auto& [name, pct] : e.category_importance) {
        REQUIRE(pct == Catch::Approx(25.0).margin(1e-9));
        total += pct;
    }
    REQUIRE(total == Catch::Approx(100.0).margin(0.1));
    for (double v : e.feature_importance) REQUIRE(v == Catch::Approx(12.5).margin(1e-9));

    // weights shift with the mask
    e.feature_mask = {0.9, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1};
    aggregate_importance(e, cats);
    REQUIRE(e.category_importance[0].second > e.category_importance[1].second);
    REQUIRE(e.feature_importance[0] == Catch::Approx(100.0 * 0.9 / 1.6).margin(1e-9));
}

TEST_CASE("category maps must partition the features") {
    Explanation e;
    e.feature_mask = {0.2, 0.4, 0.6, 0.8};
    // gap at feature 2
    REQUIRE_THROWS_AS(aggregate_importance(e, {{"a", 0, 2}, {"b", 3, 4}}), ContractError);
    // overlap on feature 2
    REQUIRE_THROWS_AS(aggregate_importance(e, {{"a", 0, 4}, {"b", 2, 3}}), ContractError);
    // spills past the mask
    REQUIRE_THROWS_AS(aggregate_importance(e, {{"a", 0, 5}}), ContractError);
    Explanation empty;
    REQUIRE_THROWS_AS(aggregate_importance(empty, {{"a", 0, 0}}), ContractError);
    REQUIRE_NOTHROW(aggregate_importance(e, {{"a", 0, 4}}));
}

TEST_CASE("explanations serialize with importances and edge weights") {
    FeatureConfig fc = small_features();
    AtomGraph g = path_graph(fc);
    Model m = single_feature_model(fc);
    ExplainConfig cfg;
    cfg.epochs = 20;
    Explanation e = explain_node(m, g, 2, cfg, 5);

    REQUIRE_THROWS_AS(explanation_to_json(e), ContractError);  // not aggregated yet
    aggregate_importance(e, feature_categories(fc));
    json j = explanation_to_json(e);
    REQUIRE(j["node_id"] == 2);
    REQUIRE(j["per_feature"].size() == fc.node_dim());
    REQUIRE(j["per_category"].size() == 4);
    REQUIRE(j["edges"].size() == e.edge_mask.size());
    REQUIRE(j["edges"][0]["edge"].size() == 2);
    const double w = j["edges"][0]["weight"].get<double>();
    REQUIRE(w > 0.0);
    REQUIRE(w < 1.0);

    double total = 0;
    for (const auto& [key, val] : j["per_category"].items()) total += val.get<double>();
    REQUIRE(total == Catch::Approx(100.0).margin(0.1));
}
