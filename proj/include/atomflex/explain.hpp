#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <string>
#include <utility>
#include <vector>

#include "model.hpp"

namespace atomflex {

/// Mask-learning settings. hops == 0 means "use the model's layer depth",
/// which is the receptive field of one prediction.
struct ExplainConfig {
    std::size_t epochs = 200;
    double mask_learning_rate = 0.05;
    double size_penalty = 0.005;
    double entropy_penalty = 1.0;
    std::size_t hops = 0;

    void validate() const {
        if (epochs < 1) throw ContractError("ExplainConfig: epochs must be at least 1");
        if (!(mask_learning_rate > 0))
            throw ContractError("ExplainConfig: mask_learning_rate must be positive");
        if (size_penalty < 0 || entropy_penalty < 0)
            throw ContractError("ExplainConfig: penalties must be non-negative");
    }
};

inline json explain_config_to_json(const ExplainConfig& c) {
    return json{{"epochs", c.epochs},
                {"mask_learning_rate", c.mask_learning_rate},
                {"size_penalty", c.size_penalty},
                {"entropy_penalty", c.entropy_penalty},
                {"hops", c.hops}};
}

inline ExplainConfig explain_config_from_json(const json& j, const std::string& where = "explain") {
    schemadetail::require_keys(
        j, {"epochs", "mask_learning_rate", "size_penalty", "entropy_penalty", "hops"}, where);
    ExplainConfig c;
    c.epochs = schemadetail::get_field<std::size_t>(j, "epochs", c.epochs, where);
    c.mask_learning_rate =
        schemadetail::get_field<double>(j, "mask_learning_rate", c.mask_learning_rate, where);
    c.size_penalty = schemadetail::get_field<double>(j, "size_penalty", c.size_penalty, where);
    c.entropy_penalty =
        schemadetail::get_field<double>(j, "entropy_penalty", c.entropy_penalty, where);
    c.hops = schemadetail::get_field<std::size_t>(j, "hops", c.hops, where);
    c.validate();
    return c;
}

/// Learned attribution for one atom. The masks are raw sigmoid values; the
/// importance fields hold percentages and are filled by aggregate_importance.
struct Explanation {
    std::size_t node_id = 0;
    std::vector<double> feature_mask;  // length C, each in (0,1)
    std::vector<double> edge_mask;     // one per subgraph edge, each in (0,1)
    std::vector<std::pair<std::size_t, std::size_t>> edge_endpoints;  // original node ids
    std::vector<double> feature_importance;                           // percentages
    std::vector<std::pair<std::string, double>> category_importance;  // percentages
};

namespace explaindetail {

struct Subgraph {
    AtomGraph graph;
    std::size_t target_row = 0;                // node_id's row in the subgraph
    std::vector<std::int32_t> nodes;           // original ids, ascending
    std::vector<std::size_t> edges;            // original edge indices, kept order
};

/// Nodes with a directed path of length <= hops INTO node_id, plus all edges
/// between them. This is exactly the computational graph of the prediction.
inline Subgraph khop_subgraph(const AtomGraph& g, std::size_t node_id, std::size_t hops) {
    const std::size_t n = g.num_nodes();
    std::vector<std::vector<std::int32_t>> into(n);
    for (std::size_t e = 0; e < g.num_edges(); ++e)
        into[static_cast<std::size_t>(g.receivers[e])].push_back(g.senders[e]);

    std::vector<bool> seen(n, false);
    seen[node_id] = true;
    std::deque<std::pair<std::int32_t, std::size_t>> frontier;
    frontier.emplace_back(static_cast<std::int32_t>(node_id), 0);
    while (!frontier.empty()) {
        auto [v, d] = frontier.front();
        frontier.pop_front();
        if (d == hops) continue;
        for (std::int32_t u : into[static_cast<std::size_t>(v)])
            if (!seen[static_cast<std::size_t>(u)]) {
                seen[static_cast<std::size_t>(u)] = true;
                frontier.emplace_back(u, d + 1);
            }
    }

    Subgraph out;
    std::vector<std::int32_t> local(n, -1);
    for (std::size_t v = 0; v < n; ++v)
        if (seen[v]) {
            local[v] = static_cast<std::int32_t>(out.nodes.size());
            out.nodes.push_back(static_cast<std::int32_t>(v));
        }
    out.target_row = static_cast<std::size_t>(local[node_id]);

    AtomGraph& s = out.graph;
    s.protein_id = g.protein_id;
    s.node_features = gather_rows(g.node_features, out.nodes);
    s.coords = gather_rows(g.coords, out.nodes);
    s.targets = gather_rows(g.targets, out.nodes);
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
        const std::int32_t ls = local[static_cast<std::size_t>(g.senders[e])];
        const std::int32_t lr = local[static_cast<std::size_t>(g.receivers[e])];
        if (ls < 0 || lr < 0) continue;
        s.senders.push_back(ls);
        s.receivers.push_back(lr);
        out.edges.push_back(e);
    }
    s.edge_features = Tensor(out.edges.size(), g.edge_features.cols());
    for (std::size_t i = 0; i < out.edges.size(); ++i)
        for (std::size_t j = 0; j < g.edge_features.cols(); ++j)
            s.edge_features.at(i, j) = g.edge_features.at(out.edges[i], j);
    return out;
}

/// Clears requires_grad on every model parameter for the optimization and
/// restores it afterwards, so mask training never touches the weights.
struct FreezeParams {
    std::vector<Tensor> params;
    explicit FreezeParams(Model& m) {
        m.parameters().for_each_parameter([&](const std::string&, Tensor& t) {
            params.push_back(t);
            t.set_requires_grad(false);
        });
    }
    ~FreezeParams() {
        for (Tensor& t : params) t.set_requires_grad(true);
    }
};

/// size_penalty * sum(mask) + entropy_penalty * sum of elementwise binary
/// entropy; the entropy input is clamped away from {0,1} to keep log finite.
inline Tensor mask_penalty(const Tensor& m, double size_w, double entropy_w) {
    Tensor safe = clamp(m, Real(1e-6), Real(1) - Real(1e-6));
    Tensor flip = affine(safe, Real(-1), Real(1));
    Tensor ent = neg(add(mul(safe, atomflex::log(safe)), mul(flip, atomflex::log(flip))));
    return add(affine(sum_all(m), static_cast<Real>(size_w), Real(0)),
               affine(sum_all(ent), static_cast<Real>(entropy_w), Real(0)));
}

}  // namespace explaindetail

/// Learn sigmoid-parameterized masks over the node-feature columns and the
/// subgraph edges that keep node_id's prediction close to its unmasked value
/// while shrinking toward nothing. Model weights stay frozen throughout.
inline Explanation explain_node(Model& model, const AtomGraph& g, std::size_t node_id,
                                const ExplainConfig& cfg, std::uint64_t seed = 0) {
    cfg.validate();
    if (node_id >= g.num_nodes())
        throw ContractError("explain_node: node " + std::to_string(node_id) +
                            " is out of range for " + std::to_string(g.num_nodes()) + " nodes");
    const std::size_t hops = cfg.hops ? cfg.hops : model.spec().num_layers;
    explaindetail::Subgraph sub = explaindetail::khop_subgraph(g, node_id, hops);
    const std::size_t n_edges = sub.graph.num_edges();

    explaindetail::FreezeParams freeze(model);

    Tensor reference(1, 1);
    reference.at(0, 0) = model.forward(sub.graph, false).at(sub.target_row, 0);

    // Masks start slightly below one half. The entropy penalty drives every
    // mask to a saturated extreme; starting under the ridge means entries the
    // prediction does not pull on decay to zero instead of riding noise up.
    Rng rng(seed);
    ParameterStore masks;
    Tensor& feature_logits = masks.create("feature_mask", 1, model.node_dim());
    for (Real& v : feature_logits.values()) v = static_cast<Real>(rng.uniform(-0.3, -0.1));
    if (n_edges) {
        Tensor& edge_logits = masks.create("edge_mask", n_edges, 1);
        for (Real& v : edge_logits.values()) v = static_cast<Real>(rng.uniform(-0.3, -0.1));
    }

    OptimizerConfig opt;
    opt.learning_rate = cfg.mask_learning_rate;

    const std::vector<std::int32_t> target_row = {static_cast<std::int32_t>(sub.target_row)};
    Tensor feature_mask, edge_mask;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        masks.zero_grad();
        feature_mask = sigmoid(masks.get("feature_mask"));
        ForwardOverrides ov;
        ov.feature_mask = &feature_mask;
        if (n_edges) {
            edge_mask = sigmoid(masks.get("edge_mask"));
            ov.edge_mask = &edge_mask;
        }
        Tensor pred = model.forward(sub.graph, false, 0, &ov);
        Tensor loss = mae_loss(gather_rows(pred, target_row), reference);
        loss = add(loss, explaindetail::mask_penalty(feature_mask, cfg.size_penalty,
                                                     cfg.entropy_penalty));
        if (n_edges)
            loss = add(loss, explaindetail::mask_penalty(edge_mask, cfg.size_penalty,
                                                         cfg.entropy_penalty));
        loss.backward();
        masks.adamw_step(opt);
    }

    Explanation out;
    out.node_id = node_id;
    for (Real v : feature_mask.values()) out.feature_mask.push_back(static_cast<double>(v));
    if (n_edges)
        for (Real v : edge_mask.values()) out.edge_mask.push_back(static_cast<double>(v));
    for (std::size_t e : sub.edges)
        out.edge_endpoints.emplace_back(static_cast<std::size_t>(g.senders[e]),
                                        static_cast<std::size_t>(g.receivers[e]));
    return out;
}

/// Normalize the whole feature mask to percentages totalling 100 and sum
/// them per category. The category ranges must partition the feature columns.
inline void aggregate_importance(Explanation& e, const std::vector<FeatureCategory>& categories) {
    const std::size_t c = e.feature_mask.size();
    if (c == 0) throw ContractError("aggregate_importance: explanation has no feature mask");
    std::vector<int> hits(c, 0);
    for (const FeatureCategory& cat : categories) {
        if (cat.end < cat.begin || cat.end > c)
            throw ContractError("aggregate_importance: category '" + cat.name +
                                "' spans [" + std::to_string(cat.begin) + ", " +
                                std::to_string(cat.end) + ") beyond the mask width " +
                                std::to_string(c));
        for (std::size_t i = cat.begin; i < cat.end; ++i) ++hits[i];
    }
    for (std::size_t i = 0; i < c; ++i)
        if (hits[i] != 1)
            throw ContractError("aggregate_importance: feature " + std::to_string(i) +
                                " is covered " + std::to_string(hits[i]) +
                                " times; categories must partition the features");

    double total = 0;
    for (double v : e.feature_mask) total += v;
    e.feature_importance.assign(c, 0.0);
    for (std::size_t i = 0; i < c; ++i) e.feature_importance[i] = 100.0 * e.feature_mask[i] / total;
    e.category_importance.clear();
    for (const FeatureCategory& cat : categories) {
        double sum = 0;
        for (std::size_t i = cat.begin; i < cat.end; ++i) sum += e.feature_importance[i];
        e.category_importance.emplace_back(cat.name, sum);
    }
}

inline json explanation_to_json(const Explanation& e) {
    if (e.feature_importance.empty())
        throw ContractError("explanation_to_json: run aggregate_importance first");
    json edges = json::array();
    for (std::size_t i = 0; i < e.edge_endpoints.size(); ++i)
        edges.push_back(json{{"edge", {e.edge_endpoints[i].first, e.edge_endpoints[i].second}},
                             {"weight", e.edge_mask[i]}});
    json cats = json::object();
    for (const auto& [name, pct] : e.category_importance) cats[name] = pct;
    return json{{"node_id", e.node_id},
                {"per_feature", e.feature_importance},
                {"per_category", cats},
                {"edges", edges}};
}

}  // namespace atomflex
