#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "atomflex/errors.hpp"
#include "atomflex/featurize.hpp"
#include "atomflex/graph_io.hpp"
#include "atomflex/layers.hpp"
#include "atomflex/optim.hpp"

namespace atomflex {

using json = nlohmann::json;

enum class Family { Gcn, Gat, Tconv, Mpn, Unet, Egnn, Meta };

inline Family family_from_name(const std::string& name) {
    if (name == "gcn") return Family::Gcn;
    if (name == "gat") return Family::Gat;
    if (name == "tconv") return Family::Tconv;
    if (name == "mpn") return Family::Mpn;
    if (name == "unet") return Family::Unet;
    if (name == "egnn") return Family::Egnn;
    if (name == "meta") return Family::Meta;
    throw ContractError("unknown model family '" + name + "'");
}

inline std::string family_name(Family f) {
    switch (f) {
        case Family::Gcn: return "gcn";
        case Family::Gat: return "gat";
        case Family::Tconv: return "tconv";
        case Family::Mpn: return "mpn";
        case Family::Unet: return "unet";
        case Family::Egnn: return "egnn";
        case Family::Meta: return "meta";
    }
    throw ContractError("invalid family enum value");
}

/// Architecture description. One struct covers all seven families; fields a
/// family does not use are ignored by its builder. For unet, num_layers is
/// the encoder depth. head_hidden_channels is the MLP head width for any
/// family that uses one.
struct ModelSpec {
    std::string family = "gcn";
    std::size_t num_layers = 3;
    std::size_t hidden_channels = 128;
    std::size_t attention_heads = 1;
    Real dropout = 0;
    bool use_batch_norm = false;
    bool use_residual = true;
    bool use_self_loops = true;
    bool use_mlp_head = true;
    bool use_bias = true;
    std::string activation = "relu";
    std::size_t head_hidden_channels = 128;
    // unet
    Real pool_ratio = 0.5;
    // tconv
    bool use_beta = false;
    // egnn
    std::size_t coord_mlp_dim = 16;
    bool update_node_features = false;
    bool normalize_coords = false;
    Real coord_clamp = 1.0;
    bool apply_edge_weights = false;
    bool normalize_nodes = false;
    Real coords_scale = 1.0;
    // meta
    bool use_gat_node_update = true;

    void validate() const {
        family_from_name(family);
        activation_from_name(activation);
        if (num_layers < 1) throw ContractError("ModelSpec: num_layers must be >= 1");
        if (hidden_channels < 1) throw ContractError("ModelSpec: hidden_channels must be >= 1");
        if (attention_heads < 1) throw ContractError("ModelSpec: attention_heads must be >= 1");
        if (!(dropout >= 0 && dropout < 1))
            throw ContractError("ModelSpec: dropout must lie in [0, 1)");
        if (head_hidden_channels < 1)
            throw ContractError("ModelSpec: head_hidden_channels must be >= 1");
        if (!(pool_ratio > 0 && pool_ratio <= 1))
            throw ContractError("ModelSpec: pool_ratio must lie in (0, 1]");
        if (coord_mlp_dim < 1) throw ContractError("ModelSpec: coord_mlp_dim must be >= 1");
        if (!(coord_clamp > 0)) throw ContractError("ModelSpec: coord_clamp must be > 0");
        if (!(coords_scale > 0)) throw ContractError("ModelSpec: coords_scale must be > 0");
    }
};

namespace schemadetail {

inline void require_keys(const json& j, std::initializer_list<const char*> allowed,
                         const std::string& where) {
    if (!j.is_object()) throw SchemaError(where + ": expected a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                known = true;
                break;
            }
        if (!known) throw SchemaError(where + ": unknown key '" + it.key() + "'", it.key());
    }
}

template <typename T>
T get_field(const json& j, const std::string& key, T fallback, const std::string& where) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw SchemaError(where + ": invalid value for '" + key + "'", key);
    }
}

}  // namespace schemadetail

inline json model_spec_to_json(const ModelSpec& s) {
    return json{{"family", s.family},
                {"num_layers", s.num_layers},
                {"hidden_channels", s.hidden_channels},
                {"attention_heads", s.attention_heads},
                {"dropout", s.dropout},
                {"use_batch_norm", s.use_batch_norm},
                {"use_residual", s.use_residual},
                {"use_self_loops", s.use_self_loops},
                {"use_mlp_head", s.use_mlp_head},
                {"use_bias", s.use_bias},
                {"activation", s.activation},
                {"head_hidden_channels", s.head_hidden_channels},
                {"pool_ratio", s.pool_ratio},
                {"use_beta", s.use_beta},
                {"coord_mlp_dim", s.coord_mlp_dim},
                {"update_node_features", s.update_node_features},
                {"normalize_coords", s.normalize_coords},
                {"coord_clamp", s.coord_clamp},
                {"apply_edge_weights", s.apply_edge_weights},
                {"normalize_nodes", s.normalize_nodes},
                {"coords_scale", s.coords_scale},
                {"use_gat_node_update", s.use_gat_node_update}};
}

inline ModelSpec model_spec_from_json(const json& j, const std::string& where = "model") {
    schemadetail::require_keys(
        j,
        {"family", "num_layers", "hidden_channels", "attention_heads", "dropout",
         "use_batch_norm", "use_residual", "use_self_loops", "use_mlp_head", "use_bias",
         "activation", "head_hidden_channels", "pool_ratio", "use_beta", "coord_mlp_dim",
         "update_node_features", "normalize_coords", "coord_clamp", "apply_edge_weights",
         "normalize_nodes", "coords_scale", "use_gat_node_update"},
        where);
    using schemadetail::get_field;
    ModelSpec d;
    ModelSpec s;
    s.family = get_field<std::string>(j, "family", d.family, where);
    s.num_layers = get_field<std::size_t>(j, "num_layers", d.num_layers, where);
    s.hidden_channels = get_field<std::size_t>(j, "hidden_channels", d.hidden_channels, where);
    s.attention_heads = get_field<std::size_t>(j, "attention_heads", d.attention_heads, where);
    s.dropout = static_cast<Real>(get_field<double>(j, "dropout", d.dropout, where));
    s.use_batch_norm = get_field<bool>(j, "use_batch_norm", d.use_batch_norm, where);
    s.use_residual = get_field<bool>(j, "use_residual", d.use_residual, where);
    s.use_self_loops = get_field<bool>(j, "use_self_loops", d.use_self_loops, where);
    s.use_mlp_head = get_field<bool>(j, "use_mlp_head", d.use_mlp_head, where);
    s.use_bias = get_field<bool>(j, "use_bias", d.use_bias, where);
    s.activation = get_field<std::string>(j, "activation", d.activation, where);
    s.head_hidden_channels =
        get_field<std::size_t>(j, "head_hidden_channels", d.head_hidden_channels, where);
    s.pool_ratio = static_cast<Real>(get_field<double>(j, "pool_ratio", d.pool_ratio, where));
    s.use_beta = get_field<bool>(j, "use_beta", d.use_beta, where);
    s.coord_mlp_dim = get_field<std::size_t>(j, "coord_mlp_dim", d.coord_mlp_dim, where);
    s.update_node_features =
        get_field<bool>(j, "update_node_features", d.update_node_features, where);
    s.normalize_coords = get_field<bool>(j, "normalize_coords", d.normalize_coords, where);
    s.coord_clamp = static_cast<Real>(get_field<double>(j, "coord_clamp", d.coord_clamp, where));
    s.apply_edge_weights = get_field<bool>(j, "apply_edge_weights", d.apply_edge_weights, where);
    s.normalize_nodes = get_field<bool>(j, "normalize_nodes", d.normalize_nodes, where);
    s.coords_scale =
        static_cast<Real>(get_field<double>(j, "coords_scale", d.coords_scale, where));
    s.use_gat_node_update = get_field<bool>(j, "use_gat_node_update", d.use_gat_node_update,
                                            where);
    return s;
}

inline json optimizer_config_to_json(const OptimizerConfig& c) {
    return json{{"learning_rate", c.learning_rate},
                {"epsilon", c.epsilon},
                {"beta1", c.beta1},
                {"beta2", c.beta2},
                {"weight_decay", c.weight_decay}};
}

inline OptimizerConfig optimizer_config_from_json(const json& j,
                                                  const std::string& where = "optimizer") {
    schemadetail::require_keys(j, {"learning_rate", "epsilon", "beta1", "beta2", "weight_decay"},
                               where);
    using schemadetail::get_field;
    OptimizerConfig d;
    OptimizerConfig c;
    c.learning_rate =
        static_cast<Real>(get_field<double>(j, "learning_rate", d.learning_rate, where));
    c.epsilon = static_cast<Real>(get_field<double>(j, "epsilon", d.epsilon, where));
    c.beta1 = static_cast<Real>(get_field<double>(j, "beta1", d.beta1, where));
    c.beta2 = static_cast<Real>(get_field<double>(j, "beta2", d.beta2, where));
    c.weight_decay =
        static_cast<Real>(get_field<double>(j, "weight_decay", d.weight_decay, where));
    return c;
}

inline json feature_config_to_json(const FeatureConfig& c) {
    return json{{"element_vocab", c.element_vocab},
                {"locant_vocab", c.locant_vocab},
                {"residue_vocab", c.residue_vocab},
                {"degree_radius", c.degree_radius},
                {"degree_scale", c.degree_scale},
                {"distance_scale", c.distance_scale}};
}

inline FeatureConfig feature_config_from_json(const json& j,
                                              const std::string& where = "features") {
    schemadetail::require_keys(j,
                               {"element_vocab", "locant_vocab", "residue_vocab",
                                "degree_radius", "degree_scale", "distance_scale"},
                               where);
    using schemadetail::get_field;
    FeatureConfig d = FeatureConfig::defaults();
    FeatureConfig c;
    c.element_vocab =
        get_field<std::vector<std::string>>(j, "element_vocab", d.element_vocab, where);
    c.locant_vocab =
        get_field<std::vector<std::string>>(j, "locant_vocab", d.locant_vocab, where);
    c.residue_vocab =
        get_field<std::vector<std::string>>(j, "residue_vocab", d.residue_vocab, where);
    c.degree_radius = get_field<double>(j, "degree_radius", d.degree_radius, where);
    c.degree_scale = get_field<double>(j, "degree_scale", d.degree_scale, where);
    c.distance_scale = get_field<double>(j, "distance_scale", d.distance_scale, where);
    return c;
}

/// Optional per-forward masks, used by the attribution machinery. The feature
/// mask (1 x C) scales node feature columns; the edge mask (M x 1) scales
/// edge feature rows and the derived length weights. Masks may require
/// gradients, in which case the forward is differentiable with respect to
/// them.
struct ForwardOverrides {
    const Tensor* feature_mask = nullptr;
    const Tensor* edge_mask = nullptr;
};

/// A built architecture: parameter store plus the family's layer stack.
/// Construction is deterministic in (spec, dims, seed) regardless of build
/// order, because every tensor draws from a stream split off by its name.
class Model {
public:
    Model(const ModelSpec& spec, std::size_t node_dim, std::size_t edge_dim,
          std::uint64_t init_seed = 0)
        : spec_(spec), fam_(family_from_name(spec.family)), node_dim_(node_dim),
          edge_dim_(edge_dim) {
        spec_.validate();
        if (node_dim_ == 0 || edge_dim_ == 0)
            throw ContractError("Model: feature dimensions must be positive");
        act_ = activation_from_name(spec_.activation);
        Rng root(init_seed);
        switch (fam_) {
            case Family::Gcn: build_gcn(root); break;
            case Family::Gat: build_gat(root); break;
            case Family::Tconv: build_tconv(root); break;
            case Family::Mpn: build_mpn(root); break;
            case Family::Unet: build_unet(root); break;
            case Family::Egnn: build_egnn(root); break;
            case Family::Meta: build_meta(root); break;
        }
    }

    const ModelSpec& spec() const { return spec_; }
    Family family() const { return fam_; }
    std::size_t node_dim() const { return node_dim_; }
    std::size_t edge_dim() const { return edge_dim_; }
    ParameterStore& parameters() { return ps_; }
    const ParameterStore& parameters() const { return ps_; }
    std::size_t total_parameters() const { return ps_.total_parameters(); }

    /// N x 1 predictions. Train mode activates dropout and batch statistics;
    /// eval is deterministic. coords_out, when given, receives the final
    /// coordinates (updated only by the equivariant family).
    Tensor forward(const AtomGraph& g, bool train, std::uint64_t dropout_seed = 0,
                   const ForwardOverrides* overrides = nullptr, Tensor* coords_out = nullptr) {
        if (g.node_features.cols() != node_dim_)
            throw ContractError("forward: graph node width " +
                                std::to_string(g.node_features.cols()) +
                                " does not match model width " + std::to_string(node_dim_));
        if (g.edge_features.cols() != edge_dim_)
            throw ContractError("forward: graph edge width " +
                                std::to_string(g.edge_features.cols()) +
                                " does not match model width " + std::to_string(edge_dim_));
        const std::size_t n = g.num_nodes();
        if (n == 0) throw ContractError("forward: graph has no nodes");
        ForwardCtx fc{train, Rng(dropout_seed)};
        Tensor x = g.node_features;
        Tensor e = g.edge_features;
        Tensor w = length_edge_weight(g.edge_features);
        if (overrides && overrides->feature_mask) x = mul(x, *overrides->feature_mask);
        if (overrides && overrides->edge_mask) {
            e = mul(e, *overrides->edge_mask);
            w = mul(w, *overrides->edge_mask);
        }
        Tensor out;
        switch (fam_) {
            case Family::Gcn: {
                for (std::size_t k = 0; k < gcns_.size(); ++k)
                    x = blocks_[k].finish(
                        x, gcns_[k].apply(x, g.senders, g.receivers, w, n), fc);
                out = head_out(x, g, w, e, fc);
                break;
            }
            case Family::Gat: {
                for (std::size_t k = 0; k < gats_.size(); ++k)
                    x = blocks_[k].finish(
                        x, gats_[k].apply(x, g.senders, g.receivers, e, n), fc);
                out = head_out(x, g, w, e, fc);
                break;
            }
            case Family::Tconv: {
                for (std::size_t k = 0; k < tconvs_.size(); ++k)
                    x = blocks_[k].finish(
                        x, tconvs_[k].apply(x, g.senders, g.receivers, e, n), fc);
                out = head_out(x, g, w, e, fc);
                break;
            }
            case Family::Mpn: {
                x = (*mpn_embed_)(x);
                for (std::size_t k = 0; k < mpns_.size(); ++k)
                    x = blocks_[k].finish(
                        x, mpns_[k].apply(x, g.senders, g.receivers, e, n, fc), fc);
                out = head_out(x, g, w, e, fc);
                break;
            }
            case Family::Unet: out = unet_forward(x, g, w, fc); break;
            case Family::Egnn: out = egnn_forward(x, g, w, e, fc, coords_out); break;
            case Family::Meta: {
                Tensor eh = e;
                for (std::size_t k = 0; k < metas_.size(); ++k) {
                    auto [xn, en] = metas_[k].apply(x, eh, g.senders, g.receivers, n, fc);
                    x = blocks_[k].finish(x, xn, fc);
                    eh = en;
                }
                out = head_out(x, g, w, e, fc);
                break;
            }
        }
        if (coords_out && fam_ != Family::Egnn) *coords_out = g.coords;
        return out;
    }

private:
    std::string lname(std::size_t k) const { return "layer" + std::to_string(k); }

    void build_gcn(Rng& root) {
        std::size_t in = node_dim_;
        for (std::size_t k = 0; k < spec_.num_layers; ++k) {
            gcns_.push_back(GcnConv::create(ps_, lname(k), in, spec_.hidden_channels,
                                            spec_.use_self_loops, spec_.use_bias, root));
            push_block(lname(k), in, spec_.hidden_channels, root);
            in = spec_.hidden_channels;
        }
        build_head(in, root);
    }

    void build_gat(Rng& root) {
        std::size_t in = node_dim_;
        const std::size_t out = spec_.attention_heads * spec_.hidden_channels;
        for (std::size_t k = 0; k < spec_.num_layers; ++k) {
            gats_.push_back(GatConv::create(ps_, lname(k), in, edge_dim_,
                                            spec_.attention_heads, spec_.hidden_channels,
                                            spec_.use_self_loops, spec_.use_bias, root));
            push_block(lname(k), in, out, root);
            in = out;
        }
        build_head(in, root);
    }

    void build_tconv(Rng& root) {
        std::size_t in = node_dim_;
        for (std::size_t k = 0; k < spec_.num_layers; ++k) {
            tconvs_.push_back(TconvConv::create(
                ps_, lname(k), in, edge_dim_, spec_.hidden_channels, spec_.attention_heads,
                spec_.hidden_channels, spec_.use_self_loops, spec_.use_bias, spec_.use_beta,
                root));
            push_block(lname(k), in, spec_.hidden_channels, root);
            in = spec_.hidden_channels;
        }
        build_head(in, root);
    }

    void build_mpn(Rng& root) {
        mpn_embed_ = Linear::create(ps_, "embed", node_dim_, spec_.hidden_channels, root,
                                    spec_.use_bias);
        for (std::size_t k = 0; k < spec_.num_layers; ++k) {
            mpns_.push_back(MpnConv::create(ps_, lname(k), spec_.hidden_channels, edge_dim_,
                                            act_, spec_.use_bias, root));
            push_block(lname(k), spec_.hidden_channels, spec_.hidden_channels, root);
        }
        build_head(spec_.hidden_channels, root);
    }

    void build_unet(Rng& root) {
        std::size_t in = node_dim_;
        const std::size_t h = spec_.hidden_channels;
        for (std::size_t d = 0; d < spec_.num_layers; ++d) {
            const std::string name = "enc" + std::to_string(d);
            enc_.push_back(
                GcnConv::create(ps_, name, in, h, spec_.use_self_loops, spec_.use_bias, root));
            push_block(name, in, h, root);
            Rng pr = root.split("pool" + std::to_string(d));
            pool_p_.push_back(ps_.create_glorot("pool" + std::to_string(d) + "/p", h, 1, pr));
            in = h;
        }
        for (std::size_t d = 0; d < spec_.num_layers; ++d) {
            const std::string name = "dec" + std::to_string(d);
            dec_.push_back(
                GcnConv::create(ps_, name, h, h, spec_.use_self_loops, spec_.use_bias, root));
            push_block(name, h, h, root);
        }
        build_head(h, root);
    }

    void build_egnn(Rng& root) {
        for (std::size_t k = 0; k < spec_.num_layers; ++k) {
            egnns_.push_back(EgnnConv::create(
                ps_, lname(k), node_dim_, edge_dim_, spec_.hidden_channels,
                spec_.coord_mlp_dim, act_, spec_.dropout, spec_.coord_clamp,
                spec_.update_node_features, spec_.normalize_coords, spec_.coords_scale,
                spec_.normalize_nodes, spec_.apply_edge_weights, root));
            if (spec_.update_node_features)
                blocks_.push_back(BlockReg::create(ps_, lname(k), node_dim_, node_dim_, act_, 0,
                                                   spec_.use_batch_norm, spec_.use_residual,
                                                   root));
        }
        build_head(spec_.update_node_features ? node_dim_ : node_dim_ + 2, root);
    }

    void build_meta(Rng& root) {
        std::size_t x_in = node_dim_, e_in = edge_dim_;
        const std::size_t h = spec_.hidden_channels;
        for (std::size_t k = 0; k < spec_.num_layers; ++k) {
            metas_.push_back(MetaBlock::create(ps_, "block" + std::to_string(k), x_in, e_in, h,
                                               act_, 0, spec_.use_gat_node_update,
                                               spec_.use_bias, root));
            push_block("block" + std::to_string(k), x_in, h, root);
            x_in = h;
            e_in = h;
        }
        build_head(h, root);
    }

    void push_block(const std::string& name, std::size_t in, std::size_t out, Rng& root) {
        blocks_.push_back(BlockReg::create(ps_, name, in, out, act_, spec_.dropout,
                                           spec_.use_batch_norm, spec_.use_residual, root));
    }

    void build_head(std::size_t in, Rng& root) {
        if (spec_.use_mlp_head) {
            head_mlp_ = Mlp::create(ps_, "head", in, spec_.head_hidden_channels, 1, act_, 0,
                                    root, true);
            return;
        }
        switch (fam_) {
            case Family::Gcn:
            case Family::Unet:
                head_gcn_ = GcnConv::create(ps_, "head", in, 1, spec_.use_self_loops,
                                            spec_.use_bias, root);
                break;
            case Family::Gat:
                head_gat_ = GatConv::create(ps_, "head", in, edge_dim_, 1, 1,
                                            spec_.use_self_loops, spec_.use_bias, root);
                break;
            case Family::Tconv:
                head_tconv_ = TconvConv::create(ps_, "head", in, edge_dim_, 1, 1, 1,
                                                spec_.use_self_loops, spec_.use_bias,
                                                spec_.use_beta, root);
                break;
            default:
                head_lin_ = Linear::create(ps_, "head", in, 1, root, true);
                break;
        }
    }

    Tensor head_out(const Tensor& x, const AtomGraph& g, const Tensor& w, const Tensor& e,
                    ForwardCtx& fc) {
        if (head_mlp_) return head_mlp_->apply(x, fc);
        if (head_gcn_) return head_gcn_->apply(x, g.senders, g.receivers, w, g.num_nodes());
        if (head_gat_) return head_gat_->apply(x, g.senders, g.receivers, e, g.num_nodes());
        if (head_tconv_)
            return head_tconv_->apply(x, g.senders, g.receivers, e, g.num_nodes());
        return (*head_lin_)(x);
    }

    Tensor unet_forward(Tensor x, const AtomGraph& g, const Tensor& w0, ForwardCtx& fc) {
        struct SavedLevel {
            Tensor skip;
            std::vector<std::int32_t> send, recv;
            Tensor w;
            std::vector<std::int32_t> kept;
            std::size_t n = 0;
        };
        const std::size_t depth = spec_.num_layers;
        std::vector<SavedLevel> levels;
        std::vector<std::int32_t> send = g.senders, recv = g.receivers;
        Tensor w = w0;
        std::size_t n = g.num_nodes();
        for (std::size_t d = 0; d < depth; ++d) {
            x = blocks_[d].finish(x, enc_[d].apply(x, send, recv, w, n), fc);
            PoolResult pr = topk_pool(x, pool_p_[d], spec_.pool_ratio);
            InducedEdges ie = induce_edges(send, recv, pr.kept, n);
            levels.push_back({x, std::move(send), std::move(recv), w, pr.kept, n});
            x = pr.gated;
            send = std::move(ie.send);
            recv = std::move(ie.recv);
            w = ie.edge_rows.empty() ? Tensor(0, 1) : gather_rows(w, ie.edge_rows);
            n = pr.kept.size();
        }
        for (std::size_t d = depth; d-- > 0;) {
            const SavedLevel& lv = levels[d];
            x = add(scatter_rows(x, lv.kept, lv.n), lv.skip);
            x = blocks_[depth + d].finish(x, dec_[d].apply(x, lv.send, lv.recv, lv.w, lv.n),
                                          fc);
        }
        Tensor dummy_e(g.num_edges(), edge_dim_);
        return head_out(x, g, w0, dummy_e, fc);
    }

    Tensor egnn_forward(Tensor x, const AtomGraph& g, const Tensor& w, const Tensor& e,
                        ForwardCtx& fc, Tensor* coords_out) {
        const std::size_t n = g.num_nodes();
        Tensor p = g.coords;
        Tensor p0 = p;
        for (std::size_t k = 0; k < egnns_.size(); ++k) {
            auto [xn, pn] = egnns_[k].apply(x, p, g.senders, g.receivers, e,
                                            spec_.apply_edge_weights ? &w : nullptr, n, fc);
            x = spec_.update_node_features ? blocks_[k].finish(x, xn, fc) : xn;
            p = pn;
        }
        if (coords_out) *coords_out = p;
        Tensor hx = x;
        if (!spec_.update_node_features) {
            Tensor mean_len;
            if (g.num_edges() == 0) {
                mean_len = Tensor::zeros(n, 1);
            } else {
                Tensor rel = sub(gather_rows(p, g.receivers), gather_rows(p, g.senders));
                mean_len = segment_mean(rowwise_norm(rel), g.receivers, n);
            }
            Tensor disp = rowwise_norm(sub(p, p0));
            hx = concat_cols(x, mean_len, disp);
        }
        if (head_mlp_) return head_mlp_->apply(hx, fc);
        return (*head_lin_)(hx);
    }

    ModelSpec spec_;
    Family fam_;
    std::size_t node_dim_ = 0, edge_dim_ = 0;
    Activation act_ = Activation::Relu;
    ParameterStore ps_;
    std::vector<GcnConv> gcns_;
    std::vector<GatConv> gats_;
    std::vector<TconvConv> tconvs_;
    std::vector<MpnConv> mpns_;
    std::vector<EgnnConv> egnns_;
    std::vector<MetaBlock> metas_;
    std::vector<BlockReg> blocks_;
    std::optional<Linear> mpn_embed_;
    std::vector<GcnConv> enc_, dec_;
    std::vector<Tensor> pool_p_;
    std::optional<Mlp> head_mlp_;
    std::optional<GcnConv> head_gcn_;
    std::optional<GatConv> head_gat_;
    std::optional<TconvConv> head_tconv_;
    std::optional<Linear> head_lin_;
};

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[] = "AFCP";
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout: magic, version, JSON metadata (model spec, optimizer config,
/// feature config, feature dims), then named parameter and buffer blocks as
/// little-endian 32-bit floats with shape prefixes, in store (name) order.
inline void save_checkpoint(const std::filesystem::path& path, const Model& model,
                            const OptimizerConfig& opt, const FeatureConfig& features) {
    json meta = {{"model_spec", model_spec_to_json(model.spec())},
                 {"optimizer", optimizer_config_to_json(opt)},
                 {"features", feature_config_to_json(features)},
                 {"node_dim", model.node_dim()},
                 {"edge_dim", model.edge_dim()}};
    std::string out;
    out.append(kCheckpointMagic, 4);
    iodetail::put_u32(out, kCheckpointVersion);
    const std::string blob = meta.dump();
    iodetail::put_u64(out, blob.size());
    out += blob;
    iodetail::put_u64(out, model.parameters().size());
    model.parameters().for_each([&](const std::string& name, const Tensor& t, bool) {
        iodetail::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        iodetail::put_u64(out, t.rows());
        iodetail::put_u64(out, t.cols());
        iodetail::put_matrix(out, t);
    });
    iodetail::write_file_atomic(path, out);
}

struct LoadedCheckpoint {
    Model model;
    OptimizerConfig optimizer;
    FeatureConfig features;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    const std::string data = iodetail::read_file(path);
    const std::string origin = path.string();
    iodetail::Reader r(data, origin);
    if (r.bytes(4) != std::string(kCheckpointMagic, 4))
        throw ParseError(origin + ": not a checkpoint file");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw ParseError(origin + ": unsupported checkpoint version " +
                         std::to_string(version));
    json meta;
    try {
        meta = json::parse(r.bytes(r.u64()));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(origin + ": bad metadata block: " + e.what());
    }
    schemadetail::require_keys(
        meta, {"model_spec", "optimizer", "features", "node_dim", "edge_dim"}, origin);
    const ModelSpec spec = model_spec_from_json(meta.at("model_spec"), origin + ": model_spec");
    const OptimizerConfig opt =
        optimizer_config_from_json(meta.at("optimizer"), origin + ": optimizer");
    const FeatureConfig features =
        feature_config_from_json(meta.at("features"), origin + ": features");
    const std::size_t node_dim =
        schemadetail::get_field<std::size_t>(meta, "node_dim", 0, origin);
    const std::size_t edge_dim =
        schemadetail::get_field<std::size_t>(meta, "edge_dim", 0, origin);
    LoadedCheckpoint loaded{Model(spec, node_dim, edge_dim), opt, features};
    const std::size_t blocks = r.u64();
    std::set<std::string> seen;
    for (std::size_t i = 0; i < blocks; ++i) {
        const std::string name = r.bytes(r.u32());
        const std::size_t rows = r.u64(), cols = r.u64();
        if (!loaded.model.parameters().contains(name))
            throw ParseError(origin + ": parameter block '" + name +
                             "' does not exist in the rebuilt model");
        Tensor& t = loaded.model.parameters().get(name);
        if (t.rows() != rows || t.cols() != cols)
            throw ParseError(origin + ": parameter block '" + name + "' has shape (" +
                             std::to_string(rows) + " x " + std::to_string(cols) +
                             "), expected (" + std::to_string(t.rows()) + " x " +
                             std::to_string(t.cols()) + ")");
        // Copy into the existing tensor: layer structs alias these handles.
        Tensor block = iodetail::read_matrix(r, rows, cols);
        std::copy(block.values().begin(), block.values().end(), t.values().begin());
        seen.insert(name);
    }
    if (seen.size() != loaded.model.parameters().size())
        throw ParseError(origin + ": checkpoint is missing parameter blocks");
    if (!r.done()) throw ParseError(origin + ": trailing bytes after parameter blocks");
    return loaded;
}

}  // namespace atomflex
