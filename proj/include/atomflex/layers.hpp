#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "atomflex/errors.hpp"
#include "atomflex/featurize.hpp"
#include "atomflex/optim.hpp"
#include "atomflex/rng.hpp"
#include "atomflex/tensor.hpp"

namespace atomflex {

enum class Activation { Relu, Tanh };

inline std::string activation_name(Activation a) {
    return a == Activation::Relu ? "relu" : "tanh";
}

inline Activation activation_from_name(const std::string& name) {
    if (name == "relu") return Activation::Relu;
    if (name == "tanh") return Activation::Tanh;
    throw ContractError("unknown activation '" + name + "' (expected relu or tanh)");
}

inline Tensor apply_activation(const Tensor& x, Activation a) {
    return a == Activation::Relu ? relu(x) : tanh(x);
}

/// Per-forward state: mode plus the dropout mask stream. Every dropout site
/// draws one seed from the stream, so a fixed (graph, seed) pair reproduces
/// the exact same masks regardless of how many sites a family has.
struct ForwardCtx {
    bool train = false;
    Rng drop{0};
};

inline Tensor maybe_dropout(const Tensor& x, Real rate, ForwardCtx& fc) {
    if (rate <= 0) return x;
    return dropout(x, rate, fc.train, fc.drop.next_u64());
}

/// y = x W (+ b). Weights are Glorot-initialized from a stream split off the
/// model seed by parameter name, so initialization does not depend on the
/// order in which layers are built. Biases start at zero.
struct Linear {
    Tensor w;  // in x out
    Tensor b;  // 1 x out when has_bias
    bool has_bias = false;

    static Linear create(ParameterStore& ps, const std::string& name, std::size_t in,
                         std::size_t out, Rng& model_rng, bool bias) {
        Linear l;
        Rng wr = model_rng.split(name + "/w");
        l.w = ps.create_glorot(name + "/w", in, out, wr);
        l.has_bias = bias;
        if (bias) l.b = ps.create(name + "/b", 1, out);
        return l;
    }

    Tensor operator()(const Tensor& x) const {
        Tensor y = matmul(x, w);
        return has_bias ? add(y, b) : y;
    }

    std::size_t in_dim() const { return w.rows(); }
    std::size_t out_dim() const { return w.cols(); }
};

/// Two linear layers with an activation (and optional dropout) in between.
/// `final_act` additionally activates the output, used where the result is a
/// message embedding rather than a regression value.
struct Mlp {
    Linear l1, l2;
    Activation act = Activation::Relu;
    Real drop = 0;
    bool final_act = false;

    static Mlp create(ParameterStore& ps, const std::string& name, std::size_t in,
                      std::size_t hidden, std::size_t out, Activation act, Real drop,
                      Rng& model_rng, bool bias = true, bool final_act = false) {
        Mlp m;
        m.l1 = Linear::create(ps, name + "/l1", in, hidden, model_rng, bias);
        m.l2 = Linear::create(ps, name + "/l2", hidden, out, model_rng, bias);
        m.act = act;
        m.drop = drop;
        m.final_act = final_act;
        return m;
    }

    Tensor apply(const Tensor& x, ForwardCtx& fc) const {
        Tensor h = apply_activation(l1(x), act);
        h = maybe_dropout(h, drop, fc);
        h = l2(h);
        return final_act ? apply_activation(h, act) : h;
    }
};

/// Batch normalization over the node dimension, composed from tensor
/// primitives. Training uses batch statistics and refreshes the running
/// buffers; eval uses the buffers only, so repeated eval passes are
/// deterministic.
struct BatchNorm {
    Tensor gamma, beta;                // 1 x C parameters
    Tensor running_mean, running_var;  // 1 x C buffers
    Real momentum = 0.1;
    Real eps = 1e-5;

    static BatchNorm create(ParameterStore& ps, const std::string& name, std::size_t c) {
        BatchNorm bn;
        bn.gamma = ps.create(name + "/gamma", 1, c);
        for (auto& v : bn.gamma.values()) v = 1;
        bn.beta = ps.create(name + "/beta", 1, c);
        bn.running_mean = ps.create_buffer(name + "/running_mean", 1, c);
        bn.running_var = ps.create_buffer(name + "/running_var", 1, c);
        for (auto& v : bn.running_var.values()) v = 1;
        return bn;
    }

    Tensor apply(const Tensor& x, bool train) {
        if (train) {
            const std::size_t n = x.rows();
            Tensor avg_row = Tensor::full(1, n, Real(1) / static_cast<Real>(n));
            Tensor mean = matmul(avg_row, x);                 // 1 x C
            Tensor diff = sub(x, mean);
            Tensor var = matmul(avg_row, mul(diff, diff));    // population variance
            Tensor xhat = mul(diff, rsqrt(affine(var, 1, eps)));
            for (std::size_t j = 0; j < x.cols(); ++j) {
                running_mean.values()[j] =
                    (1 - momentum) * running_mean.values()[j] + momentum * mean.values()[j];
                running_var.values()[j] =
                    (1 - momentum) * running_var.values()[j] + momentum * var.values()[j];
            }
            return add(mul(xhat, gamma), beta);
        }
        Tensor xhat = mul(sub(x, running_mean), rsqrt(affine(running_var, 1, eps)));
        return add(mul(xhat, gamma), beta);
    }
};

/// Post-convolution machinery shared by every family:
/// activation -> dropout -> batch norm -> residual add. The skip path is the
/// identity when widths match and a bias-free learned projection otherwise.
/// With zero conv weights the whole chain maps h=0 back to the block input.
struct BlockReg {
    Activation act = Activation::Relu;
    Real drop = 0;
    bool use_bn = false;
    bool use_residual = false;
    BatchNorm bn;
    Linear proj;
    bool has_proj = false;

    static BlockReg create(ParameterStore& ps, const std::string& name, std::size_t in,
                           std::size_t out, Activation act, Real drop, bool use_bn,
                           bool use_residual, Rng& model_rng) {
        BlockReg r;
        r.act = act;
        r.drop = drop;
        r.use_bn = use_bn;
        r.use_residual = use_residual;
        if (use_bn) r.bn = BatchNorm::create(ps, name + "/bn", out);
        if (use_residual && in != out) {
            r.proj = Linear::create(ps, name + "/proj", in, out, model_rng, false);
            r.has_proj = true;
        }
        return r;
    }

    Tensor finish(const Tensor& x_in, Tensor h, ForwardCtx& fc) {
        h = apply_activation(h, act);
        h = maybe_dropout(h, drop, fc);
        if (use_bn) h = bn.apply(h, fc.train);
        if (use_residual) h = add(h, has_proj ? proj(x_in) : x_in);
        return h;
    }
};

// ---------------------------------------------------------------------------
// Shared graph helpers
// ---------------------------------------------------------------------------

/// Edge weight from the bond length: 1 / (1 + d/scale), where the last edge
/// feature column already holds d/scale. Shorter bonds weigh more; the value
/// is positive and bounded by 1.
inline Tensor length_edge_weight(const Tensor& edge_features) {
    if (edge_features.rows() == 0) return Tensor(0, 1);
    Tensor d = slice_cols(edge_features, edge_features.cols() - 1, 1);
    return reciprocal(affine(d, 1, 1));
}

/// Appends one self-edge per node to a directed edge list.
inline void append_self_loops(std::vector<std::int32_t>& send, std::vector<std::int32_t>& recv,
                              std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        send.push_back(static_cast<std::int32_t>(i));
        recv.push_back(static_cast<std::int32_t>(i));
    }
}

/// Symmetrically normalized weighted aggregation. Per edge w->v the
/// coefficient is w_vw / sqrt(dhat_v dhat_w), with dhat the weighted in-degree
/// plus the unit self-loop weight when self-loops are on; the self
/// contribution is x_v / dhat_v. A zero-degree node without self-loops simply
/// aggregates to zero.
inline Tensor gcn_aggregate(const Tensor& x, const std::vector<std::int32_t>& send,
                            const std::vector<std::int32_t>& recv, const Tensor& edge_weight,
                            std::size_t n, bool self_loops) {
    Tensor deg = segment_sum(edge_weight, recv, n);
    deg = affine(deg, 1, self_loops ? Real(1) : Real(1e-12));
    Tensor inv = rsqrt(deg);
    Tensor agg;
    if (send.empty()) {
        agg = Tensor::zeros(n, x.cols());
    } else {
        Tensor coeff = mul(mul(edge_weight, gather_rows(inv, send)), gather_rows(inv, recv));
        agg = segment_sum(mul(gather_rows(x, send), coeff), recv, n);
    }
    if (self_loops) agg = add(agg, mul(x, reciprocal(deg)));
    return agg;
}

/// One graph-convolution layer: a single linear transform of the normalized
/// weighted aggregate.
struct GcnConv {
    Linear lin;
    bool self_loops = true;

    static GcnConv create(ParameterStore& ps, const std::string& name, std::size_t in,
                          std::size_t out, bool self_loops, bool bias, Rng& model_rng) {
        GcnConv c;
        c.lin = Linear::create(ps, name + "/lin", in, out, model_rng, bias);
        c.self_loops = self_loops;
        return c;
    }

    Tensor apply(const Tensor& x, const std::vector<std::int32_t>& send,
                 const std::vector<std::int32_t>& recv, const Tensor& edge_weight,
                 std::size_t n) const {
        return lin(gcn_aggregate(x, send, recv, edge_weight, n, self_loops));
    }
};

/// Attention layer. Per directed edge w->v the logit is
/// leaky_relu(a . [theta x_v || theta x_w || theta_e e_vw]), normalized by a
/// softmax over each receiver's in-edges; the output is the alpha-weighted sum
/// of transformed senders, heads concatenated. When self_loops is set a
/// zero-feature self edge joins the softmax, which realizes the self term.
struct GatConv {
    Linear theta;    // in -> heads * head_dim, no bias
    Linear theta_e;  // F  -> heads * head_dim, no bias
    Tensor a_dst, a_src, a_edge;  // 1 x heads * head_dim
    Tensor bias;                  // 1 x heads * head_dim
    bool has_bias = false;
    std::size_t heads = 1, head_dim = 0;
    bool self_loops = true;
    Real negative_slope = 0.2;

    static GatConv create(ParameterStore& ps, const std::string& name, std::size_t in,
                          std::size_t edge_dim, std::size_t heads, std::size_t head_dim,
                          bool self_loops, bool bias, Rng& model_rng) {
        GatConv c;
        const std::size_t width = heads * head_dim;
        c.theta = Linear::create(ps, name + "/theta", in, width, model_rng, false);
        c.theta_e = Linear::create(ps, name + "/theta_e", edge_dim, width, model_rng, false);
        Rng r1 = model_rng.split(name + "/a_dst"), r2 = model_rng.split(name + "/a_src"),
            r3 = model_rng.split(name + "/a_edge");
        c.a_dst = ps.create_glorot(name + "/a_dst", 1, width, r1);
        c.a_src = ps.create_glorot(name + "/a_src", 1, width, r2);
        c.a_edge = ps.create_glorot(name + "/a_edge", 1, width, r3);
        c.has_bias = bias;
        if (bias) c.bias = ps.create(name + "/bias", 1, width);
        c.heads = heads;
        c.head_dim = head_dim;
        c.self_loops = self_loops;
        return c;
    }

    /// alpha_out, when given, receives the per-edge attention columns
    /// (one column per head) over the possibly self-loop-extended edge list.
    Tensor apply(const Tensor& x, std::vector<std::int32_t> send,
                 std::vector<std::int32_t> recv, const Tensor& edge_feat, std::size_t n,
                 Tensor* alpha_out = nullptr) const {
        Tensor te = theta_e(edge_feat);  // M x width
        if (self_loops) {
            append_self_loops(send, recv, n);
            te = te.rows() == 0 ? Tensor::zeros(n, theta_e.out_dim())
                                : concat_rows(te, Tensor::zeros(n, te.cols()));
        }
        Tensor tx = theta(x);
        const std::size_t width = heads * head_dim;
        if (send.empty()) {
            Tensor out = Tensor::zeros(n, width);
            return has_bias ? add(out, bias) : out;
        }
        Tensor gx_src = gather_rows(tx, send);
        Tensor gx_dst = gather_rows(tx, recv);
        std::vector<Tensor> head_outs, alphas;
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * head_dim;
            auto head = [&](const Tensor& t) { return slice_cols(t, off, head_dim); };
            Tensor score = rowwise_sum(mul(head(gx_dst), head(a_dst)));
            score = add(score, rowwise_sum(mul(head(gx_src), head(a_src))));
            score = add(score, rowwise_sum(mul(head(te), head(a_edge))));
            Tensor alpha = segment_softmax(leaky_relu(score, negative_slope), recv, n);
            head_outs.push_back(segment_sum(mul(head(gx_src), alpha), recv, n));
            alphas.push_back(alpha);
        }
        Tensor out = heads == 1 ? head_outs[0] : concat_cols(head_outs);
        if (alpha_out) *alpha_out = heads == 1 ? alphas[0] : concat_cols(alphas);
        return has_bias ? add(out, bias) : out;
    }
};

/// Transformer-style attention layer. Keys are per node, queries per edge
/// (the edge feature enters the query through a learned projection), and the
/// logit is the scaled dot product Q.K / sqrt(d). Heads are averaged and the
/// update is a linear layer on [K || attended].
struct TconvConv {
    Linear phi_k, phi_q;  // in -> heads * head_dim
    Linear w_e;           // F -> heads * head_dim, no bias
    Linear update;        // 2 * head_dim -> out
    Linear beta_lin;      // 3 * head_dim -> 1 when use_beta
    bool use_beta = false;
    std::size_t heads = 1, head_dim = 0;
    bool self_loops = false;

    static TconvConv create(ParameterStore& ps, const std::string& name, std::size_t in,
                            std::size_t edge_dim, std::size_t out, std::size_t heads,
                            std::size_t head_dim, bool self_loops, bool bias, bool use_beta,
                            Rng& model_rng) {
        TconvConv c;
        const std::size_t width = heads * head_dim;
        c.phi_k = Linear::create(ps, name + "/phi_k", in, width, model_rng, bias);
        c.phi_q = Linear::create(ps, name + "/phi_q", in, width, model_rng, bias);
        c.w_e = Linear::create(ps, name + "/w_e", edge_dim, width, model_rng, false);
        c.update = Linear::create(ps, name + "/update", 2 * head_dim, out, model_rng, bias);
        c.use_beta = use_beta;
        if (use_beta) c.beta_lin = Linear::create(ps, name + "/beta", 3 * head_dim, 1,
                                                  model_rng, true);
        c.heads = heads;
        c.head_dim = head_dim;
        c.self_loops = self_loops;
        return c;
    }

    Tensor apply(const Tensor& x, std::vector<std::int32_t> send,
                 std::vector<std::int32_t> recv, const Tensor& edge_feat, std::size_t n,
                 Tensor* alpha_out = nullptr) const {
        Tensor qe = w_e(edge_feat);  // M x width
        if (self_loops) {
            append_self_loops(send, recv, n);
            qe = qe.rows() == 0 ? Tensor::zeros(n, w_e.out_dim())
                                : concat_rows(qe, Tensor::zeros(n, qe.cols()));
        }
        Tensor k = phi_k(x);
        auto head_mean = [&](const Tensor& t) {
            Tensor acc = slice_cols(t, 0, head_dim);
            for (std::size_t h = 1; h < heads; ++h)
                acc = add(acc, slice_cols(t, h * head_dim, head_dim));
            return heads == 1 ? acc : affine(acc, Real(1) / static_cast<Real>(heads), 0);
        };
        Tensor kbar = head_mean(k);
        Tensor abar;
        if (send.empty()) {
            abar = Tensor::zeros(n, head_dim);
        } else {
            Tensor q = add(gather_rows(phi_q(x), send), qe);  // per-edge query
            const Real scale = Real(1) / std::sqrt(static_cast<Real>(head_dim));
            std::vector<Tensor> attended, alphas;
            for (std::size_t h = 0; h < heads; ++h) {
                const std::size_t off = h * head_dim;
                Tensor kh = slice_cols(k, off, head_dim);
                Tensor qh = slice_cols(q, off, head_dim);
                Tensor score = affine(rowwise_sum(mul(qh, gather_rows(kh, recv))), scale, 0);
                Tensor alpha = segment_softmax(score, recv, n);
                attended.push_back(segment_sum(mul(qh, alpha), recv, n));
                alphas.push_back(alpha);
            }
            abar = attended[0];
            for (std::size_t h = 1; h < heads; ++h) abar = add(abar, attended[h]);
            if (heads > 1) abar = affine(abar, Real(1) / static_cast<Real>(heads), 0);
            if (alpha_out) *alpha_out = heads == 1 ? alphas[0] : concat_cols(alphas);
        }
        if (use_beta) {
            Tensor g = sigmoid(beta_lin(concat_cols(kbar, abar, sub(kbar, abar))));
            abar = add(mul(abar, g), mul(kbar, affine(g, -1, 1)));
        }
        return update(concat_cols(kbar, abar));
    }
};

/// Message-passing layer: per edge w->v the message is a linear map of
/// [x_v || x_w || e_vw]; messages sum per receiver and the update is an MLP
/// on [x || m]. There is no readout; every node keeps its own row.
struct MpnConv {
    Linear msg;
    Mlp update;

    static MpnConv create(ParameterStore& ps, const std::string& name, std::size_t dim,
                          std::size_t edge_dim, Activation act, bool bias, Rng& model_rng) {
        MpnConv c;
        c.msg = Linear::create(ps, name + "/msg", 2 * dim + edge_dim, dim, model_rng, bias);
        c.update = Mlp::create(ps, name + "/update", 2 * dim, 2 * dim, dim, act, 0, model_rng,
                               bias);
        return c;
    }

    Tensor apply(const Tensor& x, const std::vector<std::int32_t>& send,
                 const std::vector<std::int32_t>& recv, const Tensor& edge_feat, std::size_t n,
                 ForwardCtx& fc) const {
        Tensor m;
        if (send.empty()) {
            m = Tensor::zeros(n, msg.out_dim());
        } else {
            Tensor inputs = concat_cols(gather_rows(x, recv), gather_rows(x, send), edge_feat);
            m = segment_sum(msg(inputs), recv, n);
        }
        return update.apply(concat_cols(x, m), fc);
    }
};

/// Row standardization without parameters: zero mean, unit variance per node.
inline Tensor standardize_rows(const Tensor& x) {
    const Real c = static_cast<Real>(x.cols());
    Tensor mean = affine(rowwise_sum(x), 1 / c, 0);
    Tensor diff = sub(x, mean);
    Tensor var = affine(rowwise_sumsq(diff), 1 / c, 0);
    return mul(diff, rsqrt(affine(var, 1, Real(1e-5))));
}

/// Equivariant layer: messages take both endpoint features, the squared
/// distance and the edge features; the coordinate update moves each node
/// along relative vectors weighted by a clamped scalar network, scaled by
/// 1/(in_degree + 1). Node features update through an MLP only when
/// update_nodes is set.
struct EgnnConv {
    Mlp phi_a;  // 2*dim + 1 + F -> hidden -> hidden, output activated
    Mlp phi_p;  // hidden -> coord_mlp_dim -> 1
    Mlp phi_u;  // dim + hidden -> hidden -> dim, when update_nodes
    Tensor coord_scale;  // 1x1, when norm_coords
    Real clamp_val = 1;
    bool update_nodes = false, norm_coords = false, norm_nodes = false;
    bool use_edge_weights = false;

    static EgnnConv create(ParameterStore& ps, const std::string& name, std::size_t dim,
                           std::size_t edge_dim, std::size_t hidden, std::size_t coord_mlp_dim,
                           Activation act, Real drop, Real clamp_val, bool update_nodes,
                           bool norm_coords, Real coords_scale, bool norm_nodes,
                           bool use_edge_weights, Rng& model_rng) {
        EgnnConv c;
        c.phi_a = Mlp::create(ps, name + "/phi_a", 2 * dim + 1 + edge_dim, hidden, hidden, act,
                              drop, model_rng, true, true);
        c.phi_p = Mlp::create(ps, name + "/phi_p", hidden, coord_mlp_dim, 1, act, 0, model_rng,
                              true);
        if (update_nodes)
            c.phi_u = Mlp::create(ps, name + "/phi_u", dim + hidden, hidden, dim, act, drop,
                                  model_rng, true);
        if (norm_coords) {
            c.coord_scale = ps.create(name + "/coord_scale", 1, 1);
            c.coord_scale.values()[0] = coords_scale;
        }
        c.clamp_val = clamp_val;
        c.update_nodes = update_nodes;
        c.norm_coords = norm_coords;
        c.norm_nodes = norm_nodes;
        c.use_edge_weights = use_edge_weights;
        return c;
    }

    std::pair<Tensor, Tensor> apply(const Tensor& x, const Tensor& coords,
                                    const std::vector<std::int32_t>& send,
                                    const std::vector<std::int32_t>& recv,
                                    const Tensor& edge_feat, const Tensor* edge_weight,
                                    std::size_t n, ForwardCtx& fc) const {
        if (send.empty()) return {x, coords};
        Tensor xs = norm_nodes ? standardize_rows(x) : x;
        Tensor rel = sub(gather_rows(coords, recv), gather_rows(coords, send));
        Tensor dist2 = rowwise_sumsq(rel);
        Tensor m = phi_a.apply(
            concat_cols({gather_rows(xs, recv), gather_rows(xs, send), dist2, edge_feat}), fc);
        if (use_edge_weights && edge_weight) m = mul(m, *edge_weight);
        Tensor gamma = clamp(phi_p.apply(m, fc), -clamp_val, clamp_val);
        Tensor dir = rel;
        if (norm_coords)
            dir = mul(mul(rel, rsqrt(affine(rowwise_sumsq(rel), 1, Real(1e-8)))), coord_scale);
        std::vector<Real> inv_deg(n, 0);
        for (std::int32_t r : recv) inv_deg[static_cast<std::size_t>(r)] += 1;
        for (auto& v : inv_deg) v = 1 / (v + 1);
        Tensor shift = mul(segment_sum(mul(dir, gamma), recv, n),
                           Tensor::from(inv_deg, n, 1));
        Tensor coords_out = add(coords, shift);
        Tensor x_out = x;
        if (update_nodes)
            x_out = phi_u.apply(concat_cols(x, segment_sum(m, recv, n)), fc);
        return {x_out, coords_out};
    }
};

/// Full graph-network block: edges update first from [e || x_src || x_dst],
/// then each node aggregates its in-edge embeddings by mean and updates via
/// either an MLP on the concatenation or a GAT-style attention over the
/// updated edges (with a zero-embedding self edge so x_v always participates).
/// Both node and edge embeddings flow to the next block.
struct MetaBlock {
    Mlp phi_e;  // e_in + 2*x_in -> hidden -> hidden
    bool gat_update = true;
    Mlp phi_v;                    // hidden + x_in -> hidden -> hidden (MLP variant)
    Linear theta, theta_e;        // GAT variant, no bias
    Tensor a_dst, a_src, a_edge;  // 1 x hidden
    Tensor vbias;                 // 1 x hidden
    bool has_vbias = false;
    Real negative_slope = 0.2;

    static MetaBlock create(ParameterStore& ps, const std::string& name, std::size_t x_in,
                            std::size_t e_in, std::size_t hidden, Activation act, Real drop,
                            bool gat_update, bool bias, Rng& model_rng) {
        MetaBlock b;
        b.phi_e = Mlp::create(ps, name + "/phi_e", e_in + 2 * x_in, hidden, hidden, act, drop,
                              model_rng, true);
        b.gat_update = gat_update;
        if (gat_update) {
            b.theta = Linear::create(ps, name + "/theta", x_in, hidden, model_rng, false);
            b.theta_e = Linear::create(ps, name + "/theta_e", hidden, hidden, model_rng, false);
            Rng r1 = model_rng.split(name + "/a_dst"), r2 = model_rng.split(name + "/a_src"),
                r3 = model_rng.split(name + "/a_edge");
            b.a_dst = ps.create_glorot(name + "/a_dst", 1, hidden, r1);
            b.a_src = ps.create_glorot(name + "/a_src", 1, hidden, r2);
            b.a_edge = ps.create_glorot(name + "/a_edge", 1, hidden, r3);
            if (bias) {
                b.vbias = ps.create(name + "/vbias", 1, hidden);
                b.has_vbias = true;
            }
        } else {
            b.phi_v = Mlp::create(ps, name + "/phi_v", hidden + x_in, hidden, hidden, act, drop,
                                  model_rng, true);
        }
        return b;
    }

    std::pair<Tensor, Tensor> apply(const Tensor& x, const Tensor& edge_emb,
                                    const std::vector<std::int32_t>& send,
                                    const std::vector<std::int32_t>& recv, std::size_t n,
                                    ForwardCtx& fc, Tensor* alpha_out = nullptr) const {
        const std::size_t hidden = phi_e.l2.out_dim();
        Tensor ep;
        if (send.empty())
            ep = Tensor(0, hidden);
        else
            ep = phi_e.apply(
                concat_cols(edge_emb, gather_rows(x, send), gather_rows(x, recv)), fc);
        Tensor x_out;
        if (gat_update) {
            std::vector<std::int32_t> esend = send, erecv = recv;
            append_self_loops(esend, erecv, n);
            Tensor ee = send.empty() ? Tensor::zeros(n, hidden)
                                     : concat_rows(ep, Tensor::zeros(n, hidden));
            Tensor tx = theta(x);
            Tensor score = rowwise_sum(mul(gather_rows(tx, erecv), a_dst));
            score = add(score, rowwise_sum(mul(gather_rows(tx, esend), a_src)));
            score = add(score, rowwise_sum(mul(theta_e(ee), a_edge)));
            Tensor alpha = segment_softmax(leaky_relu(score, negative_slope), erecv, n);
            x_out = segment_sum(mul(gather_rows(tx, esend), alpha), erecv, n);
            if (has_vbias) x_out = add(x_out, vbias);
            if (alpha_out) *alpha_out = alpha;
        } else {
            Tensor ehat = send.empty() ? Tensor::zeros(n, hidden)
                                       : segment_mean(ep, recv, n);
            x_out = phi_v.apply(concat_cols(ehat, x), fc);
        }
        return {x_out, ep};
    }
};

/// Top-k pooling: scores are the projection of node features onto a learned
/// direction (normalized), the ceil(ratio * N) best-scoring nodes survive
/// (ties broken toward the lower index), and kept features are gated by
/// tanh(score). Returns the kept original indices in ascending order.
struct PoolResult {
    std::vector<std::int32_t> kept;
    Tensor gated;  // kept x C
};

inline PoolResult topk_pool(const Tensor& x, const Tensor& p, Real ratio) {
    const std::size_t n = x.rows();
    if (n == 0) throw ContractError("topk_pool: empty graph");
    const std::size_t k = static_cast<std::size_t>(
        std::ceil(ratio * static_cast<Real>(n)));
    if (k == 0) throw ContractError("topk_pool: ratio " + std::to_string(ratio) +
                                    " pools every node away");
    Tensor norm2 = sum_all(mul(p, p));
    Tensor y = mul(matmul(x, p), rsqrt(affine(norm2, 1, Real(1e-24))));  // N x 1
    std::vector<std::int32_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::int32_t a, std::int32_t b) {
        return y.values()[static_cast<std::size_t>(a)] >
               y.values()[static_cast<std::size_t>(b)];
    });
    order.resize(std::min(k, n));
    std::sort(order.begin(), order.end());
    PoolResult res;
    res.kept = order;
    res.gated = mul(gather_rows(x, res.kept), tanh(gather_rows(y, res.kept)));
    return res;
}

/// Restriction of an edge list to kept nodes, with indices remapped.
struct InducedEdges {
    std::vector<std::int32_t> send, recv;
    std::vector<std::int32_t> edge_rows;  // surviving rows of the edge tensors
};

inline InducedEdges induce_edges(const std::vector<std::int32_t>& send,
                                 const std::vector<std::int32_t>& recv,
                                 const std::vector<std::int32_t>& kept, std::size_t n) {
    std::vector<std::int32_t> remap(n, -1);
    for (std::size_t i = 0; i < kept.size(); ++i)
        remap[static_cast<std::size_t>(kept[i])] = static_cast<std::int32_t>(i);
    InducedEdges out;
    for (std::size_t e = 0; e < send.size(); ++e) {
        const std::int32_t s = remap[static_cast<std::size_t>(send[e])];
        const std::int32_t r = remap[static_cast<std::size_t>(recv[e])];
        if (s >= 0 && r >= 0) {
            out.send.push_back(s);
            out.recv.push_back(r);
            out.edge_rows.push_back(static_cast<std::int32_t>(e));
        }
    }
    return out;
}

}  // namespace atomflex
