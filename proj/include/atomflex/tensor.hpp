#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "atomflex/errors.hpp"
#include "atomflex/rng.hpp"

namespace atomflex {

// Scalar type of the whole stack. The verification profile (default) is
// 64-bit; defining ATOMFLEX_REAL_FLOAT selects the 32-bit training profile.
// Gradient-check tolerances are only claimed for the 64-bit profile.
#ifdef ATOMFLEX_REAL_FLOAT
using Real = float;
#else
using Real = double;
#endif

/// Global toggle for the post-op finite check. On by default; a NaN or Inf
/// produced by any forward op raises ContractError immediately instead of
/// propagating.
inline bool& finite_checks_enabled() {
    static bool enabled = true;
    return enabled;
}

struct TensorImpl {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<Real> values;
    std::vector<Real> grad;  // allocated on demand, same length as values
    bool requires_grad = false;

    // Set when this tensor was produced by an op and gradient flow is needed.
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(const TensorImpl&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), Real(0));
    }
};

// A dense 2-D tensor participating in a dynamically recorded reverse-mode
// differentiation graph. Tensor is a cheap shared handle: copies alias the
// same storage and graph node. Scalars are 1x1.
class Tensor {
public:
    Tensor() : impl_(std::make_shared<TensorImpl>()) {}

    Tensor(std::size_t rows, std::size_t cols, bool requires_grad = false)
        : impl_(std::make_shared<TensorImpl>()) {
        impl_->rows = rows;
        impl_->cols = cols;
        impl_->values.assign(rows * cols, Real(0));
        impl_->requires_grad = requires_grad;
    }

    static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor(rows, cols); }

    static Tensor full(std::size_t rows, std::size_t cols, Real v) {
        Tensor t(rows, cols);
        std::fill(t.values().begin(), t.values().end(), v);
        return t;
    }

    static Tensor scalar(Real v) { return full(1, 1, v); }

    static Tensor from(std::vector<Real> data, std::size_t rows, std::size_t cols) {
        if (data.size() != rows * cols)
            throw ContractError("Tensor::from: data length " + std::to_string(data.size()) +
                                " does not match shape (" + std::to_string(rows) + " x " +
                                std::to_string(cols) + ")");
        Tensor t;
        t.impl_->rows = rows;
        t.impl_->cols = cols;
        t.impl_->values = std::move(data);
        return t;
    }

    /// Row-major literal, mainly for tests: Tensor::of({{1, 2}, {3, 4}}).
    static Tensor of(std::initializer_list<std::initializer_list<Real>> rows_init) {
        std::size_t r = rows_init.size();
        std::size_t c = r == 0 ? 0 : rows_init.begin()->size();
        Tensor t(r, c);
        std::size_t i = 0;
        for (const auto& row : rows_init) {
            if (row.size() != c) throw ContractError("Tensor::of: ragged rows");
            for (Real v : row) t.values()[i++] = v;
        }
        return t;
    }

    std::size_t rows() const { return impl_->rows; }
    std::size_t cols() const { return impl_->cols; }
    std::size_t numel() const { return impl_->values.size(); }

    Real& at(std::size_t i, std::size_t j) { return impl_->values[i * impl_->cols + j]; }
    Real at(std::size_t i, std::size_t j) const { return impl_->values[i * impl_->cols + j]; }

    std::vector<Real>& values() { return impl_->values; }
    const std::vector<Real>& values() const { return impl_->values; }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        impl_->requires_grad = v;
        return *this;
    }

    bool has_grad() const { return impl_->grad.size() == impl_->values.size(); }

    const std::vector<Real>& grad() const {
        if (!has_grad()) throw ContractError("Tensor: gradient not populated");
        return impl_->grad;
    }

    std::vector<Real>& grad_mut() {
        impl_->ensure_grad();
        return impl_->grad;
    }

    void zero_grad() { impl_->grad.clear(); }

    /// Reverse-mode sweep from a scalar. Gradients accumulate into every
    /// requires_grad ancestor exactly once; tensors feeding several consumers
    /// receive the sum of all contributions.
    void backward() const {
        if (rows() != 1 || cols() != 1)
            throw ContractError("backward: tensor is (" + std::to_string(rows()) + " x " +
                                std::to_string(cols()) + "), expected a 1 x 1 scalar");
        // Iterative DFS topological order over parents.
        std::vector<TensorImpl*> order;
        std::unordered_set<TensorImpl*> visited;
        struct Frame {
            TensorImpl* node;
            std::size_t next_parent;
        };
        std::vector<Frame> stack{{impl_.get(), 0}};
        visited.insert(impl_.get());
        while (!stack.empty()) {
            Frame& f = stack.back();
            if (f.next_parent < f.node->parents.size()) {
                TensorImpl* p = f.node->parents[f.next_parent++].get();
                if (visited.insert(p).second) stack.push_back({p, 0});
            } else {
                order.push_back(f.node);
                stack.pop_back();
            }
        }
        impl_->ensure_grad();
        impl_->grad[0] = Real(1);
        // order is producers-first; walk consumers-first.
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            TensorImpl* node = *it;
            if (node->backward_fn && node->grad.size() == node->values.size())
                node->backward_fn(*node);
        }
    }

    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

private:
    std::shared_ptr<TensorImpl> impl_;
};

namespace detail {

inline std::string shape_str(const Tensor& t) {
    return "(" + std::to_string(t.rows()) + " x " + std::to_string(t.cols()) + ")";
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ContractError(msg);
}

inline void check_finite(const Tensor& t, const char* op) {
    if (!finite_checks_enabled()) return;
    for (Real v : t.values())
        if (!std::isfinite(v))
            throw ContractError(std::string("non-finite value produced by op '") + op + "'");
}

inline bool needs_graph(std::initializer_list<const Tensor*> inputs) {
    for (const Tensor* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

/// Wires the output node into the graph when any input needs gradients.
inline void attach(Tensor& out, std::initializer_list<const Tensor*> inputs,
                   std::function<void(const TensorImpl&)> backward, const char* op) {
    check_finite(out, op);
    if (!needs_graph(inputs)) return;
    out.impl()->requires_grad = true;
    for (const Tensor* t : inputs) out.impl()->parents.push_back(t->impl());
    out.impl()->backward_fn = std::move(backward);
}

enum class Broadcast { None, Row, Col, Scalar };

inline Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::None;
    if (b.rows() == 1 && b.cols() == 1) return Broadcast::Scalar;
    if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::Row;
    if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::Col;
    throw ContractError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                        " are not compatible");
}

// Reduce an a-shaped gradient into b's (possibly broadcast) shape.
inline void reduce_into(std::vector<Real>& db, const std::vector<Real>& g, std::size_t rows,
                        std::size_t cols, Broadcast kind, const std::vector<Real>* factor) {
    auto f = [&](std::size_t idx) { return factor ? (*factor)[idx] : Real(1); };
    switch (kind) {
        case Broadcast::None:
            for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * f(i);
            break;
        case Broadcast::Scalar:
            for (std::size_t i = 0; i < g.size(); ++i) db[0] += g[i] * f(i);
            break;
        case Broadcast::Row:
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j) db[j] += g[i * cols + j] * f(i * cols + j);
            break;
        case Broadcast::Col:
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j) db[i] += g[i * cols + j] * f(i * cols + j);
            break;
    }
}

inline Real broadcast_at(const Tensor& b, std::size_t i, std::size_t j, Broadcast kind) {
    switch (kind) {
        case Broadcast::None: return b.at(i, j);
        case Broadcast::Scalar: return b.values()[0];
        case Broadcast::Row: return b.at(0, j);
        case Broadcast::Col: return b.at(i, 0);
    }
    return Real(0);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Core ops. Every op records its backward rule; backward() on a scalar loss
// accumulates gradients into every requires_grad ancestor.
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require(a.cols() == b.rows(), "matmul: inner dimensions of " + detail::shape_str(a) +
                                              " and " + detail::shape_str(b) + " do not match");
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    Tensor out(n, m);
    const Real* av = a.values().data();
    const Real* bv = b.values().data();
    Real* ov = out.values().data();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const Real aip = av[i * k + p];
            if (aip == Real(0)) continue;
            const Real* brow = bv + p * m;
            Real* orow = ov + i * m;
            for (std::size_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
        }
    }
    auto ai = a.impl(), bi = b.impl();
    detail::attach(
        out, {&a, &b},
        [ai, bi, n, k, m](const TensorImpl& o) {
            const Real* g = o.grad.data();
            if (ai->requires_grad) {
                ai->ensure_grad();
                Real* da = ai->grad.data();
                const Real* bv = bi->values.data();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < m; ++j) {
                        const Real gij = g[i * m + j];
                        if (gij == Real(0)) continue;
                        for (std::size_t p = 0; p < k; ++p) da[i * k + p] += gij * bv[p * m + j];
                    }
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                Real* db = bi->grad.data();
                const Real* av = ai->values.data();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const Real aip = av[i * k + p];
                        if (aip == Real(0)) continue;
                        for (std::size_t j = 0; j < m; ++j)
                            db[p * m + j] += aip * g[i * m + j];
                    }
            }
        },
        "matmul");
    return out;
}

namespace detail {

template <typename Fwd>
Tensor binary_broadcast(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, bool is_mul,
                        bool negate_b) {
    const Broadcast kind = broadcast_kind(a, b, op);
    Tensor out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j)
            out.at(i, j) = fwd(a.at(i, j), broadcast_at(b, i, j, kind));
    auto ai = a.impl(), bi = b.impl();
    const bool sub = negate_b;
    attach(
        out, {&a, &b},
        [ai, bi, kind, is_mul, sub](const TensorImpl& o) {
            const std::size_t rows = o.rows, cols = o.cols;
            if (ai->requires_grad) {
                ai->ensure_grad();
                for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < cols; ++j) {
                        Real g = o.grad[i * cols + j];
                        if (is_mul) {
                            std::size_t bidx =
                                kind == Broadcast::None   ? i * cols + j
                                : kind == Broadcast::Row  ? j
                                : kind == Broadcast::Col  ? i
                                                          : 0;
                            g *= bi->values[bidx];
                        }
                        ai->grad[i * cols + j] += g;
                    }
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                if (is_mul) {
                    reduce_into(bi->grad, o.grad, rows, cols, kind, &ai->values);
                } else if (sub) {
                    std::vector<Real> neg(o.grad.size());
                    for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -o.grad[i];
                    reduce_into(bi->grad, neg, rows, cols, kind, nullptr);
                } else {
                    reduce_into(bi->grad, o.grad, rows, cols, kind, nullptr);
                }
            }
        },
        op);
    return out;
}

}  // namespace detail

/// a + b; b may be 1x1, a row (1 x cols) or a column (rows x 1).
inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary_broadcast(
        a, b, "add", [](Real x, Real y) { return x + y; }, false, false);
}

/// a - b with the same broadcasting as add.
inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary_broadcast(
        a, b, "sub", [](Real x, Real y) { return x - y; }, false, true);
}

/// Elementwise product with the same broadcasting as add.
inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary_broadcast(
        a, b, "mul", [](Real x, Real y) { return x * y; }, true, false);
}

/// alpha * x + beta with scalar constants.
inline Tensor affine(const Tensor& x, Real alpha, Real beta) {
    Tensor out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.numel(); ++i) out.values()[i] = alpha * x.values()[i] + beta;
    auto xi = x.impl();
    detail::attach(
        out, {&x},
        [xi, alpha](const TensorImpl& o) {
            xi->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) xi->grad[i] += alpha * o.grad[i];
        },
        "affine");
    return out;
}

inline Tensor neg(const Tensor& x) { return affine(x, Real(-1), Real(0)); }

namespace detail {

template <typename F, typename DF>
Tensor unary(const Tensor& x, const char* op, F f, DF df) {
    Tensor out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.numel(); ++i) out.values()[i] = f(x.values()[i]);
    auto xi = x.impl();
    attach(
        out, {&x},
        [xi, df](const TensorImpl& o) {
            xi->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i)
                xi->grad[i] += o.grad[i] * df(xi->values[i], o.values[i]);
        },
        op);
    return out;
}

}  // namespace detail

inline Tensor relu(const Tensor& x) {
    return detail::unary(
        x, "relu", [](Real v) { return v > Real(0) ? v : Real(0); },
        [](Real v, Real) { return v > Real(0) ? Real(1) : Real(0); });
}

inline Tensor leaky_relu(const Tensor& x, Real slope = Real(0.2)) {
    return detail::unary(
        x, "leaky_relu", [slope](Real v) { return v > Real(0) ? v : slope * v; },
        [slope](Real v, Real) { return v > Real(0) ? Real(1) : slope; });
}

inline Tensor tanh(const Tensor& x) {
    return detail::unary(
        x, "tanh", [](Real v) { return std::tanh(v); },
        [](Real, Real y) { return Real(1) - y * y; });
}

inline Tensor sigmoid(const Tensor& x) {
    return detail::unary(
        x, "sigmoid",
        [](Real v) { return Real(1) / (Real(1) + std::exp(-v)); },
        [](Real, Real y) { return y * (Real(1) - y); });
}

inline Tensor log(const Tensor& x) {
    return detail::unary(
        x, "log", [](Real v) { return std::log(v); },
        [](Real v, Real) { return Real(1) / v; });
}

inline Tensor sqrt(const Tensor& x) {
    return detail::unary(
        x, "sqrt", [](Real v) { return std::sqrt(v); },
        [](Real, Real y) { return Real(1) / (Real(2) * y); });
}

inline Tensor rsqrt(const Tensor& x) {
    return detail::unary(
        x, "rsqrt", [](Real v) { return Real(1) / std::sqrt(v); },
        [](Real v, Real y) { return Real(-0.5) * y / v; });
}

inline Tensor reciprocal(const Tensor& x) {
    return detail::unary(
        x, "reciprocal", [](Real v) { return Real(1) / v; },
        [](Real, Real y) { return -y * y; });
}

/// Clamp to [lo, hi]; gradient passes only through the strict interior.
inline Tensor clamp(const Tensor& x, Real lo, Real hi) {
    return detail::unary(
        x, "clamp",
        [lo, hi](Real v) { return std::min(hi, std::max(lo, v)); },
        [lo, hi](Real v, Real) { return (v > lo && v < hi) ? Real(1) : Real(0); });
}

/// Column-wise concatenation. All inputs must share the row count.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    detail::require(!parts.empty(), "concat_cols: no inputs");
    const std::size_t rows = parts.front().rows();
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        detail::require(p.rows() == rows, "concat_cols: row counts differ (" +
                                              std::to_string(rows) + " vs " +
                                              std::to_string(p.rows()) + ")");
        total += p.cols();
    }
    Tensor out(rows, total);
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        for (std::size_t i = 0; i < rows; ++i)
            std::copy(p.values().begin() + i * p.cols(), p.values().begin() + (i + 1) * p.cols(),
                      out.values().begin() + i * total + off);
        off += p.cols();
    }
    bool any = false;
    for (const Tensor& p : parts) any = any || p.requires_grad();
    if (any) {
        out.impl()->requires_grad = true;
        std::vector<std::shared_ptr<TensorImpl>> impls;
        for (const Tensor& p : parts) {
            out.impl()->parents.push_back(p.impl());
            impls.push_back(p.impl());
        }
        out.impl()->backward_fn = [impls, rows, total](const TensorImpl& o) {
            std::size_t off = 0;
            for (const auto& pi : impls) {
                const std::size_t c = pi->cols;
                if (pi->requires_grad) {
                    pi->ensure_grad();
                    for (std::size_t i = 0; i < rows; ++i)
                        for (std::size_t j = 0; j < c; ++j)
                            pi->grad[i * c + j] += o.grad[i * total + off + j];
                }
                off += c;
            }
        };
    }
    detail::check_finite(out, "concat_cols");
    return out;
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
    return concat_cols(std::vector<Tensor>{a, b});
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b, const Tensor& c) {
    return concat_cols(std::vector<Tensor>{a, b, c});
}

/// Row-wise concatenation. All inputs must share the column count.
inline Tensor concat_rows(const Tensor& a, const Tensor& b) {
    detail::require(a.cols() == b.cols(), "concat_rows: column counts differ (" +
                                              detail::shape_str(a) + " vs " +
                                              detail::shape_str(b) + ")");
    Tensor out(a.rows() + b.rows(), a.cols());
    std::copy(a.values().begin(), a.values().end(), out.values().begin());
    std::copy(b.values().begin(), b.values().end(), out.values().begin() + a.numel());
    auto ai = a.impl(), bi = b.impl();
    detail::attach(
        out, {&a, &b},
        [ai, bi](const TensorImpl& o) {
            if (ai->requires_grad) {
                ai->ensure_grad();
                for (std::size_t i = 0; i < ai->values.size(); ++i) ai->grad[i] += o.grad[i];
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                const std::size_t off = ai->values.size();
                for (std::size_t i = 0; i < bi->values.size(); ++i)
                    bi->grad[i] += o.grad[off + i];
            }
        },
        "concat_rows");
    return out;
}

/// Places row t of x at row index[t] of an out_rows-tall zero matrix.
/// Duplicate targets accumulate. The unpooling primitive (zero-fill).
inline Tensor scatter_rows(const Tensor& x, const std::vector<std::int32_t>& index,
                           std::size_t out_rows) {
    detail::require(index.size() == x.rows(), "scatter_rows: index length " +
                                                  std::to_string(index.size()) +
                                                  " does not match rows of " +
                                                  detail::shape_str(x));
    const std::size_t c = x.cols();
    for (std::int32_t id : index)
        detail::require(id >= 0 && static_cast<std::size_t>(id) < out_rows,
                        "scatter_rows: index " + std::to_string(id) + " out of range [0, " +
                            std::to_string(out_rows) + ")");
    Tensor out(out_rows, c);
    for (std::size_t t = 0; t < index.size(); ++t)
        for (std::size_t j = 0; j < c; ++j) out.at(index[t], j) += x.at(t, j);
    auto xi = x.impl();
    detail::attach(
        out, {&x},
        [xi, index, c](const TensorImpl& o) {
            xi->ensure_grad();
            for (std::size_t t = 0; t < index.size(); ++t)
                for (std::size_t j = 0; j < c; ++j)
                    xi->grad[t * c + j] += o.grad[static_cast<std::size_t>(index[t]) * c + j];
        },
        "scatter_rows");
    return out;
}

/// Columns [begin, begin + len) of x.
inline Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t len) {
    detail::require(begin + len <= x.cols(), "slice_cols: range [" + std::to_string(begin) +
                                                 ", " + std::to_string(begin + len) +
                                                 ") exceeds " + detail::shape_str(x));
    Tensor out(x.rows(), len);
    for (std::size_t i = 0; i < x.rows(); ++i)
        std::copy(x.values().begin() + i * x.cols() + begin,
                  x.values().begin() + i * x.cols() + begin + len,
                  out.values().begin() + i * len);
    auto xi = x.impl();
    detail::attach(
        out, {&x},
        [xi, begin, len](const TensorImpl& o) {
            xi->ensure_grad();
            const std::size_t c = xi->cols;
            for (std::size_t i = 0; i < o.rows; ++i)
                for (std::size_t j = 0; j < len; ++j)
                    xi->grad[i * c + begin + j] += o.grad[i * len + j];
        },
        "slice_cols");
    return out;
}

/// out[t, :] = x[index[t], :]. Backward scatter-adds into the source rows.
inline Tensor gather_rows(const Tensor& x, const std::vector<std::int32_t>& index) {
    const std::size_t c = x.cols();
    for (std::int32_t id : index)
        detail::require(id >= 0 && static_cast<std::size_t>(id) < x.rows(),
                        "gather_rows: index " + std::to_string(id) + " out of range for " +
                            detail::shape_str(x));
    Tensor out(index.size(), c);
    for (std::size_t t = 0; t < index.size(); ++t)
        std::copy(x.values().begin() + index[t] * c, x.values().begin() + (index[t] + 1) * c,
                  out.values().begin() + t * c);
    auto xi = x.impl();
    detail::attach(
        out, {&x},
        [xi, index, c](const TensorImpl& o) {
            xi->ensure_grad();
            for (std::size_t t = 0; t < index.size(); ++t)
                for (std::size_t j = 0; j < c; ++j)
                    xi->grad[index[t] * c + j] += o.grad[t * c + j];
        },
        "gather_rows");
    return out;
}

inline Tensor rowwise_sum(const Tensor& x) {
    Tensor out(x.rows(), 1);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        Real s = 0;
        for (std::size_t j = 0; j < x.cols(); ++j) s += x.at(i, j);
        out.at(i, 0) = s;
    }
    auto xi = x.impl();
    detail::attach(
        out, {&x},
        [xi](const TensorImpl& o) {
            xi->ensure_grad();
            const std::size_t c = xi->cols;
            for (std::size_t i = 0; i < o.rows; ++i)
                for (std::size_t j = 0; j < c; ++j) xi->grad[i * c + j] += o.grad[i];
        },
        "rowwise_sum");
    return out;
}

inline Tensor rowwise_sumsq(const Tensor& x) {
    Tensor out(x.rows(), 1);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        Real s = 0;
        for (std::size_t j = 0; j < x.cols(); ++j) s += x.at(i, j) * x.at(i, j);
        out.at(i, 0) = s;
    }
    auto xi = x.impl();
    detail::attach(
        out, {&x},
        [xi](const TensorImpl& o) {
            xi->ensure_grad();
            const std::size_t c = xi->cols;
            for (std::size_t i = 0; i < o.rows; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    xi->grad[i * c + j] += Real(2) * xi->values[i * c + j] * o.grad[i];
        },
        "rowwise_sumsq");
    return out;
}

/// Row-wise Euclidean norm. The gradient of a zero row is defined as zero.
inline Tensor rowwise_norm(const Tensor& x) {
    Tensor out(x.rows(), 1);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        Real s = 0;
        for (std::size_t j = 0; j < x.cols(); ++j) s += x.at(i, j) * x.at(i, j);
        out.at(i, 0) = std::sqrt(s);
    }
    auto xi = x.impl();
    detail::attach(
        out, {&x},
        [xi](const TensorImpl& o) {
            xi->ensure_grad();
            const std::size_t c = xi->cols;
            for (std::size_t i = 0; i < o.rows; ++i) {
                const Real n = o.values[i];
                if (n == Real(0)) continue;
                for (std::size_t j = 0; j < c; ++j)
                    xi->grad[i * c + j] += o.grad[i] * xi->values[i * c + j] / n;
            }
        },
        "rowwise_norm");
    return out;
}

inline Tensor sum_all(const Tensor& x) {
    Tensor out(1, 1);
    Real s = 0;
    for (Real v : x.values()) s += v;
    out.values()[0] = s;
    auto xi = x.impl();
    detail::attach(
        out, {&x},
        [xi](const TensorImpl& o) {
            xi->ensure_grad();
            for (Real& g : xi->grad) g += o.grad[0];
        },
        "sum_all");
    return out;
}

inline Tensor mean_all(const Tensor& x) {
    detail::require(x.numel() > 0, "mean_all: empty tensor");
    return affine(sum_all(x), Real(1) / static_cast<Real>(x.numel()), Real(0));
}

enum class SegmentMode { Sum, Mean, Max };

/// Aggregates value rows into num_segments rows grouped by segment_of.
/// Empty segments yield zero rows (also for Max). Mean divides by the
/// segment count; Max routes gradients to the argmax row, ties resolving to
/// the lowest row index.
inline Tensor segment_aggregate(const Tensor& values, const std::vector<std::int32_t>& segment_of,
                                std::size_t num_segments, SegmentMode mode) {
    detail::require(segment_of.size() == values.rows(),
                    "segment_aggregate: segment_of length " + std::to_string(segment_of.size()) +
                        " does not match value rows " + std::to_string(values.rows()));
    for (std::int32_t s : segment_of)
        detail::require(s >= 0 && static_cast<std::size_t>(s) < num_segments,
                        "segment_aggregate: segment index " + std::to_string(s) +
                            " out of range [0, " + std::to_string(num_segments) + ")");
    const std::size_t m = values.rows(), d = values.cols();
    Tensor out(num_segments, d);
    std::vector<std::size_t> count(num_segments, 0);
    for (std::int32_t s : segment_of) ++count[static_cast<std::size_t>(s)];

    std::vector<std::int32_t> argmax;
    if (mode == SegmentMode::Max) {
        argmax.assign(num_segments * d, -1);
        for (std::size_t t = 0; t < m; ++t) {
            const std::size_t s = static_cast<std::size_t>(segment_of[t]);
            for (std::size_t j = 0; j < d; ++j) {
                const Real v = values.at(t, j);
                std::int32_t& a = argmax[s * d + j];
                if (a < 0 || v > out.at(s, j)) {
                    a = static_cast<std::int32_t>(t);
                    out.at(s, j) = v;
                }
            }
        }
        // empty segments stay zero
        for (std::size_t s = 0; s < num_segments; ++s)
            if (count[s] == 0)
                for (std::size_t j = 0; j < d; ++j) out.at(s, j) = Real(0);
    } else {
        for (std::size_t t = 0; t < m; ++t) {
            const std::size_t s = static_cast<std::size_t>(segment_of[t]);
            for (std::size_t j = 0; j < d; ++j) out.at(s, j) += values.at(t, j);
        }
        if (mode == SegmentMode::Mean)
            for (std::size_t s = 0; s < num_segments; ++s)
                if (count[s] > 0)
                    for (std::size_t j = 0; j < d; ++j)
                        out.at(s, j) /= static_cast<Real>(count[s]);
    }

    auto vi = values.impl();
    detail::attach(
        out, {&values},
        [vi, segment_of, count, argmax, mode, d](const TensorImpl& o) {
            vi->ensure_grad();
            if (mode == SegmentMode::Max) {
                for (std::size_t s = 0; s < count.size(); ++s) {
                    if (count[s] == 0) continue;
                    for (std::size_t j = 0; j < d; ++j) {
                        const std::int32_t t = argmax[s * d + j];
                        vi->grad[static_cast<std::size_t>(t) * d + j] += o.grad[s * d + j];
                    }
                }
            } else {
                for (std::size_t t = 0; t < segment_of.size(); ++t) {
                    const std::size_t s = static_cast<std::size_t>(segment_of[t]);
                    const Real scale = mode == SegmentMode::Mean
                                           ? Real(1) / static_cast<Real>(count[s])
                                           : Real(1);
                    for (std::size_t j = 0; j < d; ++j)
                        vi->grad[t * d + j] += scale * o.grad[s * d + j];
                }
            }
        },
        "segment_aggregate");
    return out;
}

inline Tensor segment_sum(const Tensor& v, const std::vector<std::int32_t>& seg, std::size_t n) {
    return segment_aggregate(v, seg, n, SegmentMode::Sum);
}

inline Tensor segment_mean(const Tensor& v, const std::vector<std::int32_t>& seg, std::size_t n) {
    return segment_aggregate(v, seg, n, SegmentMode::Mean);
}

inline Tensor segment_max(const Tensor& v, const std::vector<std::int32_t>& seg, std::size_t n) {
    return segment_aggregate(v, seg, n, SegmentMode::Max);
}

/// Softmax over each segment of a column of logits (M x 1), computed with
/// per-segment max subtraction. A singleton segment yields weight 1.
inline Tensor segment_softmax(const Tensor& logits, const std::vector<std::int32_t>& segment_of,
                              std::size_t num_segments) {
    detail::require(logits.cols() == 1, "segment_softmax: logits must be M x 1, got " +
                                            detail::shape_str(logits));
    detail::require(segment_of.size() == logits.rows(),
                    "segment_softmax: segment_of length does not match logits");
    for (std::int32_t s : segment_of)
        detail::require(s >= 0 && static_cast<std::size_t>(s) < num_segments,
                        "segment_softmax: segment index out of range");
    const std::size_t m = logits.rows();
    std::vector<Real> seg_max(num_segments, -std::numeric_limits<Real>::infinity());
    for (std::size_t t = 0; t < m; ++t) {
        const std::size_t s = static_cast<std::size_t>(segment_of[t]);
        seg_max[s] = std::max(seg_max[s], logits.values()[t]);
    }
    Tensor out(m, 1);
    std::vector<Real> seg_sum(num_segments, Real(0));
    for (std::size_t t = 0; t < m; ++t) {
        const std::size_t s = static_cast<std::size_t>(segment_of[t]);
        out.values()[t] = std::exp(logits.values()[t] - seg_max[s]);
        seg_sum[s] += out.values()[t];
    }
    for (std::size_t t = 0; t < m; ++t)
        out.values()[t] /= seg_sum[static_cast<std::size_t>(segment_of[t])];

    auto li = logits.impl();
    detail::attach(
        out, {&logits},
        [li, segment_of, num_segments](const TensorImpl& o) {
            li->ensure_grad();
            // d l_i = alpha_i * (g_i - sum_j alpha_j g_j) within the segment
            std::vector<Real> seg_dot(num_segments, Real(0));
            for (std::size_t t = 0; t < o.values.size(); ++t)
                seg_dot[static_cast<std::size_t>(segment_of[t])] += o.values[t] * o.grad[t];
            for (std::size_t t = 0; t < o.values.size(); ++t)
                li->grad[t] += o.values[t] *
                               (o.grad[t] - seg_dot[static_cast<std::size_t>(segment_of[t])]);
        },
        "segment_softmax");
    return out;
}

/// Inverted dropout. Identity in eval mode; in train mode zeroes entries
/// with probability rate and scales survivors by 1/(1-rate). The mask is
/// fully determined by the seed.
inline Tensor dropout(const Tensor& x, Real rate, bool train_mode, std::uint64_t seed) {
    detail::require(rate >= Real(0) && rate < Real(1),
                    "dropout: rate must be in [0, 1), got " + std::to_string(rate));
    if (!train_mode || rate == Real(0)) return x;
    Rng rng(seed);
    const Real keep = Real(1) - rate;
    const Real scale = Real(1) / keep;
    auto mask = std::make_shared<std::vector<Real>>(x.numel());
    Tensor out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        (*mask)[i] = rng.uniform() < rate ? Real(0) : scale;
        out.values()[i] = x.values()[i] * (*mask)[i];
    }
    auto xi = x.impl();
    detail::attach(
        out, {&x},
        [xi, mask](const TensorImpl& o) {
            xi->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i)
                xi->grad[i] += o.grad[i] * (*mask)[i];
        },
        "dropout");
    return out;
}

/// Mean absolute error over all entries; the scalar training loss.
inline Tensor mae_loss(const Tensor& pred, const Tensor& target) {
    detail::require(pred.rows() == target.rows() && pred.cols() == target.cols(),
                    "mae_loss: shapes " + detail::shape_str(pred) + " and " +
                        detail::shape_str(target) + " differ");
    detail::require(pred.numel() > 0, "mae_loss: empty input");
    Tensor out(1, 1);
    Real s = 0;
    for (std::size_t i = 0; i < pred.numel(); ++i)
        s += std::abs(pred.values()[i] - target.values()[i]);
    const Real inv_n = Real(1) / static_cast<Real>(pred.numel());
    out.values()[0] = s * inv_n;
    auto pi = pred.impl(), ti = target.impl();
    detail::attach(
        out, {&pred, &target},
        [pi, ti, inv_n](const TensorImpl& o) {
            const Real g = o.grad[0] * inv_n;
            if (pi->requires_grad) pi->ensure_grad();
            if (ti->requires_grad) ti->ensure_grad();
            for (std::size_t i = 0; i < pi->values.size(); ++i) {
                const Real d = pi->values[i] - ti->values[i];
                const Real sgn = d > Real(0) ? Real(1) : (d < Real(0) ? Real(-1) : Real(0));
                if (pi->requires_grad) pi->grad[i] += g * sgn;
                if (ti->requires_grad) ti->grad[i] -= g * sgn;
            }
        },
        "mae_loss");
    return out;
}

}  // namespace atomflex
