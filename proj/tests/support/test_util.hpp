#pragma once

#include <array>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "atomflex/rng.hpp"
#include "atomflex/tensor.hpp"

namespace testutil {

/// Self-deleting temporary directory.
class TempDir {
public:
    TempDir() {
        auto base = std::filesystem::temp_directory_path();
        std::string tmpl = (base / "atomflex-test-XXXXXX").string();
        std::vector<char> buf(tmpl.begin(), tmpl.end());
        buf.push_back('\0');
        if (!mkdtemp(buf.data())) throw std::runtime_error("mkdtemp failed");
        path_ = buf.data();
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

/// Fill a tensor with uniform values in [lo, hi).
inline void randomize(atomflex::Tensor& t, atomflex::Rng& rng, double lo = -1.0, double hi = 1.0) {
    for (auto& v : t.values()) v = static_cast<atomflex::Real>(rng.uniform(lo, hi));
}

using Rotation = std::array<std::array<double, 3>, 3>;

/// Proper rotation composed from random angles about the three axes.
inline Rotation random_rotation(atomflex::Rng& rng) {
    const double a = rng.uniform(0.0, 6.283185307179586);
    const double b = rng.uniform(0.0, 6.283185307179586);
    const double c = rng.uniform(0.0, 6.283185307179586);
    const double ca = std::cos(a), sa = std::sin(a);
    const double cb = std::cos(b), sb = std::sin(b);
    const double cc = std::cos(c), sc = std::sin(c);
    const Rotation rz = {{{ca, -sa, 0}, {sa, ca, 0}, {0, 0, 1}}};
    const Rotation ry = {{{cb, 0, sb}, {0, 1, 0}, {-sb, 0, cb}}};
    const Rotation rx = {{{1, 0, 0}, {0, cc, -sc}, {0, sc, cc}}};
    auto matmul3 = [](const Rotation& x, const Rotation& y) {
        Rotation out{};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                for (int k = 0; k < 3; ++k) out[i][j] += x[i][k] * y[k][j];
        return out;
    };
    return matmul3(rz, matmul3(ry, rx));
}

/// coords' = coords R^T + t, i.e. each row p becomes R p + t.
inline atomflex::Tensor apply_rigid(const atomflex::Tensor& coords, const Rotation& r,
                                    const std::array<double, 3>& t) {
    atomflex::Tensor out(coords.rows(), 3);
    for (std::size_t i = 0; i < coords.rows(); ++i)
        for (int a = 0; a < 3; ++a) {
            double v = t[a];
            for (int b = 0; b < 3; ++b) v += r[a][b] * coords.at(i, b);
            out.at(i, a) = static_cast<atomflex::Real>(v);
        }
    return out;
}

/// Central finite-difference check of d(loss)/d(leaf) for every element of
/// every leaf. `build` must reconstruct the graph from the leaf tensors and
/// return the scalar loss. Returns the maximum relative error observed,
/// with rel = |analytic - numeric| / max(1, |analytic|, |numeric|).
inline double grad_check(std::vector<atomflex::Tensor> leaves,
                         const std::function<atomflex::Tensor()>& build, double h = 1e-6) {
    for (auto& leaf : leaves) {
        leaf.set_requires_grad(true);
        leaf.zero_grad();
    }
    atomflex::Tensor loss = build();
    loss.backward();
    std::vector<std::vector<atomflex::Real>> analytic;
    analytic.reserve(leaves.size());
    for (auto& leaf : leaves)
        analytic.push_back(leaf.has_grad() ? leaf.grad()
                                           : std::vector<atomflex::Real>(leaf.numel(), 0));

    double worst = 0.0;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& leaf = leaves[li];
        for (std::size_t i = 0; i < leaf.numel(); ++i) {
            const double orig = leaf.values()[i];
            leaf.values()[i] = static_cast<atomflex::Real>(orig + h);
            const double up = build().values()[0];
            leaf.values()[i] = static_cast<atomflex::Real>(orig - h);
            const double down = build().values()[0];
            leaf.values()[i] = static_cast<atomflex::Real>(orig);
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[li][i];
            const double rel =
                std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace testutil
