#pragma once

// Deterministic synthetic fixtures: random feature graphs for layer-level
// tests and helix-shaped synthetic proteins whose B-factors are nearly linear
// in the node features (residue identity, side-chain depth, packing density),
// so small models can actually learn them.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "atomflex/bonds.hpp"
#include "atomflex/featurize.hpp"
#include "atomflex/pdb.hpp"
#include "atomflex/residues.hpp"
#include "atomflex/rng.hpp"
#include "atomflex/tensor.hpp"

namespace synthetic {

/// Random graph with valid one-hot blocks and coordinates consistent with the
/// edge length feature. A path backbone keeps it connected; extra random
/// bonds add branching. n == 1 yields a single isolated node.
inline atomflex::AtomGraph random_graph(std::uint64_t seed, std::size_t n,
                                        const atomflex::FeatureConfig& fc) {
    using namespace atomflex;
    Rng rng(seed);
    AtomGraph g;
    g.protein_id = "9R" + std::to_string(seed % 100);
    g.node_features = Tensor(n, fc.node_dim());
    const std::size_t e = fc.element_vocab.size();
    const std::size_t l = fc.locant_vocab.size();
    const std::size_t r = fc.residue_vocab.size();
    for (std::size_t i = 0; i < n; ++i) {
        g.node_features.at(i, rng.below(e)) = 1;
        g.node_features.at(i, e + rng.below(l)) = 1;
        g.node_features.at(i, e + l + rng.below(r)) = 1;
        g.node_features.at(i, e + l + r) = rng.uniform();
    }
    g.coords = Tensor(n, 3);
    for (auto& v : g.coords.values()) v = rng.uniform(0.0, 8.0);
    std::set<std::pair<std::int32_t, std::int32_t>> pairs;
    for (std::size_t i = 1; i < n; ++i)
        pairs.insert({static_cast<std::int32_t>(i - 1), static_cast<std::int32_t>(i)});
    for (std::size_t t = 0; t < n / 2; ++t) {
        auto a = static_cast<std::int32_t>(rng.below(n));
        auto b = static_cast<std::int32_t>(rng.below(n));
        if (a != b) pairs.insert({std::min(a, b), std::max(a, b)});
    }
    const std::size_t m = 2 * pairs.size();
    g.edge_features = Tensor(m, fc.edge_dim());
    std::size_t row = 0;
    for (const auto& [a, b] : pairs) {
        const std::size_t kind = rng.below(FeatureConfig::kBondKinds);
        double d2 = 0;
        for (std::size_t k = 0; k < 3; ++k) {
            const double dv = g.coords.at(static_cast<std::size_t>(a), k) -
                              g.coords.at(static_cast<std::size_t>(b), k);
            d2 += dv * dv;
        }
        const double dist = std::sqrt(d2) / fc.distance_scale;
        for (int dir = 0; dir < 2; ++dir) {
            g.senders.push_back(dir == 0 ? a : b);
            g.receivers.push_back(dir == 0 ? b : a);
            g.edge_features.at(row, kind) = 1;
            g.edge_features.at(row, fc.edge_dim() - 1) = dist;
            ++row;
        }
    }
    g.targets = Tensor(n, 1);
    for (auto& v : g.targets.values()) v = rng.uniform(5.0, 50.0);
    return g;
}

/// Replaces targets with X w + b. With only_col >= 0 the weight vector is
/// zero except at that column, which makes the target depend on exactly one
/// feature.
inline void linear_targets(atomflex::AtomGraph& g, std::uint64_t seed,
                           std::ptrdiff_t only_col = -1) {
    using namespace atomflex;
    Rng rng(seed);
    const std::size_t c = g.node_features.cols();
    std::vector<Real> w(c, 0);
    if (only_col < 0)
        for (auto& v : w) v = rng.uniform(-2.0, 2.0);
    else
        w[static_cast<std::size_t>(only_col)] = 3.0;
    const Real offset = rng.uniform(5.0, 10.0);
    for (std::size_t i = 0; i < g.num_nodes(); ++i) {
        Real y = offset;
        for (std::size_t j = 0; j < c; ++j) y += g.node_features.at(i, j) * w[j];
        g.targets.at(i, 0) = y;
    }
}

namespace detail {

inline std::array<double, 3> sub3(const std::array<double, 3>& a,
                                  const std::array<double, 3>& b) {
    return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}

inline std::array<double, 3> axpy(const std::array<double, 3>& p, double s,
                                  const std::array<double, 3>& d) {
    return {p[0] + s * d[0], p[1] + s * d[1], p[2] + s * d[2]};
}

inline std::array<double, 3> outward(const std::array<double, 3>& p) {
    const double n = std::sqrt(p[0] * p[0] + p[1] * p[1]);
    if (n < 1e-9) return {1, 0, 0};
    return {p[0] / n, p[1] / n, 0};
}

/// Side-chain shell rank: 0 for backbone, growing with distance from CA.
inline int shell_rank(const std::string& locant) {
    if (locant == "N" || locant == "CA" || locant == "C" || locant == "O" ||
        locant == "OXT")
        return 0;
    if (locant == "CB") return 1;
    if (locant == "CG" || locant == "CG1" || locant == "CG2" || locant == "OG" ||
        locant == "OG1" || locant == "SG")
        return 2;
    if (locant.size() >= 2 && (locant[1] == 'D')) return 3;  // CD*, OD*, ND*, SD
    if (locant.size() >= 2 && (locant[1] == 'E')) return 4;  // CE*, NE*, OE*
    if (locant.size() >= 2 && (locant[1] == 'Z')) return 5;  // CZ*, NZ
    return 6;                                                // CH2, NH*, OH
}

inline double shell_distance(int rank) {
    static const double d[] = {0.0, 1.53, 2.5, 3.6, 4.7, 5.4, 6.2};
    return d[rank];
}

inline int residue_base(const std::string& name) {
    std::uint64_t h = 1469598103934665603ULL;
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return static_cast<int>(h % 11);
}

inline double gauss(atomflex::Rng& rng) {
    const double u1 = 1.0 - rng.uniform();
    const double u2 = rng.uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

}  // namespace detail

struct ProteinOptions {
    std::uint64_t seed = 1;
    std::size_t residues = 30;
    double resolution = 1.8;
    bool with_oxt = true;
    std::string id = "9SYA";
    double noise_sigma = 2.0;
};

/// Helix-backbone synthetic protein. Consecutive alpha carbons sit ~3.8 A
/// apart; the peptide C-N gap lands near 1.3 A so bond inference connects the
/// chain. Side-chain atoms fan outward from CA by shell. B-factors combine a
/// residue-type base, a depth term, an exposure term (which is exactly linear
/// in the degree feature) and Gaussian noise, clamped to [2, 99].
inline atomflex::ProteinStructure make_protein(const ProteinOptions& opt) {
    using namespace atomflex;
    Rng rng(opt.seed);
    ProteinStructure s;
    s.id = opt.id;
    s.resolution = opt.resolution;
    const double rise = 1.5, radius = 2.3, turn = 100.0 * 3.14159265358979323846 / 180.0;
    auto ca_of = [&](std::size_t i) -> std::array<double, 3> {
        const double th = turn * static_cast<double>(i);
        return {radius * std::cos(th), radius * std::sin(th),
                rise * static_cast<double>(i)};
    };
    const auto& residues = standard_residues();
    std::vector<std::string> seq(opt.residues);
    for (auto& name : seq) name = residues[rng.below(residues.size())];

    int serial = 1;
    auto push_atom = [&](const std::string& locant, const std::string& res, int res_seq,
                         std::array<double, 3> pos) {
        AtomRecord a;
        a.serial = serial++;
        a.name = locant;
        a.element = locant == "OXT" ? "O" : locant.substr(0, 1);
        a.residue_name = res;
        a.chain_id = 'A';
        a.residue_seq = res_seq;
        a.position = pos;
        a.occupancy = 1.0;
        s.atoms.push_back(std::move(a));
    };

    for (std::size_t i = 0; i < opt.residues; ++i) {
        const std::array<double, 3> ca = ca_of(i);
        const std::array<double, 3> chord_next = detail::sub3(ca_of(i + 1), ca);
        const std::array<double, 3> chord_prev =
            i == 0 ? chord_next : detail::sub3(ca, ca_of(i - 1));
        const std::array<double, 3> n_pos = detail::axpy(ca, -0.30, chord_prev);
        const std::array<double, 3> c_pos = detail::axpy(ca, 0.35, chord_next);
        const std::array<double, 3> o_pos = detail::axpy(c_pos, 1.23, detail::outward(c_pos));
        const std::string& res = seq[i];
        const int res_seq = static_cast<int>(i) + 1;
        push_atom("N", res, res_seq, n_pos);
        push_atom("CA", res, res_seq, ca);
        push_atom("C", res, res_seq, c_pos);
        push_atom("O", res, res_seq, o_pos);
        // side-chain atom set = union of template bond endpoints
        std::set<std::string> side;
        for (const TemplateBond& b : residue_templates().at(res)) {
            side.insert(b.a);
            side.insert(b.b);
        }
        for (const char* bb : {"N", "CA", "C", "O"}) side.erase(bb);
        for (const std::string& locant : side) {
            const int rank = detail::shell_rank(locant);
            std::array<double, 3> dir = detail::outward(ca);
            std::array<double, 3> pos = detail::axpy(ca, detail::shell_distance(rank), dir);
            for (auto& v : pos) v += rng.uniform(-0.4, 0.4);
            push_atom(locant, res, res_seq, pos);
        }
        if (opt.with_oxt && i + 1 == opt.residues)
            push_atom("OXT", res, res_seq, detail::axpy(c_pos, 1.3, detail::outward(c_pos)));
    }

    // Exposure from a brute-force 5 A neighbor count.
    std::vector<int> counts(s.atoms.size(), 0);
    for (std::size_t i = 0; i < s.atoms.size(); ++i)
        for (std::size_t j = i + 1; j < s.atoms.size(); ++j) {
            double d2 = 0;
            for (int k = 0; k < 3; ++k) {
                const double dv = s.atoms[i].position[k] - s.atoms[j].position[k];
                d2 += dv * dv;
            }
            if (d2 <= 25.0) {
                ++counts[i];
                ++counts[j];
            }
        }
    for (std::size_t i = 0; i < s.atoms.size(); ++i) {
        AtomRecord& a = s.atoms[i];
        const double exposure = std::max(0.0, 1.0 - counts[i] / 20.0);
        double b = 5.0 + detail::residue_base(a.residue_name) +
                   6.0 * detail::shell_rank(a.name) + 22.0 * exposure +
                   opt.noise_sigma * detail::gauss(rng);
        a.b_factor = std::clamp(b, 2.0, 99.0);
    }
    return s;
}

inline std::string make_pdb_text(const ProteinOptions& opt) {
    atomflex::ProteinStructure s = make_protein(opt);
    std::vector<double> b;
    b.reserve(s.atoms.size());
    for (const auto& a : s.atoms) b.push_back(a.b_factor);
    return atomflex::write_predictions(s, b);
}

/// Writes `count` synthetic proteins into dir as <ID>.pdb and returns the ids.
inline std::vector<std::string> write_corpus(const std::filesystem::path& dir,
                                             std::size_t count, std::uint64_t base_seed,
                                             std::size_t residues = 24) {
    std::vector<std::string> ids;
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < count; ++i) {
        ProteinOptions opt;
        opt.seed = base_seed + i;
        opt.residues = residues;
        opt.id = std::string("9S") + static_cast<char>('A' + (i / 26) % 26) +
                 static_cast<char>('A' + i % 26);
        opt.resolution = 1.2 + 0.04 * static_cast<double>(i % 25);
        ids.push_back(opt.id);
        std::ofstream out(dir / (opt.id + ".pdb"));
        out << make_pdb_text(opt);
    }
    return ids;
}

/// Featurization shortcut used all over the tests.
inline atomflex::AtomGraph graph_from_protein(const atomflex::ProteinStructure& s,
                                              const atomflex::FeatureConfig& fc) {
    return atomflex::build_graph(s, atomflex::infer_bonds(s), fc);
}

/// perm[i] is the new index of old node i. Edge rows keep their order; only
/// the endpoint labels change.
inline atomflex::AtomGraph permute_graph(const atomflex::AtomGraph& g,
                                         const std::vector<std::int32_t>& perm) {
    atomflex::AtomGraph p;
    p.protein_id = g.protein_id;
    const std::size_t n = g.num_nodes();
    p.node_features = atomflex::Tensor(n, g.node_features.cols());
    p.coords = atomflex::Tensor(n, 3);
    p.targets = atomflex::Tensor(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        const auto j = static_cast<std::size_t>(perm[i]);
        for (std::size_t c = 0; c < g.node_features.cols(); ++c)
            p.node_features.at(j, c) = g.node_features.at(i, c);
        for (std::size_t c = 0; c < 3; ++c) p.coords.at(j, c) = g.coords.at(i, c);
        p.targets.at(j, 0) = g.targets.at(i, 0);
    }
    for (auto s : g.senders) p.senders.push_back(perm[static_cast<std::size_t>(s)]);
    for (auto r : g.receivers) p.receivers.push_back(perm[static_cast<std::size_t>(r)]);
    p.edge_features = g.edge_features;
    return p;
}

inline std::vector<std::int32_t> random_permutation(atomflex::Rng& rng, std::size_t n) {
    std::vector<std::int32_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = static_cast<std::int32_t>(i);
    rng.shuffle(perm);
    return perm;
}

}  // namespace synthetic
