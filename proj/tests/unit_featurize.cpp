#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <vector>

#include "atomflex/bonds.hpp"
#include "atomflex/errors.hpp"
#include "atomflex/featurize.hpp"
#include "atomflex/rng.hpp"
#include "support/synthetic.hpp"

using namespace atomflex;

namespace {

AtomRecord atom(std::string name, std::string elem, std::string res, int seq, double x,
                double y, double z, double b) {
    AtomRecord a;
    a.name = std::move(name);
    a.element = std::move(elem);
    a.residue_name = std::move(res);
    a.chain_id = 'A';
    a.residue_seq = seq;
    a.position = {x, y, z};
    a.b_factor = b;
    return a;
}

std::vector<int> brute_counts(const std::vector<std::array<double, 3>>& pts, double radius) {
    std::vector<int> counts(pts.size(), 0);
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (std::size_t j = i + 1; j < pts.size(); ++j) {
            double d2 = 0;
            for (int k = 0; k < 3; ++k) {
                const double d = pts[i][k] - pts[j][k];
                d2 += d * d;
            }
            if (d2 <= radius * radius) {
                ++counts[i];
                ++counts[j];
            }
        }
    return counts;
}

}  // namespace

TEST_CASE("default feature layout has the documented widths") {
    FeatureConfig c = FeatureConfig::defaults();
    c.validate();
    REQUIRE(c.element_vocab.size() == 6);
    REQUIRE(c.locant_vocab.size() == 38);   // 36 standard + OXT + other
    REQUIRE(c.residue_vocab.size() == 21);  // 20 standard + other
    REQUIRE(c.node_dim() == 66);
    REQUIRE(c.edge_dim() == 5);

    const auto cats = feature_categories(c);
    REQUIRE(cats.size() == 4);
    REQUIRE(cats[0].name == "atom type");
    REQUIRE(cats[3].name == "atom degree");
    std::size_t cursor = 0;
    for (const auto& cat : cats) {
        REQUIRE(cat.begin == cursor);  // categories tile the feature vector
        REQUIRE(cat.end > cat.begin);
        cursor = cat.end;
    }
    REQUIRE(cursor == c.node_dim());
}

TEST_CASE("feature config validation rejects malformed vocabularies") {
    FeatureConfig c = FeatureConfig::defaults();
    SECTION("missing other slot") {
        c.element_vocab.back() = "X";
        REQUIRE_THROWS_AS(c.validate(), ContractError);
    }
    SECTION("duplicate entries") {
        c.residue_vocab[0] = c.residue_vocab[1];
        REQUIRE_THROWS_AS(c.validate(), ContractError);
    }
    SECTION("tiny vocabulary") {
        c.locant_vocab = {"other"};
        REQUIRE_THROWS_AS(c.validate(), ContractError);
    }
    SECTION("non-positive scales") {
        FeatureConfig bad = FeatureConfig::defaults();
        bad.degree_radius = 0;
        REQUIRE_THROWS_AS(bad.validate(), ContractError);
        bad = FeatureConfig::defaults();
        bad.degree_scale = -1;
        REQUIRE_THROWS_AS(bad.validate(), ContractError);
        bad = FeatureConfig::defaults();
        bad.distance_scale = 0;
        REQUIRE_THROWS_AS(bad.validate(), ContractError);
    }
}

TEST_CASE("grid neighbor counts match brute force on random clouds") {
    Rng rng(99);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 2 + rng.below(120);
        std::vector<std::array<double, 3>> pts(n);
        const double spread = trial % 2 == 0 ? 12.0 : 60.0;  // dense and sparse
        for (auto& p : pts)
            for (auto& v : p) v = rng.uniform(-spread, spread);
        const double radius = rng.uniform(2.0, 8.0);
        REQUIRE(neighbor_counts(pts, radius) == brute_counts(pts, radius));
    }
}

TEST_CASE("neighbor counts handle exact-boundary and degenerate inputs") {
    // two points exactly at the radius: <= counts them
    std::vector<std::array<double, 3>> pts = {{0, 0, 0}, {5, 0, 0}};
    REQUIRE(neighbor_counts(pts, 5.0) == std::vector<int>{1, 1});
    REQUIRE(neighbor_counts(pts, 4.999) == std::vector<int>{0, 0});
    // a single point has no neighbors
    REQUIRE(neighbor_counts({{1, 2, 3}}, 5.0) == std::vector<int>{0});
    REQUIRE_THROWS_AS(neighbor_counts({}, 5.0), ContractError);
    REQUIRE_THROWS_AS(neighbor_counts(pts, 0.0), ContractError);
    std::vector<std::array<double, 3>> bad = {{0, 0, std::nan("")}};
    REQUIRE_THROWS_AS(neighbor_counts(bad, 5.0), ContractError);
}

TEST_CASE("node rows are one-hot blocks plus a clamped degree") {
    FeatureConfig c = FeatureConfig::defaults();
    ProteinStructure s;
    s.id = "1XYZ";
    s.atoms = {atom("N", "N", "GLY", 1, 0, 0, 0, 11.0),
               atom("CA", "C", "GLY", 1, 1.45, 0, 0, 12.0),
               atom("FE", "FE", "XXX", 2, 100, 100, 100, 13.0)};
    BondList bonds;
    bonds.bonds = {{0, 1, BondKind::Single}};
    AtomGraph g = build_graph(s, bonds, c);

    REQUIRE(g.protein_id == "1XYZ");
    REQUIRE(g.num_nodes() == 3);
    REQUIRE(g.node_features.cols() == 66);

    const std::size_t e = c.element_vocab.size(), l = c.locant_vocab.size(),
                      r = c.residue_vocab.size();
    // row 0: element N -> slot 1, locant N -> slot 0, residue GLY
    REQUIRE(g.node_features.at(0, 1) == 1.0);
    REQUIRE(g.node_features.at(0, e + 0) == 1.0);
    std::size_t gly = 0;
    while (c.residue_vocab[gly] != "GLY") ++gly;
    REQUIRE(g.node_features.at(0, e + l + gly) == 1.0);
    // row 2: out-of-vocabulary element, locant and residue land in "other"
    REQUIRE(g.node_features.at(2, e - 1) == 1.0);
    REQUIRE(g.node_features.at(2, e + l - 1) == 1.0);
    REQUIRE(g.node_features.at(2, e + l + r - 1) == 1.0);
    // each block holds exactly one 1
    for (std::size_t i = 0; i < 3; ++i) {
        double se = 0, sl = 0, sr = 0;
        for (std::size_t j = 0; j < e; ++j) se += g.node_features.at(i, j);
        for (std::size_t j = 0; j < l; ++j) sl += g.node_features.at(i, e + j);
        for (std::size_t j = 0; j < r; ++j) sr += g.node_features.at(i, e + l + j);
        REQUIRE(se == 1.0);
        REQUIRE(sl == 1.0);
        REQUIRE(sr == 1.0);
    }
    // degrees: atoms 0 and 1 see each other within 5 A, atom 2 is far away
    REQUIRE(g.node_features.at(0, 65) == Catch::Approx(1.0 / 20.0));
    REQUIRE(g.node_features.at(1, 65) == Catch::Approx(1.0 / 20.0));
    REQUIRE(g.node_features.at(2, 65) == 0.0);
    // coordinates and raw targets pass through
    REQUIRE(g.coords.at(1, 0) == Catch::Approx(1.45));
    REQUIRE(g.targets.at(2, 0) == 13.0);
}

TEST_CASE("degree saturates at one for crowded atoms") {
    FeatureConfig c = FeatureConfig::defaults();
    ProteinStructure s;
    for (int i = 0; i < 25; ++i)
        s.atoms.push_back(atom("CA", "C", "GLY", i + 1, 0.1 * i, 0, 0, 10.0 + i));
    AtomGraph g = build_graph(s, BondList{}, c);
    REQUIRE(g.node_features.at(0, 65) == 1.0);  // 24 neighbors / 20, clamped
}

TEST_CASE("every bond becomes two directed edges with shared features") {
    FeatureConfig c = FeatureConfig::defaults();
    ProteinStructure s;
    s.atoms = {atom("N", "N", "GLY", 1, 0, 0, 0, 11.0),
               atom("CA", "C", "GLY", 1, 3.0, 4.0, 0, 12.0),
               atom("C", "C", "GLY", 1, 3.0, 4.0, 12.0, 13.0)};
    BondList bonds;
    bonds.bonds = {{0, 1, BondKind::Single}, {1, 2, BondKind::Double}};
    AtomGraph g = build_graph(s, bonds, c);

    REQUIRE(g.num_edges() == 4);
    REQUIRE(g.senders == std::vector<std::int32_t>{0, 1, 1, 2});
    REQUIRE(g.receivers == std::vector<std::int32_t>{1, 0, 2, 1});
    // distance column is geometric length over the configured scale
    REQUIRE(g.edge_features.at(0, 4) == Catch::Approx(5.0 / 2.0));
    REQUIRE(g.edge_features.at(1, 4) == Catch::Approx(5.0 / 2.0));
    REQUIRE(g.edge_features.at(2, 4) == Catch::Approx(12.0 / 2.0));
    // bond kind one-hot
    REQUIRE(g.edge_features.at(0, 0) == 1.0);
    REQUIRE(g.edge_features.at(2, 1) == 1.0);
    double kind_sum = 0;
    for (std::size_t j = 0; j < FeatureConfig::kBondKinds; ++j)
        kind_sum += g.edge_features.at(2, j);
    REQUIRE(kind_sum == 1.0);
}

TEST_CASE("build_graph rejects impossible structures and bonds") {
    FeatureConfig c = FeatureConfig::defaults();
    ProteinStructure empty;
    REQUIRE_THROWS_AS(build_graph(empty, BondList{}, c), ContractError);

    ProteinStructure s;
    s.atoms = {atom("CA", "C", "GLY", 1, 0, 0, 0, 10.0),
               atom("C", "C", "GLY", 1, 0, 0, 0, 11.0)};  // coincident
    BondList self;
    self.bonds = {{0, 0, BondKind::Single}};
    REQUIRE_THROWS_AS(build_graph(s, self, c), ContractError);
    BondList range;
    range.bonds = {{0, 7, BondKind::Single}};
    REQUIRE_THROWS_AS(build_graph(s, range, c), ContractError);
    BondList coincident;
    coincident.bonds = {{0, 1, BondKind::Single}};
    REQUIRE_THROWS_AS(build_graph(s, coincident, c), ContractError);
}

TEST_CASE("synthetic proteins featurize into consistent graphs") {
    FeatureConfig c = FeatureConfig::defaults();
    synthetic::ProteinOptions opt;
    opt.seed = 21;
    opt.residues = 10;
    ProteinStructure s = synthetic::make_protein(opt);
    BondList bonds = infer_bonds(s);
    AtomGraph g = build_graph(s, bonds, c);

    REQUIRE(g.num_nodes() == s.atoms.size());
    REQUIRE(g.num_edges() == 2 * bonds.bonds.size());
    for (std::size_t i = 0; i < g.num_nodes(); ++i) {
        double row_sum = 0;
        for (std::size_t j = 0; j + 1 < g.node_features.cols(); ++j)
            row_sum += g.node_features.at(i, j);
        REQUIRE(row_sum == 3.0);  // exactly one hot per block
        const double deg = g.node_features.at(i, 65);
        REQUIRE(deg >= 0.0);
        REQUIRE(deg <= 1.0);
        // synthetic locants and residues are all in-vocabulary
        REQUIRE(g.node_features.at(i, c.element_vocab.size() + 37) == 0.0);
    }
    for (std::size_t m = 0; m < g.num_edges(); ++m)
        REQUIRE(g.edge_features.at(m, 4) > 0.0);
}

TEST_CASE("dataset summaries count residues through backbone nitrogens") {
    FeatureConfig c = FeatureConfig::defaults();
    std::vector<AtomGraph> graphs;
    for (std::uint64_t seed : {31, 32}) {
        synthetic::ProteinOptions opt;
        opt.seed = seed;
        opt.residues = 8;
        graphs.push_back(synthetic::graph_from_protein(synthetic::make_protein(opt), c));
    }
    DatasetSummary sum = dataset_manifest(graphs, c);
    REQUIRE(sum.proteins == 2);
    REQUIRE(sum.total_residues == 16);
    REQUIRE(sum.total_atoms == graphs[0].num_nodes() + graphs[1].num_nodes());
    REQUIRE(sum.mean_atoms_per_protein ==
            Catch::Approx(static_cast<double>(sum.total_atoms) / 2.0));
    double b = 0;
    for (const auto& g : graphs)
        for (std::size_t i = 0; i < g.num_nodes(); ++i) b += g.targets.at(i, 0);
    REQUIRE(sum.mean_b_factor == Catch::Approx(b / static_cast<double>(sum.total_atoms)));
    REQUIRE_THROWS_AS(dataset_manifest({}, c), ContractError);
}
