#pragma once

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "atomflex/pdb.hpp"
#include "atomflex/residues.hpp"

namespace atomflex {

struct Bond {
    std::int32_t a = 0;
    std::int32_t b = 0;  // a < b
    BondKind kind = BondKind::Single;
};

struct BondList {
    std::vector<Bond> bonds;
    std::vector<std::string> warnings;
    std::vector<std::int32_t> isolated;  // atom indices with no bonds
};

namespace bonddetail {

inline double distance(const AtomRecord& x, const AtomRecord& y) {
    const double dx = x.position[0] - y.position[0];
    const double dy = x.position[1] - y.position[1];
    const double dz = x.position[2] - y.position[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

struct ResidueRun {
    std::size_t begin = 0, end = 0;  // [begin, end) atom indices
    char chain = ' ';
    bool hetero = false;
    std::string name;
    std::map<std::string, std::size_t> by_locant;
};

inline std::vector<ResidueRun> residue_runs(const ProteinStructure& s) {
    std::vector<ResidueRun> runs;
    for (std::size_t i = 0; i < s.atoms.size(); ++i) {
        const AtomRecord& a = s.atoms[i];
        const bool fresh = runs.empty() || runs.back().end != i ||
                           s.atoms[runs.back().begin].chain_id != a.chain_id ||
                           s.atoms[runs.back().begin].residue_seq != a.residue_seq ||
                           s.atoms[runs.back().begin].insertion_code != a.insertion_code ||
                           s.atoms[runs.back().begin].is_hetero != a.is_hetero;
        if (fresh) {
            runs.push_back({i, i, a.chain_id, a.is_hetero, a.residue_name, {}});
        }
        runs.back().end = i + 1;
        runs.back().by_locant.emplace(a.name, i);
    }
    return runs;
}

}  // namespace bonddetail

/// Covalent-bond inference: residue templates for the 20 standard amino
/// acids, peptide links C(i)-N(i+1) under 2.0 A within a chain, disulfide
/// SG-SG links under 2.5 A, and CONECT pairs touching hetero atoms. Atoms
/// with names outside their residue template stay isolated and are reported;
/// unknown residues produce warnings, never errors.
inline BondList infer_bonds(const ProteinStructure& s) {
    constexpr double kPeptideMax = 2.0;
    constexpr double kDisulfideMax = 2.5;

    BondList out;
    std::map<std::pair<std::int32_t, std::int32_t>, std::size_t> seen;
    auto add_bond = [&](std::size_t x, std::size_t y, BondKind kind) {
        if (x == y) return;
        auto key = std::make_pair(static_cast<std::int32_t>(std::min(x, y)),
                                  static_cast<std::int32_t>(std::max(x, y)));
        if (seen.emplace(key, out.bonds.size()).second)
            out.bonds.push_back({key.first, key.second, kind});
    };

    const auto runs = bonddetail::residue_runs(s);
    for (const auto& run : runs) {
        if (run.hetero) continue;  // covered by CONECT
        auto tmpl = residue_templates().find(run.name);
        if (tmpl == residue_templates().end()) {
            out.warnings.push_back("unknown residue " + run.name + " " +
                                   std::string(1, run.chain) +
                                   std::to_string(s.atoms[run.begin].residue_seq) +
                                   "; atoms left unbonded");
            continue;
        }
        for (const TemplateBond& tb : tmpl->second) {
            auto ia = run.by_locant.find(tb.a);
            auto ib = run.by_locant.find(tb.b);
            if (ia == run.by_locant.end() || ib == run.by_locant.end()) continue;
            add_bond(ia->second, ib->second, tb.kind);
        }
        // Terminal carboxylate: with OXT present, both C-O bonds delocalize.
        auto c = run.by_locant.find("C");
        auto oxt = run.by_locant.find("OXT");
        if (c != run.by_locant.end() && oxt != run.by_locant.end()) {
            add_bond(c->second, oxt->second, BondKind::Delocalized);
            auto o = run.by_locant.find("O");
            if (o != run.by_locant.end()) {
                const auto key = std::make_pair(
                    static_cast<std::int32_t>(std::min(c->second, o->second)),
                    static_cast<std::int32_t>(std::max(c->second, o->second)));
                auto it = seen.find(key);
                if (it != seen.end()) out.bonds[it->second].kind = BondKind::Delocalized;
            }
        }
        for (std::size_t i = run.begin; i < run.end; ++i) {
            const std::string& name = s.atoms[i].name;
            if (name == "OXT") continue;
            bool known = false;
            for (const TemplateBond& tb : tmpl->second)
                known = known || name == tb.a || name == tb.b;
            if (!known)
                out.warnings.push_back("atom " + name + " not in the " + run.name +
                                       " template; left unbonded");
        }
    }

    // Peptide bonds between consecutive polymer residues of the same chain.
    for (std::size_t r = 0; r + 1 < runs.size(); ++r) {
        const auto& cur = runs[r];
        const auto& nxt = runs[r + 1];
        if (cur.hetero || nxt.hetero || cur.chain != nxt.chain) continue;
        auto c = cur.by_locant.find("C");
        auto n = nxt.by_locant.find("N");
        if (c == cur.by_locant.end() || n == nxt.by_locant.end()) continue;
        if (bonddetail::distance(s.atoms[c->second], s.atoms[n->second]) < kPeptideMax)
            add_bond(c->second, n->second, BondKind::Single);
    }

    // Disulfide bridges.
    std::vector<std::size_t> sulfurs;
    for (std::size_t i = 0; i < s.atoms.size(); ++i)
        if (!s.atoms[i].is_hetero && s.atoms[i].name == "SG") sulfurs.push_back(i);
    for (std::size_t i = 0; i < sulfurs.size(); ++i)
        for (std::size_t j = i + 1; j < sulfurs.size(); ++j)
            if (bonddetail::distance(s.atoms[sulfurs[i]], s.atoms[sulfurs[j]]) < kDisulfideMax)
                add_bond(sulfurs[i], sulfurs[j], BondKind::Single);

    // CONECT records cover hetero connectivity.
    if (!s.conect_pairs.empty()) {
        std::map<int, std::size_t> by_serial;
        for (std::size_t i = 0; i < s.atoms.size(); ++i)
            by_serial.emplace(s.atoms[i].serial, i);
        for (const auto& [sa, sb] : s.conect_pairs) {
            auto ia = by_serial.find(sa);
            auto ib = by_serial.find(sb);
            if (ia == by_serial.end() || ib == by_serial.end()) continue;
            if (!s.atoms[ia->second].is_hetero && !s.atoms[ib->second].is_hetero) continue;
            add_bond(ia->second, ib->second, BondKind::Single);
        }
    }

    std::vector<char> bonded(s.atoms.size(), 0);
    for (const Bond& b : out.bonds) {
        bonded[static_cast<std::size_t>(b.a)] = 1;
        bonded[static_cast<std::size_t>(b.b)] = 1;
    }
    for (std::size_t i = 0; i < s.atoms.size(); ++i)
        if (!bonded[i]) out.isolated.push_back(static_cast<std::int32_t>(i));
    return out;
}

}  // namespace atomflex
