#pragma once

#include <map>
#include <string>
#include <vector>

namespace atomflex {

enum class BondKind { Single, Double, Triple, Delocalized };

inline const char* bond_kind_name(BondKind k) {
    switch (k) {
        case BondKind::Single: return "single";
        case BondKind::Double: return "double";
        case BondKind::Triple: return "triple";
        case BondKind::Delocalized: return "delocalized";
    }
    return "?";
}

struct TemplateBond {
    const char* a;
    const char* b;
    BondKind kind;
};

/// Covalent connectivity of the 20 standard amino acids over heavy atoms.
/// Backbone bonds (N-CA, CA-C, C=O) are included in every entry. Aromatic
/// rings, carboxylates, the arginine guanidinium and the histidine imidazole
/// are delocalized; the backbone carbonyl is a double bond; everything else
/// is single. Proline closes its ring through the backbone nitrogen.
inline const std::map<std::string, std::vector<TemplateBond>>& residue_templates() {
    using K = BondKind;
    static const std::map<std::string, std::vector<TemplateBond>> table = {
        {"ALA",
         {{"N", "CA", K::Single}, {"CA", "C", K::Single}, {"C", "O", K::Double},
          {"CA", "CB", K::Single}}},
        {"ARG",
         {{"N", "CA", K::Single}, {"CA", "C", K::Single}, {"C", "O", K::Double},
          {"CA", "CB", K::Single}, {"CB", "CG", K::Single}, {"CG", "CD", K::Single},
          {"CD", "NE", K::Single}, {"NE", "CZ", K::Delocalized},
          {"CZ", "NH1", K::Delocalized}, {"CZ", "NH2", K::Delocalized}}},
        {"ASN",
         {{"N", "CA", K::Single}, {"CA", "C", K::Single}, {"C", "O", K::Double},
          {"CA", "CB", K::Single}, {"CB", "CG", K::Single}, {"CG", "OD1", K::Double},
          {"CG", "ND2", K::Single}}},
        {"ASP",
         {{"N", "CA", K::Single}, {"CA", "C", K::Single}, {"C", "O", K::Double},
          {"CA", "CB", K::Single}, {"CB", "CG", K::Single},
          {"CG", "OD1", K::Delocalized}, {"CG", "OD2", K::Delocalized}}},
        {"CYS",
         {{"N", "CA", K::Single}, {"CA", "C", K::Single}, {"C", "O", K::Double},
          {"CA", "CB", K::Single}, {"CB", "SG", K::Single}}},
        {"GLN",
         {{"N", "CA", K::Single}, {"CA", "C", K::Single}, {"C", "O", K::Double},
          {"CA", "CB", K::Single}, {"CB", "CG", K::Single}, {"CG", "CD", K::Single},
          {"CD", "OE1", K::Double}, {"CD", "NE2", K::Single}}},
        {"GLU",
         {{"N", "CA", K::Single}, {"CA", "C", K::Single}, {"C", "O", K::Double},
          {"CA", "CB", K::Single}, {"CB", "CG", K::Single}, {"CG", "CD", K::Single},
          {"CD", "OE1", K::Delocalized}, {"CD", "OE2", K::Delocalized}}},
        {"GLY",
         {{"N", "CA", K::Single}, {"CA", "C", K::Single}, {"C", "O", K::Double}}},
        {"HIS",
         {{"N", "CA", K::Single}, {"CA", "C", K::Single}, {"C", "O", K::Double},
          {"CA", "CB", K::Single}, {"CB", "CG", K::Single},
          {"CG", "ND1", K::Delocalized}, {"CG", "CD2", K::Delocalized},
          {"ND1", "CE1", K::Delocalized}, {"CD2", "NE2", K::Delocalized},
          {"CE1", "NE2", K::Delocalized}}},
        {"ILE",
         {{"N", "CA", K::Single}, {"CA", "C", K::Single}, {"C", "O", K::Double},
          {"CA", "CB", K::Single}, {"CB", "CG1", K::Single}, {"CB", "CG2", K::Single},
          {"CG1", "CD1", K::Single}}},
        {"LEU",
         {{"N", "CA", K::Single}, {"CA", "C", K::Single}, {"C", "O", K::Double},
          {"CA", "CB", K::Single}, {"CB", "CG", K::Single}, {"CG", "CD1", K::Single},
          {"CG", "CD2", K::Single}}},
        {"LYS",
         {{"N", "CA", K::Single}, {"CA", "C", K::Single}, {"C", "O", K::Double},
          {"CA", "CB", K::Single}, {"CB", "CG", K::Single}, {"CG", "CD", K::Single},
          {"CD", "CE", K::Single}, {"CE", "NZ", K::Single}}},
        {"MET",
         {{"N", "CA", K::Single}, {"CA", "C", K::Single}, {"C", "O", K::Double},
          {"CA", "CB", K::Single}, {"CB", "CG", K::Single}, {"CG", "SD", K::Single},
          {"SD", "CE", K::Single}}},
        {"PHE",
         {{"N", "CA", K::Single}, {"CA", "C", K::Single}, {"C", "O", K::Double},
          {"CA", "CB", K::Single}, {"CB", "CG", K::Single},
          {"CG", "CD1", K::Delocalized}, {"CG", "CD2", K::Delocalized},
          {"CD1", "CE1", K::Delocalized}, {"CD2", "CE2", K::Delocalized},
          {"CE1", "CZ", K::Delocalized}, {"CE2", "CZ", K::Delocalized}}},
        {"PRO",
         {{"N", "CA", K::Single}, {"CA", "C", K::Single}, {"C", "O", K::Double},
          {"CA", "CB", K::Single}, {"CB", "CG", K::Single}, {"CG", "CD", K::Single},
          {"CD", "N", K::Single}}},
        {"SER",
         {{"N", "CA", K::Single}, {"CA", "C", K::Single}, {"C", "O", K::Double},
          {"CA", "CB", K::Single}, {"CB", "OG", K::Single}}},
        {"THR",
         {{"N", "CA", K::Single}, {"CA", "C", K::Single}, {"C", "O", K::Double},
          {"CA", "CB", K::Single}, {"CB", "OG1", K::Single}, {"CB", "CG2", K::Single}}},
        {"TRP",
         {{"N", "CA", K::Single}, {"CA", "C", K::Single}, {"C", "O", K::Double},
          {"CA", "CB", K::Single}, {"CB", "CG", K::Single},
          {"CG", "CD1", K::Delocalized}, {"CG", "CD2", K::Delocalized},
          {"CD1", "NE1", K::Delocalized}, {"NE1", "CE2", K::Delocalized},
          {"CD2", "CE2", K::Delocalized}, {"CD2", "CE3", K::Delocalized},
          {"CE3", "CZ3", K::Delocalized}, {"CZ3", "CH2", K::Delocalized},
          {"CH2", "CZ2", K::Delocalized}, {"CZ2", "CE2", K::Delocalized}}},
        {"TYR",
         {{"N", "CA", K::Single}, {"CA", "C", K::Single}, {"C", "O", K::Double},
          {"CA", "CB", K::Single}, {"CB", "CG", K::Single},
          {"CG", "CD1", K::Delocalized}, {"CG", "CD2", K::Delocalized},
          {"CD1", "CE1", K::Delocalized}, {"CD2", "CE2", K::Delocalized},
          {"CE1", "CZ", K::Delocalized}, {"CE2", "CZ", K::Delocalized},
          {"CZ", "OH", K::Single}}},
        {"VAL",
         {{"N", "CA", K::Single}, {"CA", "C", K::Single}, {"C", "O", K::Double},
          {"CA", "CB", K::Single}, {"CB", "CG1", K::Single}, {"CB", "CG2", K::Single}}},
    };
    return table;
}

inline bool is_standard_residue(const std::string& name) {
    return residue_templates().count(name) != 0;
}

/// The 20 standard residues in alphabetical 3-letter order.
inline const std::vector<std::string>& standard_residues() {
    static const std::vector<std::string> names = {
        "ALA", "ARG", "ASN", "ASP", "CYS", "GLN", "GLU", "GLY", "HIS", "ILE",
        "LEU", "LYS", "MET", "PHE", "PRO", "SER", "THR", "TRP", "TYR", "VAL"};
    return names;
}

/// Union of heavy-atom names over the 20 standard residues (36 names,
/// backbone first, side chains grouped by element). OXT and the
/// out-of-vocabulary slot are appended by the feature configuration.
inline const std::vector<std::string>& standard_locants() {
    static const std::vector<std::string> names = {
        "N",   "CA",  "C",   "O",   "CB",  "CG",  "CG1", "CG2", "CD",
        "CD1", "CD2", "CE",  "CE1", "CE2", "CE3", "CZ",  "CZ2", "CZ3",
        "CH2", "ND1", "ND2", "NE",  "NE1", "NE2", "NH1", "NH2", "NZ",
        "OD1", "OD2", "OE1", "OE2", "OG",  "OG1", "OH",  "SD",  "SG"};
    return names;
}

}  // namespace atomflex
