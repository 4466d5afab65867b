#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "atomflex/errors.hpp"

namespace atomflex {

struct AtomRecord {
    int serial = 0;
    std::string name;          // locant, e.g. "CA"
    std::string element;       // "C", "N", ...
    std::string residue_name;  // 3-letter code
    char chain_id = ' ';
    int residue_seq = 0;
    char insertion_code = ' ';
    std::array<double, 3> position{};
    double occupancy = 1.0;
    double b_factor = 0.0;
    char alt_loc = ' ';
    bool is_hetero = false;
    std::string raw_line;  // original file line; empty for synthetic records
};

struct ProteinStructure {
    std::string id;  // 4-character PDB code when known
    std::vector<AtomRecord> atoms;
    std::optional<double> resolution;  // Angstrom
    std::vector<std::pair<int, int>> conect_pairs;  // serial pairs
};

struct FilterPolicy {
    double max_resolution = 2.5;  // Angstrom; accept strictly below
    bool reject_zero_b = true;
    bool reject_constant_b = true;
    double constant_b_variance_floor = 1e-6;  // Angstrom^4
};

enum class RejectReason { Resolution, ErroneousB };

struct FilterResult {
    bool accepted = false;
    RejectReason reason = RejectReason::Resolution;
    std::string detail;

    static FilterResult accept() { return {true, RejectReason::Resolution, {}}; }
    static FilterResult reject(RejectReason r, std::string detail) {
        return {false, r, std::move(detail)};
    }
};

inline const char* reject_reason_name(RejectReason r) {
    switch (r) {
        case RejectReason::Resolution: return "resolution";
        case RejectReason::ErroneousB: return "erroneous_b";
    }
    return "?";
}

namespace pdbdetail {

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

/// Extracts 1-based inclusive columns [begin, end]; short lines yield the
/// available prefix (possibly empty).
inline std::string_view columns(std::string_view line, std::size_t begin, std::size_t end) {
    if (line.size() < begin) return {};
    return line.substr(begin - 1, std::min(end, line.size()) - begin + 1);
}

inline double real_field(std::string_view line, std::size_t line_no, std::size_t begin,
                         std::size_t end, const char* what) {
    const std::string text = trim(columns(line, begin, end));
    double out = 0;
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
    if (text.empty() || ec != std::errc{} || p != text.data() + text.size())
        throw ParseError("malformed " + std::string(what) + " field '" + text + "' at line " +
                             std::to_string(line_no) + ", columns " + std::to_string(begin) +
                             "-" + std::to_string(end),
                         line_no, begin, end);
    return out;
}

inline int int_field(std::string_view line, std::size_t line_no, std::size_t begin,
                     std::size_t end, const char* what) {
    const std::string text = trim(columns(line, begin, end));
    int out = 0;
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
    if (text.empty() || ec != std::errc{} || p != text.data() + text.size())
        throw ParseError("malformed " + std::string(what) + " field '" + text + "' at line " +
                             std::to_string(line_no) + ", columns " + std::to_string(begin) +
                             "-" + std::to_string(end),
                         line_no, begin, end);
    return out;
}

inline std::string upper(std::string s) {
    for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
}

/// Element from columns 77-78 when present, otherwise from the atom-name
/// field: a name starting in column 13 signals a two-letter element.
inline std::string resolve_element(std::string_view line, const std::string& name) {
    std::string elem = upper(trim(columns(line, 77, 78)));
    if (!elem.empty()) return elem;
    std::string letters;
    for (char c : name)
        if (std::isalpha(static_cast<unsigned char>(c))) letters.push_back(c);
    if (letters.empty()) return letters;
    const bool starts_at_13 = line.size() >= 13 && line[12] != ' ' &&
                              std::isalpha(static_cast<unsigned char>(line[12]));
    if (starts_at_13 && letters.size() >= 2 &&
        !std::isdigit(static_cast<unsigned char>(name.front())))
        return upper(letters.substr(0, 2));
    return upper(letters.substr(0, 1));
}

}  // namespace pdbdetail

/// Parses fixed-column PDB text: ATOM/HETATM records, the REMARK 2
/// resolution, HEADER id, and CONECT pairs. Keeps the first model only,
/// resolves alternate locations by highest occupancy (ties by file order)
/// and drops hydrogens.
inline ProteinStructure parse_pdb(const std::string& text) {
    if (text.empty()) throw ParseError("empty input");
    ProteinStructure out;
    std::vector<AtomRecord> raw;
    bool past_first_model = false;
    std::size_t line_no = 0;
    std::istringstream stream(text);
    std::string line;
    while (std::getline(stream, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::string_view record = pdbdetail::columns(line, 1, 6);
        if (record.substr(0, 6) == "HEADER") {
            const std::string id = pdbdetail::trim(pdbdetail::columns(line, 63, 66));
            if (id.size() == 4) out.id = pdbdetail::upper(id);
        } else if (record.substr(0, 6) == "REMARK" && !out.resolution) {
            if (pdbdetail::trim(pdbdetail::columns(line, 7, 10)) == "2" &&
                line.find("RESOLUTION.") != std::string::npos) {
                const std::size_t pos = line.find("RESOLUTION.") + 11;
                std::string rest = line.substr(pos);
                const std::size_t ang = rest.find("ANGSTROM");
                if (ang != std::string::npos) {
                    rest = pdbdetail::trim(rest.substr(0, ang));
                    double value = 0;
                    auto [p, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), value);
                    if (ec == std::errc{} && p == rest.data() + rest.size())
                        out.resolution = value;
                }
            }
        } else if (record == "ENDMDL") {
            past_first_model = true;
        } else if (record.substr(0, 6) == "CONECT") {
            const int base = pdbdetail::int_field(line, line_no, 7, 11, "CONECT serial");
            for (std::size_t begin : {std::size_t{12}, std::size_t{17}, std::size_t{22},
                                      std::size_t{27}}) {
                const std::string text2 =
                    pdbdetail::trim(pdbdetail::columns(line, begin, begin + 4));
                if (text2.empty()) continue;
                int other = 0;
                auto [p, ec] =
                    std::from_chars(text2.data(), text2.data() + text2.size(), other);
                if (ec != std::errc{} || p != text2.data() + text2.size()) continue;
                out.conect_pairs.emplace_back(base, other);
            }
        } else if ((record == "ATOM  " || record == "HETATM") && !past_first_model) {
            AtomRecord a;
            a.is_hetero = record == "HETATM";
            a.serial = pdbdetail::int_field(line, line_no, 7, 11, "serial");
            a.name = pdbdetail::trim(pdbdetail::columns(line, 13, 16));
            const auto alt = pdbdetail::columns(line, 17, 17);
            a.alt_loc = alt.empty() ? ' ' : alt[0];
            a.residue_name = pdbdetail::trim(pdbdetail::columns(line, 18, 20));
            const auto chain = pdbdetail::columns(line, 22, 22);
            a.chain_id = chain.empty() ? ' ' : chain[0];
            a.residue_seq = pdbdetail::int_field(line, line_no, 23, 26, "residue sequence");
            const auto icode = pdbdetail::columns(line, 27, 27);
            a.insertion_code = icode.empty() ? ' ' : icode[0];
            a.position[0] = pdbdetail::real_field(line, line_no, 31, 38, "x coordinate");
            a.position[1] = pdbdetail::real_field(line, line_no, 39, 46, "y coordinate");
            a.position[2] = pdbdetail::real_field(line, line_no, 47, 54, "z coordinate");
            a.occupancy = pdbdetail::real_field(line, line_no, 55, 60, "occupancy");
            a.occupancy = std::clamp(a.occupancy, 0.0, 1.0);
            a.b_factor = pdbdetail::real_field(line, line_no, 61, 66, "B-factor");
            a.element = pdbdetail::resolve_element(line, a.name);
            a.raw_line = line;
            if (!std::isfinite(a.position[0]) || !std::isfinite(a.position[1]) ||
                !std::isfinite(a.position[2]) || !std::isfinite(a.b_factor))
                throw ParseError("non-finite numeric field at line " + std::to_string(line_no),
                                 line_no, 31, 66);
            if (a.element == "H" || a.element == "D") continue;
            raw.push_back(std::move(a));
        }
    }

    // Alternate locations: keep the highest occupancy per atom identity,
    // first record winning ties; preserve file order of the winners.
    std::map<std::tuple<char, int, char, std::string>, std::size_t> chosen;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const auto key = std::make_tuple(raw[i].chain_id, raw[i].residue_seq,
                                         raw[i].insertion_code, raw[i].name);
        auto it = chosen.find(key);
        if (it == chosen.end())
            chosen.emplace(key, i);
        else if (raw[i].occupancy > raw[it->second].occupancy)
            it->second = i;
    }
    std::vector<bool> keep(raw.size(), false);
    for (const auto& [key, idx] : chosen) keep[idx] = true;
    for (std::size_t i = 0; i < raw.size(); ++i)
        if (keep[i]) out.atoms.push_back(std::move(raw[i]));

    bool any_polymer = false;
    for (const AtomRecord& a : out.atoms) any_polymer = any_polymer || !a.is_hetero;
    if (!any_polymer) throw ParseError("structure contains no ATOM records");
    return out;
}

/// Drops hetero atoms. With include_nonwater, only waters are dropped.
inline ProteinStructure strip_hetero(ProteinStructure s, bool include_nonwater = false) {
    std::vector<AtomRecord> kept;
    kept.reserve(s.atoms.size());
    for (AtomRecord& a : s.atoms) {
        if (a.is_hetero) {
            const bool water =
                a.residue_name == "HOH" || a.residue_name == "WAT" || a.residue_name == "DOD";
            if (water || !include_nonwater) continue;
        }
        kept.push_back(std::move(a));
    }
    s.atoms = std::move(kept);
    return s;
}

/// Dataset admission rule: resolution must be present and strictly below the
/// cutoff, and B-factors must not be degenerate (all zero / constant within
/// the variance floor). Rejection is a value, not an error.
inline FilterResult apply_filter(const ProteinStructure& s, const FilterPolicy& policy) {
    if (!(policy.max_resolution > 0)) throw ContractError("FilterPolicy: max_resolution must be > 0");
    if (!s.resolution)
        return FilterResult::reject(RejectReason::Resolution, "resolution record missing");
    if (*s.resolution >= policy.max_resolution)
        return FilterResult::reject(RejectReason::Resolution,
                                    "resolution " + std::to_string(*s.resolution) +
                                        " A is not below " +
                                        std::to_string(policy.max_resolution) + " A");
    if (s.atoms.empty())
        return FilterResult::reject(RejectReason::ErroneousB, "no atoms after parsing");
    if (policy.reject_zero_b) {
        bool all_zero = true;
        for (const AtomRecord& a : s.atoms) all_zero = all_zero && a.b_factor == 0.0;
        if (all_zero)
            return FilterResult::reject(RejectReason::ErroneousB, "all B-factors are zero");
    }
    if (policy.reject_constant_b) {
        double mean = 0;
        for (const AtomRecord& a : s.atoms) mean += a.b_factor;
        mean /= static_cast<double>(s.atoms.size());
        double var = 0;
        for (const AtomRecord& a : s.atoms)
            var += (a.b_factor - mean) * (a.b_factor - mean);
        var /= static_cast<double>(s.atoms.size());
        if (var < policy.constant_b_variance_floor)
            return FilterResult::reject(RejectReason::ErroneousB,
                                        "B-factor variance " + std::to_string(var) +
                                            " A^4 below the constant-value floor");
    }
    return FilterResult::accept();
}

/// Canonical fixed-column ATOM/HETATM line for records without raw text.
inline std::string format_atom_line(const AtomRecord& a) {
    std::string name4;
    if (a.name.size() >= 4)
        name4 = a.name.substr(0, 4);
    else if (a.element.size() <= 1)
        name4 = " " + a.name;
    else
        name4 = a.name;
    name4.resize(4, ' ');
    std::string res3 = a.residue_name.substr(0, 3);
    res3.resize(3, ' ');
    char buf[96];
    std::snprintf(buf, sizeof buf,
                  "%-6s%5d %-4s%c%3s %c%4d%c   %8.3f%8.3f%8.3f%6.2f%6.2f          %2s",
                  a.is_hetero ? "HETATM" : "ATOM", a.serial, name4.c_str(), a.alt_loc,
                  res3.c_str(), a.chain_id, a.residue_seq, a.insertion_code, a.position[0],
                  a.position[1], a.position[2], a.occupancy, a.b_factor,
                  a.element.substr(0, 2).c_str());
    return std::string(buf);
}

/// Emits the structure with columns 61-66 of every atom line replaced by the
/// prediction (width-6 fixed point, clamped to [0, 999.99]); every other
/// column is byte-identical to the parsed input.
inline std::string write_predictions(const ProteinStructure& s,
                                     const std::vector<double>& predictions) {
    if (predictions.size() != s.atoms.size())
        throw ContractError("write_predictions: " + std::to_string(predictions.size()) +
                            " predictions for " + std::to_string(s.atoms.size()) + " atoms");
    std::string out;
    if (s.id.size() == 4) {
        out += "HEADER    ";
        out.resize(62, ' ');
        out += s.id + "\n";
    }
    if (s.resolution) {
        char buf[80];
        std::snprintf(buf, sizeof buf, "REMARK   2 RESOLUTION. %7.2f ANGSTROMS.",
                      *s.resolution);
        out += buf;
        out += "\n";
    }
    for (std::size_t i = 0; i < s.atoms.size(); ++i) {
        std::string line =
            s.atoms[i].raw_line.empty() ? format_atom_line(s.atoms[i]) : s.atoms[i].raw_line;
        if (line.size() < 66) line.resize(66, ' ');
        const double value = std::clamp(predictions[i], 0.0, 999.99);
        char field[8];
        std::snprintf(field, sizeof field, "%6.2f", value);
        line.replace(60, 6, field, 6);
        out += line;
        out += "\n";
    }
    out += "END\n";
    return out;
}

}  // namespace atomflex
