#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "bonds.hpp"
#include "config.hpp"
#include "featurize.hpp"
#include "fetch.hpp"
#include "graph_io.hpp"

namespace atomflex {

namespace pipelinedetail {

inline std::uint64_t fnv1a64(const std::string& data) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string content_hash(const std::string& data) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(data)));
    return std::string(buf);
}

/// Runs body(0..n-1) on a bounded pool. body must not throw; per-item errors
/// are the caller's to collect.
inline void parallel_for(std::size_t n, std::size_t workers,
                         const std::function<void(std::size_t)>& body) {
    if (n == 0) return;
    std::size_t k = workers ? workers : std::thread::hardware_concurrency();
    if (k == 0) k = 1;
    k = std::min(k, n);
    if (k <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(k);
    for (std::size_t t = 0; t < k; ++t)
        pool.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) body(i);
        });
    for (auto& th : pool) th.join();
}

}  // namespace pipelinedetail

/// Stages a structure moves through. FilteredOut and Featurized are terminal;
/// a content change (new upstream file) resets the entry to Fetched.
enum class CorpusStatus { Fetched, Parsed, FilteredOut, Featurized };

inline const char* corpus_status_name(CorpusStatus s) {
    switch (s) {
        case CorpusStatus::Fetched: return "fetched";
        case CorpusStatus::Parsed: return "parsed";
        case CorpusStatus::FilteredOut: return "filtered_out";
        case CorpusStatus::Featurized: return "featurized";
    }
    throw ContractError("corpus_status_name: bad status");
}

inline CorpusStatus corpus_status_from_name(const std::string& name) {
    if (name == "fetched") return CorpusStatus::Fetched;
    if (name == "parsed") return CorpusStatus::Parsed;
    if (name == "filtered_out") return CorpusStatus::FilteredOut;
    if (name == "featurized") return CorpusStatus::Featurized;
    throw SchemaError("manifest: unknown status '" + name + "'", "status");
}

struct CorpusEntry {
    std::string code;
    CorpusStatus status = CorpusStatus::Fetched;
    std::string structure_hash;  // of the raw PDB text
    std::string graph_hash;      // of the encoded graph, once featurized
    std::string reject_reason;   // set iff FilteredOut
};

/// Per-code ledger of what the pipeline has done. Statuses only move forward:
/// fetched -> parsed -> featurized, or fetched -> filtered_out. A changed
/// structure hash restarts the entry. The hetero policy is corpus-wide and
/// pinned at first ingest so featurization always re-reads the same atoms the
/// filter saw.
class CorpusManifest {
public:
    bool include_hetero = false;

    bool contains(const std::string& code) const { return entries_.count(code) != 0; }

    const CorpusEntry& at(const std::string& code) const {
        auto it = entries_.find(code);
        if (it == entries_.end())
            throw ContractError("manifest: no entry for " + code);
        return it->second;
    }

    std::size_t size() const { return entries_.size(); }

    /// Records a fetched structure. Returns the entry's status afterwards:
    /// Fetched means downstream stages still owe work, anything else means
    /// the content is unchanged and earlier decisions stand.
    CorpusStatus mark_fetched(const std::string& code, const std::string& structure_hash) {
        auto it = entries_.find(code);
        if (it == entries_.end() || it->second.structure_hash != structure_hash) {
            entries_[code] = CorpusEntry{code, CorpusStatus::Fetched, structure_hash, {}, {}};
            return CorpusStatus::Fetched;
        }
        return it->second.status;
    }

    void mark_parsed(const std::string& code) {
        CorpusEntry& e = mutable_entry(code);
        if (e.status == CorpusStatus::FilteredOut)
            throw ContractError("manifest: " + code +
                                " was filtered out; it cannot become parsed without new content");
        if (e.status == CorpusStatus::Fetched) e.status = CorpusStatus::Parsed;
    }

    void mark_filtered_out(const std::string& code, const std::string& reason) {
        CorpusEntry& e = mutable_entry(code);
        if (e.status == CorpusStatus::Parsed || e.status == CorpusStatus::Featurized)
            throw ContractError("manifest: " + code +
                                " already passed the filter; rejection would move it backwards");
        e.status = CorpusStatus::FilteredOut;
        e.reject_reason = reason;
    }

    void mark_featurized(const std::string& code, const std::string& graph_hash) {
        CorpusEntry& e = mutable_entry(code);
        if (e.status == CorpusStatus::Fetched)
            throw ContractError("manifest: " + code + " has not been parsed yet");
        if (e.status == CorpusStatus::FilteredOut)
            throw ContractError("manifest: " + code + " was filtered out; nothing to featurize");
        e.status = CorpusStatus::Featurized;
        e.graph_hash = graph_hash;
    }

    /// Codes currently at the given status, sorted.
    std::vector<std::string> codes_with_status(CorpusStatus s) const {
        std::vector<std::string> out;
        for (const auto& [code, e] : entries_)
            if (e.status == s) out.push_back(code);
        return out;
    }

    std::map<CorpusStatus, std::size_t> counts() const {
        std::map<CorpusStatus, std::size_t> out;
        for (const auto& [code, e] : entries_) ++out[e.status];
        return out;
    }

    const std::map<std::string, CorpusEntry>& entries() const { return entries_; }

    json to_json() const {
        json items = json::array();
        for (const auto& [code, e] : entries_) {
            json item{{"code", e.code},
                      {"status", corpus_status_name(e.status)},
                      {"structure_hash", e.structure_hash}};
            if (!e.graph_hash.empty()) item["graph_hash"] = e.graph_hash;
            if (e.status == CorpusStatus::FilteredOut) item["reject_reason"] = e.reject_reason;
            items.push_back(std::move(item));
        }
        return json{{"include_hetero", include_hetero}, {"entries", std::move(items)}};
    }

    static CorpusManifest from_json(const json& j) {
        schemadetail::require_keys(j, {"include_hetero", "entries"}, "manifest");
        CorpusManifest m;
        m.include_hetero =
            schemadetail::get_field<bool>(j, "include_hetero", false, "manifest");
        if (!j.contains("entries") || !j.at("entries").is_array())
            throw SchemaError("manifest: 'entries' must be an array", "entries");
        for (const json& item : j.at("entries")) {
            schemadetail::require_keys(
                item, {"code", "status", "structure_hash", "graph_hash", "reject_reason"},
                "manifest entry");
            CorpusEntry e;
            e.code = schemadetail::get_field<std::string>(item, "code", {}, "manifest entry");
            if (e.code.empty())
                throw SchemaError("manifest entry: 'code' is required", "code");
            e.status = corpus_status_from_name(
                schemadetail::get_field<std::string>(item, "status", {}, "manifest entry"));
            e.structure_hash =
                schemadetail::get_field<std::string>(item, "structure_hash", {}, "manifest entry");
            e.graph_hash =
                schemadetail::get_field<std::string>(item, "graph_hash", {}, "manifest entry");
            e.reject_reason =
                schemadetail::get_field<std::string>(item, "reject_reason", {}, "manifest entry");
            if (m.entries_.count(e.code))
                throw SchemaError("manifest: duplicate entry for " + e.code, "code");
            m.entries_[e.code] = std::move(e);
        }
        return m;
    }

    void save(const std::filesystem::path& path) const {
        iodetail::write_file_atomic(path, to_json().dump(2) + "\n");
    }

    static CorpusManifest load(const std::filesystem::path& path) {
        json j;
        try {
            j = json::parse(iodetail::read_file(path));
        } catch (const json::parse_error& e) {
            throw ParseError("manifest: " + path.string() + " is not valid JSON: " + e.what());
        }
        return from_json(j);
    }

private:
    CorpusEntry& mutable_entry(const std::string& code) {
        auto it = entries_.find(code);
        if (it == entries_.end())
            throw ContractError("manifest: no entry for " + code + "; fetch it first");
        return it->second;
    }

    std::map<std::string, CorpusEntry> entries_;
};

inline std::filesystem::path manifest_path(const PipelineConfig& cfg) {
    return cfg.paths.graphs / "manifest.json";
}

inline std::filesystem::path rejects_path(const PipelineConfig& cfg) {
    return cfg.paths.graphs / "rejects.jsonl";
}

inline std::filesystem::path graph_path(const PipelineConfig& cfg, const std::string& code) {
    return cfg.paths.graphs / (code + ".afgr");
}

inline CorpusManifest load_or_create_manifest(const PipelineConfig& cfg) {
    const auto path = manifest_path(cfg);
    if (std::filesystem::exists(path)) return CorpusManifest::load(path);
    return CorpusManifest{};
}

/// Reads a code list: one code per line, '#' starts a comment, blanks are
/// skipped. Codes are upper-cased; duplicates keep their first position.
inline std::vector<std::string> read_code_list(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ContractError("read_code_list: cannot open " + path.string());
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::string token = pdbdetail::trim(line);
        if (token.empty()) continue;
        token = fetchdetail::upper(token);
        if (std::find(out.begin(), out.end(), token) == out.end()) out.push_back(token);
    }
    return out;
}

struct StageFailure {
    std::string code;
    std::string message;
};

struct IngestSummary {
    std::size_t accepted = 0;   // newly parsed this run
    std::size_t rejected = 0;   // newly filtered out this run
    std::size_t unchanged = 0;  // content hash matched an earlier decision
    std::vector<StageFailure> failures;

    bool ok() const { return failures.empty(); }
};

namespace pipelinedetail {

inline ProteinStructure screened_structure(const std::string& text, const std::string& code,
                                           bool include_hetero) {
    ProteinStructure s = parse_pdb(text);
    s = strip_hetero(std::move(s), include_hetero);
    s.id = code;
    return s;
}

inline std::string rejection_reason(const FilterResult& fr) {
    std::string reason = reject_reason_name(fr.reason);
    if (!fr.detail.empty()) reason += ": " + fr.detail;
    return reason;
}

inline void write_rejects_log(const PipelineConfig& cfg, const CorpusManifest& manifest) {
    std::string out;
    for (const auto& [code, e] : manifest.entries()) {
        if (e.status != CorpusStatus::FilteredOut) continue;
        out += json{{"code", code}, {"reason", e.reject_reason}}.dump() + "\n";
    }
    iodetail::write_file_atomic(rejects_path(cfg), out);
}

inline void sort_failures(std::vector<StageFailure>& failures) {
    std::sort(failures.begin(), failures.end(),
              [](const StageFailure& a, const StageFailure& b) { return a.code < b.code; });
}

}  // namespace pipelinedetail

/// Fetch + parse + filter for every code. Failures are collected per code,
/// never fatal for the batch. Re-running with unchanged upstream content is a
/// no-op thanks to the structure hashes. The manifest and the rejection log
/// are rewritten at the end.
inline IngestSummary ingest_codes(const std::vector<std::string>& codes,
                                  const PipelineConfig& cfg, CorpusManifest& manifest,
                                  const FetchOptions& fetch = {}, bool include_hetero = false,
                                  std::size_t workers = 0) {
    if (manifest.size() > 0 && manifest.include_hetero != include_hetero)
        throw ContractError(
            "ingest: the corpus was built with a different hetero policy; "
            "remove the graphs directory to change it");
    manifest.include_hetero = include_hetero;

    std::vector<std::string> canon;
    for (const std::string& c : codes) {
        std::string u = fetchdetail::upper(c);
        if (std::find(canon.begin(), canon.end(), u) == canon.end()) canon.push_back(std::move(u));
    }

    IngestSummary summary;
    std::mutex mu;
    pipelinedetail::parallel_for(canon.size(), workers, [&](std::size_t i) {
        const std::string& code = canon[i];
        try {
            const std::string text = fetch_structure(code, cfg.paths.cache, fetch);
            const std::string hash = pipelinedetail::content_hash(text);
            {
                std::lock_guard<std::mutex> lock(mu);
                if (manifest.mark_fetched(code, hash) != CorpusStatus::Fetched) {
                    ++summary.unchanged;
                    return;
                }
            }
            const ProteinStructure s =
                pipelinedetail::screened_structure(text, code, include_hetero);
            const FilterResult fr = apply_filter(s, cfg.filter);
            std::lock_guard<std::mutex> lock(mu);
            if (fr.accepted) {
                manifest.mark_parsed(code);
                ++summary.accepted;
            } else {
                manifest.mark_filtered_out(code, pipelinedetail::rejection_reason(fr));
                ++summary.rejected;
            }
        } catch (const std::exception& e) {
            std::lock_guard<std::mutex> lock(mu);
            summary.failures.push_back({code, e.what()});
        }
    });
    pipelinedetail::sort_failures(summary.failures);

    std::filesystem::create_directories(cfg.paths.graphs);
    manifest.save(manifest_path(cfg));
    pipelinedetail::write_rejects_log(cfg, manifest);
    return summary;
}

struct FeaturizeSummary {
    std::size_t built = 0;
    std::size_t unchanged = 0;  // graph on disk already matches its hash
    std::vector<StageFailure> failures;

    bool ok() const { return failures.empty(); }
};

/// Builds and stores a graph for every parsed structure. Already-featurized
/// entries whose stored graph still matches the manifest hash are skipped.
inline FeaturizeSummary featurize_corpus(const PipelineConfig& cfg, CorpusManifest& manifest,
                                         std::size_t workers = 0) {
    std::vector<std::string> todo = manifest.codes_with_status(CorpusStatus::Parsed);
    for (const std::string& code : manifest.codes_with_status(CorpusStatus::Featurized))
        todo.push_back(code);
    std::sort(todo.begin(), todo.end());

    FeaturizeSummary summary;
    std::mutex mu;
    pipelinedetail::parallel_for(todo.size(), workers, [&](std::size_t i) {
        const std::string& code = todo[i];
        try {
            bool fresh = false;
            {
                std::lock_guard<std::mutex> lock(mu);
                const CorpusEntry& e = manifest.at(code);
                fresh = e.status == CorpusStatus::Featurized && !e.graph_hash.empty() &&
                        std::filesystem::exists(graph_path(cfg, code)) &&
                        pipelinedetail::content_hash(iodetail::read_file(graph_path(cfg, code))) ==
                            e.graph_hash;
            }
            if (fresh) {
                std::lock_guard<std::mutex> lock(mu);
                ++summary.unchanged;
                return;
            }
            const auto cached = cfg.paths.cache / (code + ".pdb");
            if (!std::filesystem::exists(cached))
                throw ContractError("no cached structure for " + code +
                                    "; run the ingest command first");
            const ProteinStructure s = pipelinedetail::screened_structure(
                iodetail::read_file(cached), code, manifest.include_hetero);
            const AtomGraph g = build_graph(s, infer_bonds(s), cfg.features);
            const std::string data = encode_graph(g);
            iodetail::write_file_atomic(graph_path(cfg, code), data);
            std::lock_guard<std::mutex> lock(mu);
            manifest.mark_featurized(code, pipelinedetail::content_hash(data));
            ++summary.built;
        } catch (const std::exception& e) {
            std::lock_guard<std::mutex> lock(mu);
            summary.failures.push_back({code, e.what()});
        }
    });
    pipelinedetail::sort_failures(summary.failures);

    std::filesystem::create_directories(cfg.paths.graphs);
    manifest.save(manifest_path(cfg));
    return summary;
}

/// Loads the stored graphs for the given codes. Every code must be
/// featurized; anything else is a contract error naming the prerequisite.
inline std::vector<AtomGraph> load_featurized_graphs(const PipelineConfig& cfg,
                                                     const CorpusManifest& manifest,
                                                     const std::vector<std::string>& codes) {
    std::vector<AtomGraph> out;
    out.reserve(codes.size());
    for (const std::string& raw : codes) {
        const std::string code = fetchdetail::upper(raw);
        if (!manifest.contains(code))
            throw ContractError(code + " is not in the corpus; run the ingest command first");
        const CorpusEntry& e = manifest.at(code);
        if (e.status == CorpusStatus::FilteredOut)
            throw ContractError(code + " was filtered out of the corpus (" + e.reject_reason +
                                ")");
        if (e.status != CorpusStatus::Featurized)
            throw ContractError(code + " has no stored graph; run the featurize command first");
        out.push_back(load_graph(graph_path(cfg, code)));
    }
    return out;
}

}  // namespace atomflex
