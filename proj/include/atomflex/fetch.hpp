#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>

#include <httplib.h>

#include "errors.hpp"

namespace atomflex {

/// Where and how to download structure files. The default endpoint is the
/// public archive's file service; tests point base_url at a local server.
struct FetchOptions {
    std::string base_url = "https://files.rcsb.org/download";
    std::size_t max_attempts = 3;
    int backoff_initial_ms = 250;  // doubles after each failed attempt
    int timeout_seconds = 30;
};

/// One digit followed by three alphanumerics, the 4-character structure code.
inline bool valid_structure_code(const std::string& code) {
    if (code.size() != 4) return false;
    if (code[0] < '0' || code[0] > '9') return false;
    for (std::size_t i = 1; i < 4; ++i) {
        const char c = code[i];
        const bool ok = (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
        if (!ok) return false;
    }
    return true;
}

namespace fetchdetail {

inline std::string upper(std::string s) {
    for (char& c : s)
        if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
    return s;
}

/// "http://host:port/some/prefix" -> {"http://host:port", "/some/prefix"}
inline std::pair<std::string, std::string> split_url(const std::string& url) {
    const std::size_t scheme = url.find("://");
    if (scheme == std::string::npos)
        throw ContractError("fetch_structure: base_url '" + url + "' has no scheme");
    const std::size_t path = url.find('/', scheme + 3);
    if (path == std::string::npos) return {url, ""};
    return {url.substr(0, path), url.substr(path)};
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ContractError("fetch_structure: cannot read cache entry " + p.string());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

/// Write-then-rename so concurrent fetchers of the same code never observe a
/// half-written cache entry.
inline void write_atomically(const std::filesystem::path& final_path, const std::string& body) {
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    std::filesystem::path tmp = final_path;
    tmp += ".tmp" + std::to_string(static_cast<std::uint64_t>(stamp));
    {
        std::ofstream out(tmp, std::ios::binary);
        out << body;
        if (!out) {
            std::filesystem::remove(tmp);
            throw ContractError("fetch_structure: cannot write cache entry " +
                                final_path.string());
        }
    }
    std::filesystem::rename(tmp, final_path);
}

}  // namespace fetchdetail

/// Read-through cache in front of the archive: a cached `<CODE>.pdb` is
/// returned without touching the network; otherwise the file is downloaded
/// (bounded retries with exponential backoff), cached atomically, and
/// returned. A 404 from the service is NotFoundError; exhausted retries are
/// TransportError. Both name the code.
inline std::string fetch_structure(const std::string& code,
                                   const std::filesystem::path& cache_dir,
                                   const FetchOptions& opts = {}) {
    if (!valid_structure_code(code))
        throw ContractError("fetch_structure: '" + code +
                            "' is not a structure code (digit + 3 alphanumerics)");
    const std::string canon = fetchdetail::upper(code);
    const std::filesystem::path entry = cache_dir / (canon + ".pdb");
    if (std::filesystem::exists(entry)) return fetchdetail::read_file(entry);

    const auto [origin, prefix] = fetchdetail::split_url(opts.base_url);
    const std::string path = prefix + "/" + canon + ".pdb";
    std::string last_error = "no attempts made";
    int backoff_ms = opts.backoff_initial_ms;
    for (std::size_t attempt = 1; attempt <= opts.max_attempts; ++attempt) {
        if (attempt > 1) {
            std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms));
            backoff_ms *= 2;
        }
        httplib::Client client(origin);
        client.set_connection_timeout(opts.timeout_seconds, 0);
        client.set_read_timeout(opts.timeout_seconds, 0);
        httplib::Result res = client.Get(path);
        if (!res) {
            last_error = httplib::to_string(res.error());
            continue;
        }
        if (res->status == 404)
            throw NotFoundError("fetch_structure: " + canon + " does not exist upstream (404)");
        if (res->status != 200) {
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        std::filesystem::create_directories(cache_dir);
        fetchdetail::write_atomically(entry, res->body);
        return res->body;
    }
    throw TransportError("fetch_structure: " + canon + " failed after " +
                         std::to_string(opts.max_attempts) + " attempts (" + last_error + ")");
}

}  // namespace atomflex
