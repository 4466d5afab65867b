#pragma once

#include <unistd.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "atomflex/errors.hpp"
#include "atomflex/featurize.hpp"

namespace atomflex {

namespace iodetail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float v) {
    put_u32(out, std::bit_cast<std::uint32_t>(v));
}

class Reader {
public:
    Reader(const std::string& data, std::string origin)
        : data_(data), origin_(std::move(origin)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i]))
                 << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i]))
                 << (8 * i);
        pos_ += 8;
        return v;
    }

    float f32() { return std::bit_cast<float>(u32()); }

    std::string bytes(std::size_t n) {
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == data_.size(); }

private:
    void need(std::size_t n) {
        if (pos_ + n > data_.size())
            throw ParseError(origin_ + ": truncated at byte " + std::to_string(pos_));
    }
    const std::string& data_;
    std::string origin_;
    std::size_t pos_ = 0;
};

inline void put_matrix(std::string& out, const Tensor& t) {
    for (Real v : t.values()) put_f32(out, static_cast<float>(v));
}

inline Tensor read_matrix(Reader& r, std::size_t rows, std::size_t cols) {
    Tensor t(rows, cols);
    for (auto& v : t.values()) v = static_cast<Real>(r.f32());
    return t;
}

inline void write_file_atomic(const std::filesystem::path& path, const std::string& data) {
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp." + std::to_string(::getpid());
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw TransportError("cannot open " + tmp.string() + " for writing");
        f.write(data.data(), static_cast<std::streamsize>(data.size()));
        if (!f.good()) throw TransportError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw TransportError("cannot open " + path.string());
    std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return data;
}

}  // namespace iodetail

inline constexpr char kGraphMagic[4] = {'A', 'F', 'G', 'R'};
inline constexpr std::uint32_t kGraphVersion = 1;

/// One protein graph per file: magic, version, N/M/C/F header, then the five
/// matrices as little-endian 32-bit floats in row-major order (edge_index as
/// a 2 x M block), then the id. Indices are exact in 32-bit floats because
/// N and M are capped below 2^24.
inline std::string encode_graph(const AtomGraph& g) {
    const std::size_t n = g.num_nodes(), m = g.num_edges();
    if (n >= (1u << 24) || m >= (1u << 24))
        throw ContractError("encode_graph: graph too large for exact 32-bit-float indices");
    std::string out;
    out.append(kGraphMagic, 4);
    iodetail::put_u32(out, kGraphVersion);
    iodetail::put_u64(out, n);
    iodetail::put_u64(out, m);
    iodetail::put_u64(out, g.node_features.cols());
    iodetail::put_u64(out, g.edge_features.cols());
    iodetail::put_matrix(out, g.node_features);
    iodetail::put_matrix(out, g.coords);
    for (std::int32_t v : g.senders) iodetail::put_f32(out, static_cast<float>(v));
    for (std::int32_t v : g.receivers) iodetail::put_f32(out, static_cast<float>(v));
    iodetail::put_matrix(out, g.edge_features);
    iodetail::put_matrix(out, g.targets);
    iodetail::put_u32(out, static_cast<std::uint32_t>(g.protein_id.size()));
    out += g.protein_id;
    return out;
}

inline AtomGraph decode_graph(const std::string& data, const std::string& origin) {
    iodetail::Reader r(data, origin);
    if (r.bytes(4) != std::string(kGraphMagic, 4))
        throw ParseError(origin + ": not a graph file (bad magic)");
    const std::uint32_t version = r.u32();
    if (version != kGraphVersion)
        throw ParseError(origin + ": unsupported graph version " + std::to_string(version));
    const std::size_t n = r.u64(), m = r.u64(), c = r.u64(), f = r.u64();
    AtomGraph g;
    g.node_features = iodetail::read_matrix(r, n, c);
    g.coords = iodetail::read_matrix(r, n, 3);
    g.senders.resize(m);
    g.receivers.resize(m);
    for (auto& v : g.senders) v = static_cast<std::int32_t>(r.f32());
    for (auto& v : g.receivers) v = static_cast<std::int32_t>(r.f32());
    g.edge_features = iodetail::read_matrix(r, m, f);
    g.targets = iodetail::read_matrix(r, n, 1);
    g.protein_id = r.bytes(r.u32());
    if (!r.done()) throw ParseError(origin + ": trailing bytes");
    return g;
}

inline void save_graph(const AtomGraph& g, const std::filesystem::path& path) {
    iodetail::write_file_atomic(path, encode_graph(g));
}

inline AtomGraph load_graph(const std::filesystem::path& path) {
    return decode_graph(iodetail::read_file(path), path.filename().string());
}

}  // namespace atomflex
