#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "tbev/core/error.hpp"
#include "tbev/core/param.hpp"

// Binary IO helpers plus the "TBC1" checkpoint format: a named-parameter
// index table followed by little-endian IEEE-754 float32 blobs.
//
//   magic "TBC1" | u32 version=1 | u32 param_count
//   per param: u16 name_len | name | u32 ndim | u32 dims[ndim] | u64 offset
//   blob section: float32 data per param at its offset (bytes from section
//   start), in index order.

namespace tbev {

namespace bin {

inline void put_bytes(std::vector<std::uint8_t>& buf, const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf.insert(buf.end(), b, b + n);
}

inline void put_u16(std::vector<std::uint8_t>& buf, std::uint16_t v) {
    for (int i = 0; i < 2; ++i) buf.push_back(std::uint8_t(v >> (8 * i)));
}
inline void put_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(std::uint8_t(v >> (8 * i)));
}
inline void put_u64(std::vector<std::uint8_t>& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(std::uint8_t(v >> (8 * i)));
}
inline void put_f32(std::vector<std::uint8_t>& buf, float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32(buf, u);
}

// Cursor-based reader with bounds checking.
struct Reader {
    const std::uint8_t* p;
    std::size_t n;
    std::size_t pos = 0;

    void need(std::size_t k, const char* what) const {
        if (pos + k > n) throw DataError(std::string("truncated data while reading ") + what);
    }
    std::uint16_t u16(const char* what = "u16") {
        need(2, what);
        std::uint16_t v = 0;
        for (int i = 0; i < 2; ++i) v |= std::uint16_t(p[pos + i]) << (8 * i);
        pos += 2;
        return v;
    }
    std::uint32_t u32(const char* what = "u32") {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(p[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64(const char* what = "u64") {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    float f32(const char* what = "f32") {
        const std::uint32_t u = u32(what);
        float v;
        std::memcpy(&v, &u, 4);
        return v;
    }
    std::string str(std::size_t len, const char* what = "string") {
        need(len, what);
        std::string s(reinterpret_cast<const char*>(p + pos), len);
        pos += len;
        return s;
    }
};

}  // namespace bin

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    in.seekg(0, std::ios::end);
    const auto sz = in.tellg();
    in.seekg(0);
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(sz));
    in.read(reinterpret_cast<char*>(buf.data()), sz);
    if (!in) throw IoError("short read on " + path.string());
    return buf;
}

// Writes to a sibling temp file and renames into place.
inline void atomic_write_file(const std::filesystem::path& path, const void* data, std::size_t n) {
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot create " + tmp.string());
        out.write(static_cast<const char*>(data), std::streamsize(n));
        if (!out) throw IoError("short write on " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline void atomic_write_file(const std::filesystem::path& path, const std::string& text) {
    atomic_write_file(path, text.data(), text.size());
}

inline void atomic_write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& buf) {
    atomic_write_file(path, buf.data(), buf.size());
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParamList<T>& params) {
    std::vector<std::uint8_t> head;
    bin::put_bytes(head, "TBC1", 4);
    bin::put_u32(head, 1);
    bin::put_u32(head, std::uint32_t(params.size()));
    std::vector<std::uint8_t> blobs;
    for (const auto& p : params) {
        bin::put_u16(head, std::uint16_t(p.name.size()));
        bin::put_bytes(head, p.name.data(), p.name.size());
        bin::put_u32(head, std::uint32_t(p.tensor.ndim()));
        for (int d : p.tensor.shape()) bin::put_u32(head, std::uint32_t(d));
        bin::put_u64(head, blobs.size());
        for (std::size_t i = 0; i < p.tensor.numel(); ++i) bin::put_f32(blobs, float(p.tensor.at(i)));
    }
    head.insert(head.end(), blobs.begin(), blobs.end());
    atomic_write_file(path, head);
}

struct CheckpointEntry {
    Shape shape;
    std::vector<float> data;
};

inline std::map<std::string, CheckpointEntry> load_checkpoint(const std::filesystem::path& path) {
    const auto buf = read_file_bytes(path);
    bin::Reader r{buf.data(), buf.size()};
    if (r.str(4, "magic") != "TBC1") throw DataError("bad checkpoint magic in " + path.string());
    const auto version = r.u32("version");
    if (version != 1) throw DataError("unsupported checkpoint version " + std::to_string(version));
    const auto count = r.u32("param count");
    struct Ent {
        std::string name;
        Shape shape;
        std::uint64_t offset;
    };
    std::vector<Ent> ents(count);
    for (auto& e : ents) {
        e.name = r.str(r.u16("name length"), "name");
        const auto nd = r.u32("ndim");
        e.shape.resize(nd);
        for (auto& d : e.shape) d = int(r.u32("dim"));
        e.offset = r.u64("offset");
    }
    const std::size_t blob_start = r.pos;
    std::map<std::string, CheckpointEntry> out;
    for (const auto& e : ents) {
        bin::Reader br{buf.data(), buf.size(), blob_start + e.offset};
        CheckpointEntry ce;
        ce.shape = e.shape;
        ce.data.resize(shape_numel(e.shape));
        for (auto& v : ce.data) v = br.f32("blob");
        if (!out.emplace(e.name, std::move(ce)).second)
            throw DataError("duplicate parameter name " + e.name + " in " + path.string());
    }
    return out;
}

// Copies checkpoint values into an existing parameter list by name.
template <typename T>
void load_into(const std::filesystem::path& path, ParamList<T>& params) {
    const auto entries = load_checkpoint(path);
    for (auto& p : params) {
        auto it = entries.find(p.name);
        if (it == entries.end()) throw DataError("checkpoint missing parameter " + p.name);
        if (it->second.shape != p.tensor.shape())
            throw DataError("checkpoint shape mismatch for " + p.name + ": file " +
                            shape_str(it->second.shape) + " vs model " + shape_str(p.tensor.shape()));
        for (std::size_t i = 0; i < p.tensor.numel(); ++i) p.tensor.at(i) = T(it->second.data[i]);
    }
}

inline std::uint64_t file_digest(const std::filesystem::path& path) {
    const auto buf = read_file_bytes(path);
    return fnv1a64(buf.data(), buf.size());
}

}  // namespace tbev
