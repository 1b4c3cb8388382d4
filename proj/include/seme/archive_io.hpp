#pragma once

// Archive file layout (bit-exact):
//   bytes 0..7    little-endian u64 manifest length N
//   bytes 8..8+N  UTF-8 JSON: tensor name -> {"dtype":"F32","shape":[...],
//                 "data_offsets":[begin,end]}, plus an optional
//                 "__metadata__" string map
//   rest          concatenated raw little-endian f32 buffers; offsets are
//                 relative to the end of the manifest, contiguous and
//                 non-overlapping
// Unknown dtypes are rejected on read.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "seme/tensor.hpp"

namespace seme {

namespace detail {

inline void encode_u64_le(std::uint64_t v, unsigned char out[8]) {
    for (int i = 0; i < 8; ++i) out[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
}

inline std::uint64_t decode_u64_le(const unsigned char in[8]) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[i]) << (8 * i);
    return v;
}

inline void f32_buffer_to_le_bytes(const std::vector<float>& src, std::vector<char>& out) {
    out.resize(src.size() * 4);
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(out.data(), src.data(), out.size());
    } else {
        for (std::size_t i = 0; i < src.size(); ++i) {
            std::uint32_t bits;
            std::memcpy(&bits, &src[i], 4);
            out[4 * i + 0] = static_cast<char>(bits & 0xff);
            out[4 * i + 1] = static_cast<char>((bits >> 8) & 0xff);
            out[4 * i + 2] = static_cast<char>((bits >> 16) & 0xff);
            out[4 * i + 3] = static_cast<char>((bits >> 24) & 0xff);
        }
    }
}

inline void le_bytes_to_f32_buffer(const std::vector<char>& src, std::vector<float>& out) {
    out.resize(src.size() / 4);
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(out.data(), src.data(), src.size());
    } else {
        for (std::size_t i = 0; i < out.size(); ++i) {
            std::uint32_t bits = (static_cast<std::uint32_t>(static_cast<unsigned char>(src[4 * i + 0]))) |
                                 (static_cast<std::uint32_t>(static_cast<unsigned char>(src[4 * i + 1])) << 8) |
                                 (static_cast<std::uint32_t>(static_cast<unsigned char>(src[4 * i + 2])) << 16) |
                                 (static_cast<std::uint32_t>(static_cast<unsigned char>(src[4 * i + 3])) << 24);
            std::memcpy(&out[i], &bits, 4);
        }
    }
}

} // namespace detail

inline TensorArchive read_archive(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw Error("cannot open archive: " + path);
    const std::uint64_t file_size = static_cast<std::uint64_t>(in.tellg());
    in.seekg(0);

    unsigned char len_bytes[8];
    if (file_size < 8 || !in.read(reinterpret_cast<char*>(len_bytes), 8))
        throw Error("malformed header: file too short (" + path + ")");
    const std::uint64_t manifest_len = detail::decode_u64_le(len_bytes);
    if (manifest_len > file_size - 8)
        throw Error("malformed header: manifest length exceeds file size (" + path + ")");

    std::vector<char> manifest_bytes(manifest_len);
    if (!in.read(manifest_bytes.data(), static_cast<std::streamsize>(manifest_len)))
        throw Error("malformed header: truncated manifest (" + path + ")");

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(manifest_bytes.begin(), manifest_bytes.end());
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed header: manifest is not valid JSON: ") + e.what());
    }
    if (!manifest.is_object()) throw Error("malformed header: manifest is not a JSON object");

    TensorArchive archive;
    struct Entry {
        std::string name;
        std::vector<std::size_t> shape;
        std::uint64_t begin, end;
    };
    std::vector<Entry> entries;
    for (const auto& [key, value] : manifest.items()) {
        if (key == "__metadata__") {
            for (const auto& [mk, mv] : value.items()) {
                if (!mv.is_string()) throw Error("malformed header: metadata values must be strings");
                archive.metadata[mk] = mv.get<std::string>();
            }
            continue;
        }
        if (!value.contains("dtype") || !value.contains("shape") || !value.contains("data_offsets"))
            throw Error("malformed header: tensor '" + key + "' is missing required fields");
        const std::string dtype = value["dtype"].get<std::string>();
        if (dtype != "F32") throw Error("unsupported dtype '" + dtype + "' for tensor '" + key + "'");
        Entry e;
        e.name = key;
        e.shape = value["shape"].get<std::vector<std::size_t>>();
        const auto offsets = value["data_offsets"].get<std::vector<std::uint64_t>>();
        if (offsets.size() != 2 || offsets[1] < offsets[0])
            throw Error("malformed header: bad data_offsets for tensor '" + key + "'");
        e.begin = offsets[0];
        e.end = offsets[1];
        entries.push_back(std::move(e));
    }

    // Manifest keys arrive sorted; offset order recovers write order.
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.begin < b.begin; });

    const std::uint64_t payload_size = file_size - 8 - manifest_len;
    std::uint64_t expected_begin = 0;
    for (const Entry& e : entries) {
        if (e.begin != expected_begin)
            throw Error("archive offsets are not contiguous at tensor '" + e.name + "'");
        std::uint64_t n = 1;
        for (std::size_t d : e.shape) {
            if (d == 0) throw Error("tensor '" + e.name + "' has a zero dimension");
            if (n > payload_size / d) throw Error("tensor '" + e.name + "': shape exceeds payload");
            n *= d;
        }
        if (e.end - e.begin != n * 4)
            throw Error("tensor '" + e.name + "': data_offsets do not match shape");
        expected_begin = e.end;
    }
    if (expected_begin != payload_size) throw Error("archive payload size does not match offsets");

    for (const Entry& e : entries) {
        std::vector<char> raw(e.end - e.begin);
        in.seekg(static_cast<std::streamoff>(8 + manifest_len + e.begin));
        if (!in.read(raw.data(), static_cast<std::streamsize>(raw.size())))
            throw Error("truncated payload for tensor '" + e.name + "'");
        Tensor t;
        t.name = e.name;
        t.shape = e.shape;
        detail::le_bytes_to_f32_buffer(raw, t.data);
        archive.tensors.push_back(std::move(t));
    }

    validate_archive(archive);
    return archive;
}

// Validates before any byte is written; the final rename is atomic.
inline void write_archive(const TensorArchive& archive, const std::string& path) {
    validate_archive(archive);

    nlohmann::json manifest = nlohmann::json::object();
    if (!archive.metadata.empty()) {
        nlohmann::json meta = nlohmann::json::object();
        for (const auto& [k, v] : archive.metadata) meta[k] = v;
        manifest["__metadata__"] = meta;
    }
    std::uint64_t offset = 0;
    for (const Tensor& t : archive.tensors) {
        const std::uint64_t bytes = t.data.size() * 4;
        manifest[t.name] = {{"dtype", "F32"},
                            {"shape", t.shape},
                            {"data_offsets", {offset, offset + bytes}}};
        offset += bytes;
    }
    const std::string manifest_str = manifest.dump();

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot open for writing: " + tmp);
        unsigned char len_bytes[8];
        detail::encode_u64_le(manifest_str.size(), len_bytes);
        out.write(reinterpret_cast<const char*>(len_bytes), 8);
        out.write(manifest_str.data(), static_cast<std::streamsize>(manifest_str.size()));
        std::vector<char> raw;
        for (const Tensor& t : archive.tensors) {
            detail::f32_buffer_to_le_bytes(t.data, raw);
            out.write(raw.data(), static_cast<std::streamsize>(raw.size()));
        }
        if (!out) throw Error("write failed: " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw Error("cannot move archive into place: " + path + ": " + ec.message());
}

} // namespace seme
