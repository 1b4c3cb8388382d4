#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "seme/error.hpp"

namespace seme {

// FNV-1a, 64-bit. Content hashes are provenance identifiers, not security.
inline std::uint64_t fnv1a64(const void* bytes, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string to_hex(std::uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return out;
}

inline std::string fingerprint_bytes(const void* bytes, std::size_t n) {
    return to_hex(fnv1a64(bytes, n));
}

inline std::string fingerprint_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open file for fingerprinting: " + path);
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
    }
    return to_hex(h);
}

} // namespace seme
