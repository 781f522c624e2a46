#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "nst/error.hpp"

namespace nst {

// 64-bit FNV-1a. Used as the content hash for checkpoints, datasets and
// manifests; identity checks only, not cryptographic.
class ContentHash {
public:
    ContentHash() : h_(0xcbf29ce484222325ULL) {}

    void update(const void* bytes, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(bytes);
        for (std::size_t i = 0; i < n; ++i) {
            h_ ^= p[i];
            h_ *= 0x100000001b3ULL;
        }
    }

    void update(const std::string& s) { update(s.data(), s.size()); }

    template <typename T>
    void update_pod(const T& v) {
        update(&v, sizeof(T));
    }

    void update(const std::vector<double>& v) { update(v.data(), v.size() * sizeof(double)); }

    std::uint64_t value() const { return h_; }

    std::string hex() const {
        static const char* digits = "0123456789abcdef";
        std::string out(16, '0');
        std::uint64_t h = h_;
        for (int i = 15; i >= 0; --i) {
            out[static_cast<std::size_t>(i)] = digits[h & 0xf];
            h >>= 4;
        }
        return out;
    }

private:
    std::uint64_t h_;
};

inline std::string hash_bytes_hex(const void* bytes, std::size_t n) {
    ContentHash h;
    h.update(bytes, n);
    return h.hex();
}

inline std::string hash_file_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file for hashing", path);
    ContentHash h;
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
        h.update(buf, static_cast<std::size_t>(in.gcount()));
    return h.hex();
}

}  // namespace nst
