#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <openssl/evp.h>

#include "lipread/error.hpp"

namespace lipread {

using Digest = std::array<unsigned char, 32>;

/// Incremental SHA-256.
class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) throw Error("SHA-256 init failed");
    }
    Sha256& update(const void* data, std::size_t n) {
        EVP_DigestUpdate(ctx_.get(), data, n);
        return *this;
    }
    Sha256& update(std::string_view s) { return update(s.data(), s.size()); }
    template <class T>
        requires std::is_trivially_copyable_v<T>
    Sha256& update_value(const T& v) {
        return update(&v, sizeof(T));
    }
    Digest finish() {
        Digest d{};
        unsigned int len = 0;
        EVP_DigestFinal_ex(ctx_.get(), d.data(), &len);
        return d;
    }

private:
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

inline Digest sha256(const void* data, std::size_t n) { return Sha256().update(data, n).finish(); }
inline Digest sha256(std::string_view s) { return sha256(s.data(), s.size()); }

inline std::string to_hex(const Digest& d) {
    std::string out;
    out.reserve(64);
    char buf[3];
    for (auto b : d) {
        std::snprintf(buf, sizeof buf, "%02x", b);
        out += buf;
    }
    return out;
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + path.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write failed: " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

inline void write_file_text(const std::filesystem::path& path, std::string_view text) {
    write_file_bytes(path, std::vector<unsigned char>(text.begin(), text.end()));
}

inline std::string file_sha256_hex(const std::filesystem::path& path) {
    auto bytes = read_file_bytes(path);
    return to_hex(sha256(bytes.data(), bytes.size()));
}

} // namespace lipread
