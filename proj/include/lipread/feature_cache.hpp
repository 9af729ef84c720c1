#pragma once

// Feature cache file, little-endian:
//
//   "LRFC"            4 bytes magic
//   version           u32 (= 1)
//   dim               u32
//   n_spans           u32, then per span: name (u32 length + bytes), offset u32, length u32
//   n_frames          u32
//   source_hash       32 bytes (SHA-256 of everything the cache was computed from)
//   metadata          u32 length + UTF-8 JSON (config hash, seed)
//   values            n_frames * dim f64, row-major
//   checksum          32 bytes SHA-256 of all preceding bytes

#include <filesystem>
#include <string>

#include "lipread/binary_io.hpp"
#include "lipread/features.hpp"
#include "lipread/hashing.hpp"

namespace lipread {

inline constexpr std::uint32_t kFeatureCacheVersion = 1;

struct FeatureCache {
    FeatureSequence features;
    Digest source_hash{};
    std::string metadata;
};

inline std::vector<unsigned char> encode_feature_cache(const FeatureCache& cache) {
    ByteWriter w;
    const auto& seq = cache.features;
    w.raw("LRFC");
    w.put<std::uint32_t>(kFeatureCacheVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(seq.dim()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(seq.layout.size()));
    for (const auto& s : seq.layout) {
        w.str(s.name);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(s.offset));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(s.length));
    }
    w.put<std::uint32_t>(static_cast<std::uint32_t>(seq.frames()));
    w.raw(std::string(cache.source_hash.begin(), cache.source_hash.end()));
    w.str(cache.metadata);
    for (Eigen::Index r = 0; r < seq.frames(); ++r)
        for (Eigen::Index c = 0; c < seq.dim(); ++c) w.put(seq.values(r, c));
    const auto sum = sha256(w.bytes().data(), w.bytes().size());
    w.raw(std::string(sum.begin(), sum.end()));
    return w.bytes();
}

/// Decodes a cache; throws DataError on a bad magic, version or checksum.
inline FeatureCache decode_feature_cache(const std::vector<unsigned char>& bytes, const std::string& what) {
    if (bytes.size() < 4 + 32) throw DataError(what + ": truncated feature cache");
    const auto body = bytes.size() - 32;
    const auto sum = sha256(bytes.data(), body);
    if (!std::equal(sum.begin(), sum.end(), bytes.begin() + static_cast<std::ptrdiff_t>(body)))
        throw DataError(what + ": feature cache checksum mismatch");
    ByteReader r(bytes.data(), body, what);
    if (r.raw(4) != "LRFC") throw DataError(what + ": not a feature cache");
    if (r.get<std::uint32_t>() != kFeatureCacheVersion) throw DataError(what + ": unsupported feature cache version");
    FeatureCache cache;
    const auto dim = r.get<std::uint32_t>();
    const auto n_spans = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_spans; ++i) {
        LayoutSpan s;
        s.name = r.str();
        s.offset = static_cast<int>(r.get<std::uint32_t>());
        s.length = static_cast<int>(r.get<std::uint32_t>());
        cache.features.layout.push_back(std::move(s));
    }
    const auto frames = r.get<std::uint32_t>();
    auto h = r.raw(32);
    std::copy(h.begin(), h.end(), cache.source_hash.begin());
    cache.metadata = r.str();
    cache.features.values.resize(frames, dim);
    for (std::uint32_t t = 0; t < frames; ++t)
        for (std::uint32_t c = 0; c < dim; ++c) cache.features.values(t, c) = r.get<double>();
    if (r.remaining() != 0) throw DataError(what + ": trailing bytes in feature cache");
    return cache;
}

inline void write_feature_cache(const std::filesystem::path& path, const FeatureCache& cache) {
    write_file_bytes(path, encode_feature_cache(cache));
}

inline FeatureCache read_feature_cache(const std::filesystem::path& path) {
    return decode_feature_cache(read_file_bytes(path), path.string());
}

} // namespace lipread
