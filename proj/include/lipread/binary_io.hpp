#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "lipread/error.hpp"

namespace lipread {

/// Little-endian byte sink used by every binary artifact.
class ByteWriter {
public:
    template <class T>
        requires std::is_arithmetic_v<T>
    void put(T v) {
        unsigned char b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
        bytes_.insert(bytes_.end(), b, b + sizeof(T));
    }
    void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
    void raw(const std::vector<unsigned char>& v) { bytes_.insert(bytes_.end(), v.begin(), v.end()); }
    void str(std::string_view s) {
        put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        raw(s);
    }
    void vec(const Eigen::VectorXd& v) {
        put<std::uint32_t>(static_cast<std::uint32_t>(v.size()));
        for (Eigen::Index i = 0; i < v.size(); ++i) put(v[i]);
    }
    void mat(const Eigen::MatrixXd& m) {
        put<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
        put<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) put(m(r, c));
    }
    const std::vector<unsigned char>& bytes() const { return bytes_; }
    std::vector<unsigned char>& bytes() { return bytes_; }

private:
    std::vector<unsigned char> bytes_;
};

class ByteReader {
public:
    ByteReader(const unsigned char* data, std::size_t size, std::string what)
        : data_(data), size_(size), what_(std::move(what)) {}

    template <class T>
        requires std::is_arithmetic_v<T>
    T get() {
        need(sizeof(T));
        unsigned char b[sizeof(T)];
        std::memcpy(b, data_ + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
        pos_ += sizeof(T);
        T v;
        std::memcpy(&v, b, sizeof(T));
        return v;
    }
    std::string raw(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
        pos_ += n;
        return s;
    }
    std::string str() { return raw(get<std::uint32_t>()); }
    Eigen::VectorXd vec() {
        auto n = get<std::uint32_t>();
        Eigen::VectorXd v(n);
        for (std::uint32_t i = 0; i < n; ++i) v[i] = get<double>();
        return v;
    }
    Eigen::MatrixXd mat() {
        auto r = get<std::uint32_t>();
        auto c = get<std::uint32_t>();
        Eigen::MatrixXd m(r, c);
        for (std::uint32_t i = 0; i < r; ++i)
            for (std::uint32_t j = 0; j < c; ++j) m(i, j) = get<double>();
        return m;
    }
    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return size_ - pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > size_) throw DataError(what_ + ": truncated data");
    }
    const unsigned char* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
    std::string what_;
};

} // namespace lipread
