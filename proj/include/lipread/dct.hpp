#pragma once

#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "lipread/error.hpp"
#include "lipread/image.hpp"

namespace lipread {

/// Orthonormal DCT-II matrix: row k holds basis function k sampled at n points.
inline Eigen::MatrixXd dct_matrix(int n) {
    Eigen::MatrixXd m(n, n);
    for (int k = 0; k < n; ++k) {
        const double scale = std::sqrt((k == 0 ? 1.0 : 2.0) / n);
        for (int i = 0; i < n; ++i) m(k, i) = scale * std::cos(std::numbers::pi * (2 * i + 1) * k / (2.0 * n));
    }
    return m;
}

namespace detail {
inline const Eigen::MatrixXd& roi_dct_rows() {
    static const Eigen::MatrixXd m = dct_matrix(kRoiHeight);
    return m;
}
inline const Eigen::MatrixXd& roi_dct_cols() {
    static const Eigen::MatrixXd m = dct_matrix(kRoiWidth);
    return m;
}
} // namespace detail

/// Separable orthonormal type-II 2-D DCT of an arbitrary grid.
inline Grid dct2(const Grid& g) {
    if (g.rows() == kRoiHeight && g.cols() == kRoiWidth)
        return detail::roi_dct_rows() * g * detail::roi_dct_cols().transpose();
    const auto r = dct_matrix(static_cast<int>(g.rows()));
    const auto c = dct_matrix(static_cast<int>(g.cols()));
    return r * g * c.transpose();
}

inline Grid idct2(const Grid& coeffs) {
    if (coeffs.rows() == kRoiHeight && coeffs.cols() == kRoiWidth)
        return detail::roi_dct_rows().transpose() * coeffs * detail::roi_dct_cols();
    const auto r = dct_matrix(static_cast<int>(coeffs.rows()));
    const auto c = dct_matrix(static_cast<int>(coeffs.cols()));
    return r.transpose() * coeffs * c;
}

/// JPEG zig-zag traversal generalised to a rows x cols grid.
inline std::vector<std::pair<int, int>> zigzag_order(int rows, int cols) {
    std::vector<std::pair<int, int>> order;
    order.reserve(static_cast<std::size_t>(rows * cols));
    for (int s = 0; s <= rows + cols - 2; ++s) {
        if (s % 2 == 0) {
            for (int r = std::min(s, rows - 1); r >= 0 && s - r < cols; --r) order.emplace_back(r, s - r);
        } else {
            for (int r = std::max(0, s - cols + 1); r <= s && r < rows; ++r) order.emplace_back(r, s - r);
        }
    }
    return order;
}

inline const std::vector<std::pair<int, int>>& roi_zigzag() {
    static const auto order = zigzag_order(kRoiHeight, kRoiWidth);
    return order;
}

/// First `n` zig-zag coefficients of the 48x64 DCT. Only the low-frequency block that the
/// selection touches is transformed.
inline Eigen::VectorXd dct_features(const Grid& frame, int n) {
    if (n < 1 || n > kRoiPixels) throw Error("dct_features: coefficient count must be in [1, 3072]");
    if (frame.rows() != kRoiHeight || frame.cols() != kRoiWidth) throw Error("dct_features: frame must be 48x64");
    const auto& order = roi_zigzag();
    int max_r = 0, max_c = 0;
    for (int i = 0; i < n; ++i) {
        max_r = std::max(max_r, order[i].first);
        max_c = std::max(max_c, order[i].second);
    }
    const Eigen::MatrixXd block = detail::roi_dct_rows().topRows(max_r + 1) * frame *
                                  detail::roi_dct_cols().topRows(max_c + 1).transpose();
    Eigen::VectorXd out(n);
    for (int i = 0; i < n; ++i) out[i] = block(order[i].first, order[i].second);
    return out;
}

/// Inverse of dct_features: zero-fills the dropped coefficients.
inline Grid dct_reconstruct(const Eigen::VectorXd& coeffs) {
    Grid full = Grid::Zero(kRoiHeight, kRoiWidth);
    const auto& order = roi_zigzag();
    for (Eigen::Index i = 0; i < coeffs.size(); ++i) full(order[i].first, order[i].second) = coeffs[i];
    return idct2(full);
}

/// Smallest zig-zag coefficient count whose mean relative L2 reconstruction error over the
/// sample is at most `target_error`. All-zero frames count as zero error.
inline int select_dct_count(const std::vector<Grid>& frames, double target_error) {
    if (frames.empty()) throw Error("select_dct_count: empty sample");
    if (!(target_error > 0.0 && target_error < 1.0 + 1e-15))
        throw Error("select_dct_count: target error must lie in (0,1]");
    const auto& order = roi_zigzag();
    // residual[n] accumulates the mean relative error when keeping n coefficients
    std::vector<double> mean_err(kRoiPixels + 1, 0.0);
    std::vector<double> tail(kRoiPixels + 1);
    for (const auto& f : frames) {
        const Grid c = dct2(f);
        const double total = c.squaredNorm();
        tail[kRoiPixels] = 0.0;
        for (int k = kRoiPixels - 1; k >= 0; --k) {
            double v = c(order[k].first, order[k].second);
            tail[k] = tail[k + 1] + v * v;
        }
        if (total <= 0.0) continue;
        for (int n = 1; n <= kRoiPixels; ++n) mean_err[n] += std::sqrt(std::max(tail[n], 0.0) / total);
    }
    for (int n = 1; n <= kRoiPixels; ++n) {
        if (mean_err[n] / static_cast<double>(frames.size()) <= target_error) return n;
    }
    return kRoiPixels;
}

} // namespace lipread
