#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "lipread/error.hpp"
#include "lipread/image.hpp"

namespace lipread {

inline constexpr int kSiftCells = 4;
inline constexpr int kSiftCellSize = 4;
inline constexpr int kSiftSupport = kSiftCells * kSiftCellSize; // 16 px
inline constexpr int kSiftBins = 8;
inline constexpr int kSiftDescriptorSize = kSiftCells * kSiftCells * kSiftBins; // 128

/// Top-left corners of the dense keypoint patches, row-major.
inline std::vector<std::pair<int, int>> sift_grid(int rows, int cols, int step) {
    if (step < 1) throw Error("dense_sift: grid step must be >= 1");
    std::vector<std::pair<int, int>> pts;
    for (int y = 0; y + kSiftSupport <= rows; y += step)
        for (int x = 0; x + kSiftSupport <= cols; x += step) pts.emplace_back(y, x);
    return pts;
}

/// Upright single-scale SIFT descriptors on a uniform grid, concatenated row-major.
///
/// Each descriptor covers 16x16 px as 4x4 cells with 8 orientation bins, Gaussian-weighted
/// (sigma = half the support), orientation-interpolated, then L2-normalised, clipped at 0.2 and
/// renormalised. Patches without gradient energy yield all-zero descriptors.
inline Eigen::VectorXd dense_sift(const Grid& img, int step = kSiftSupport / 2) {
    const auto rows = static_cast<int>(img.rows());
    const auto cols = static_cast<int>(img.cols());
    const auto grid = sift_grid(rows, cols, step);
    if (grid.empty()) throw Error("dense_sift: image smaller than the descriptor support");

    Grid mag(rows, cols), ori(rows, cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            double dx = (img(r, std::min(c + 1, cols - 1)) - img(r, std::max(c - 1, 0))) * 0.5;
            double dy = (img(std::min(r + 1, rows - 1), c) - img(std::max(r - 1, 0), c)) * 0.5;
            mag(r, c) = std::hypot(dx, dy);
            double a = std::atan2(dy, dx);
            if (a < 0) a += 2 * std::numbers::pi;
            ori(r, c) = a;
        }
    }

    const double sigma = kSiftSupport / 2.0;
    const double bin_width = 2 * std::numbers::pi / kSiftBins;
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid.size()) * kSiftDescriptorSize);
    Eigen::Index offset = 0;
    for (auto [top, left] : grid) {
        auto desc = out.segment(offset, kSiftDescriptorSize);
        const double cy = top + (kSiftSupport - 1) / 2.0;
        const double cx = left + (kSiftSupport - 1) / 2.0;
        for (int y = top; y < top + kSiftSupport; ++y) {
            for (int x = left; x < left + kSiftSupport; ++x) {
                const double m = mag(y, x);
                if (m == 0.0) continue;
                const double w = std::exp(-((y - cy) * (y - cy) + (x - cx) * (x - cx)) / (2 * sigma * sigma));
                const double b = ori(y, x) / bin_width;
                const double fl = std::floor(b);
                const double frac = b - fl;
                const int b0 = static_cast<int>(fl) % kSiftBins;
                const int b1 = (b0 + 1) % kSiftBins;
                const int cell = ((y - top) / kSiftCellSize) * kSiftCells + (x - left) / kSiftCellSize;
                desc[cell * kSiftBins + b0] += m * w * (1.0 - frac);
                desc[cell * kSiftBins + b1] += m * w * frac;
            }
        }
        double norm = desc.norm();
        if (norm > 1e-12) {
            desc /= norm;
            desc = desc.cwiseMin(0.2);
            norm = desc.norm();
            desc /= norm;
        } else {
            desc.setZero();
        }
        offset += kSiftDescriptorSize;
    }
    return out;
}

} // namespace lipread
