#pragma once

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <png.h>

#include "lipread/error.hpp"

namespace lipread {

/// Row-major grayscale grid; rows = height.
using Grid = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kRoiHeight = 48;
inline constexpr int kRoiWidth = 64;
inline constexpr int kRoiPixels = kRoiHeight * kRoiWidth;

/// Normalized mouth region: exactly 48x64, finite, values in [0,1].
class RoiFrame {
public:
    RoiFrame() : pixels_(Grid::Zero(kRoiHeight, kRoiWidth)) {}

    /// Wraps an already-normalized grid. Throws if the frame invariants do not hold.
    static RoiFrame from_pixels(Grid pixels) {
        if (pixels.rows() != kRoiHeight || pixels.cols() != kRoiWidth)
            throw DataError("ROI frame must be 48x64, got " + std::to_string(pixels.rows()) + "x" +
                            std::to_string(pixels.cols()));
        for (Eigen::Index i = 0; i < pixels.size(); ++i) {
            double v = pixels.data()[i];
            if (!std::isfinite(v) || v < 0.0 || v > 1.0) throw DataError("ROI pixel outside [0,1]");
        }
        RoiFrame f;
        f.pixels_ = std::move(pixels);
        return f;
    }

    const Grid& pixels() const { return pixels_; }
    double operator()(int r, int c) const { return pixels_(r, c); }

    friend bool operator==(const RoiFrame& a, const RoiFrame& b) { return a.pixels_ == b.pixels_; }

private:
    Grid pixels_;
};

/// Bilinear resample to 48x64 using pixel-centre alignment, then map intensities into [0,1].
///
/// Inputs already inside [0,1] keep their values; inputs inside [0,255] are treated as
/// 8-bit intensities; anything else is min-max rescaled (a constant image maps to 0).
inline RoiFrame normalize_roi(const Grid& raw) {
    if (raw.rows() < 2 || raw.cols() < 2) throw DataError("normalize_roi: input needs at least 2x2 pixels");
    if (!raw.allFinite()) throw DataError("normalize_roi: input has non-finite values");

    Grid out(kRoiHeight, kRoiWidth);
    const double sy = static_cast<double>(raw.rows()) / kRoiHeight;
    const double sx = static_cast<double>(raw.cols()) / kRoiWidth;
    const auto clampi = [](Eigen::Index v, Eigen::Index hi) { return std::clamp<Eigen::Index>(v, 0, hi); };
    for (int r = 0; r < kRoiHeight; ++r) {
        double y = std::clamp((r + 0.5) * sy - 0.5, 0.0, static_cast<double>(raw.rows() - 1));
        auto y0 = static_cast<Eigen::Index>(std::floor(y));
        auto y1 = clampi(y0 + 1, raw.rows() - 1);
        double wy = y - static_cast<double>(y0);
        for (int c = 0; c < kRoiWidth; ++c) {
            double x = std::clamp((c + 0.5) * sx - 0.5, 0.0, static_cast<double>(raw.cols() - 1));
            auto x0 = static_cast<Eigen::Index>(std::floor(x));
            auto x1 = clampi(x0 + 1, raw.cols() - 1);
            double wx = x - static_cast<double>(x0);
            double top = raw(y0, x0) * (1 - wx) + raw(y0, x1) * wx;
            double bot = raw(y1, x0) * (1 - wx) + raw(y1, x1) * wx;
            out(r, c) = top * (1 - wy) + bot * wy;
        }
    }

    const double lo = raw.minCoeff();
    const double hi = raw.maxCoeff();
    if (lo >= 0.0 && hi <= 1.0) {
        // already in range
    } else if (lo >= 0.0 && hi <= 255.0) {
        out /= 255.0;
    } else if (hi > lo) {
        out = (out.array() - lo) / (hi - lo);
    } else {
        out.setZero();
    }
    out = out.cwiseMax(0.0).cwiseMin(1.0);
    return RoiFrame::from_pixels(std::move(out));
}

// ---------------------------------------------------------------------------
// Image files

namespace detail {

inline void skip_pnm_space(std::istream& in) {
    while (true) {
        int ch = in.peek();
        if (ch == '#') {
            std::string discard;
            std::getline(in, discard);
        } else if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r') {
            in.get();
        } else {
            return;
        }
    }
}

inline Grid read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open frame file " + path.string());
    std::string magic(2, '\0');
    in.read(magic.data(), 2);
    if (magic != "P5") throw DataError("not a binary PGM (P5): " + path.string());
    long width = 0, height = 0, maxval = 0;
    skip_pnm_space(in);
    in >> width;
    skip_pnm_space(in);
    in >> height;
    skip_pnm_space(in);
    in >> maxval;
    in.get();
    if (!in || width <= 0 || height <= 0 || maxval <= 0 || maxval > 65535)
        throw DataError("malformed PGM header: " + path.string());
    const bool wide = maxval > 255;
    std::vector<unsigned char> buf(static_cast<std::size_t>(width * height * (wide ? 2 : 1)));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size())) throw DataError("truncated PGM: " + path.string());
    Grid g(height, width);
    for (long i = 0; i < width * height; ++i) {
        double v = wide ? (buf[2 * i] << 8 | buf[2 * i + 1]) : buf[i];
        g.data()[i] = v / static_cast<double>(maxval);
    }
    return g;
}

struct PngReadState {
    png_structp png = nullptr;
    png_infop info = nullptr;
    std::FILE* file = nullptr;
    ~PngReadState() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (file) std::fclose(file);
    }
};

inline Grid read_png(const std::filesystem::path& path) {
    PngReadState st;
    st.file = std::fopen(path.string().c_str(), "rb");
    if (!st.file) throw IoError("cannot open frame file " + path.string());
    st.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!st.png) throw IoError("libpng init failed");
    st.info = png_create_info_struct(st.png);
    if (!st.info) throw IoError("libpng init failed");
    if (setjmp(png_jmpbuf(st.png))) throw DataError("corrupt PNG: " + path.string());
    png_init_io(st.png, st.file);
    png_read_info(st.png, st.info);
    png_set_strip_16(st.png);
    png_set_strip_alpha(st.png);
    png_set_packing(st.png);
    png_byte color = png_get_color_type(st.png, st.info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(st.png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(st.png, st.info) < 8) png_set_expand_gray_1_2_4_to_8(st.png);
    if (color & PNG_COLOR_MASK_COLOR) png_set_rgb_to_gray_fixed(st.png, 1, -1, -1);
    png_read_update_info(st.png, st.info);
    const auto width = png_get_image_width(st.png, st.info);
    const auto height = png_get_image_height(st.png, st.info);
    const auto rowbytes = png_get_rowbytes(st.png, st.info);
    std::vector<png_byte> data(rowbytes * height);
    std::vector<png_bytep> rows(height);
    for (png_uint_32 r = 0; r < height; ++r) rows[r] = data.data() + r * rowbytes;
    png_read_image(st.png, rows.data());
    Grid g(height, width);
    for (png_uint_32 r = 0; r < height; ++r)
        for (png_uint_32 c = 0; c < width; ++c) g(r, c) = rows[r][c] / 255.0;
    return g;
}

} // namespace detail

/// Reads a PGM (P5) or PNG grayscale file into a grid scaled to [0,1].
inline Grid read_gray_image(const std::filesystem::path& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw IoError("missing frame file " + path.string());
    unsigned char sig[8] = {};
    probe.read(reinterpret_cast<char*>(sig), 8);
    probe.close();
    if (sig[0] == 'P' && sig[1] == '5') return detail::read_pgm(path);
    if (png_sig_cmp(sig, 0, 8) == 0) return detail::read_png(path);
    throw DataError("unsupported frame format (need PGM P5 or PNG): " + path.string());
}

/// Writes an 8-bit binary PGM. Values are clamped to [0,1] and rounded to the nearest level.
inline void write_pgm(const std::filesystem::path& path, const Grid& g) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "P5\n" << g.cols() << " " << g.rows() << "\n255\n";
    std::vector<unsigned char> buf(static_cast<std::size_t>(g.size()));
    for (Eigen::Index i = 0; i < g.size(); ++i)
        buf[i] = static_cast<unsigned char>(std::lround(std::clamp(g.data()[i], 0.0, 1.0) * 255.0));
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

} // namespace lipread
