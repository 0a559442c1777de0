#pragma once

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "nerdi/error.hpp"
#include "nerdi/image.hpp"

namespace nerdi::toolkit {

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

inline File open_file(const std::string& path, const char* mode) {
    File f(std::fopen(path.c_str(), mode));
    if (!f) throw std::runtime_error("cannot open " + path);
    return f;
}

[[noreturn]] inline void png_fail(png_structp png, png_const_charp msg) {
    throw FormatError(std::string("png: ") + msg + " (" + static_cast<const char*>(png_get_error_ptr(png)) + ")");
}

inline void png_warn(png_structp, png_const_charp) {}

/// Decoded PNG samples in [0, 1], `channels` per pixel (1 or 3; alpha dropped).
struct Decoded {
    std::size_t width = 0, height = 0, channels = 0;
    int bit_depth = 8;
    std::vector<double> data;
};

inline Decoded read_png(const std::string& path) {
    auto f = open_file(path, "rb");
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
        throw FormatError(path + ": not a PNG file");
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, const_cast<char*>(path.c_str()), png_fail, png_warn);
    if (!png) throw std::runtime_error("png: out of memory");
    png_infop info = png_create_info_struct(png);
    struct Guard {
        png_structp* p;
        png_infop* i;
        ~Guard() { png_destroy_read_struct(p, i, nullptr); }
    } guard{&png, &info};

    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const auto width = png_get_image_width(png, info);
    const auto height = png_get_image_height(png, info);
    const int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) {
        png_set_palette_to_rgb(png);
        depth = 8;
    }
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) {
        png_set_expand_gray_1_2_4_to_8(png);
        depth = 8;
    }
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (depth == 16) png_set_swap(png);  // host little-endian order
    png_read_update_info(png, info);
    const std::size_t ch = png_get_channels(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    std::vector<unsigned char> buf(rowbytes * height);
    std::vector<png_bytep> rows(height);
    for (std::size_t y = 0; y < height; ++y) rows[y] = buf.data() + y * rowbytes;
    png_read_image(png, rows.data());

    Decoded out;
    out.width = width;
    out.height = height;
    out.bit_depth = depth;
    const bool has_alpha = ch == 2 || ch == 4;
    out.channels = has_alpha ? ch - 1 : ch;
    out.data.resize(out.width * out.height * out.channels);
    const double scale = depth == 16 ? 65535.0 : 255.0;
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            for (std::size_t c = 0; c < out.channels; ++c) {
                const std::size_t k = x * ch + c;
                double v;
                if (depth == 16) {
                    std::uint16_t s;
                    std::memcpy(&s, rows[y] + 2 * k, 2);
                    v = s;
                } else {
                    v = rows[y][k];
                }
                out.data[(y * width + x) * out.channels + c] = v / scale;
            }
        }
    }
    return out;
}

inline void write_png(const std::string& path, std::size_t width, std::size_t height, int channels, int bit_depth,
                      const std::vector<double>& data) {
    auto f = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, const_cast<char*>(path.c_str()), png_fail, png_warn);
    if (!png) throw std::runtime_error("png: out of memory");
    png_infop info = png_create_info_struct(png);
    struct Guard {
        png_structp* p;
        png_infop* i;
        ~Guard() { png_destroy_write_struct(p, i); }
    } guard{&png, &info};
    png_init_io(png, f.get());
    png_set_IHDR(png, info, png_uint_32(width), png_uint_32(height), bit_depth,
                 channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    if (bit_depth == 16) png_set_swap(png);
    const std::size_t bytes = bit_depth == 16 ? 2 : 1;
    const double scale = bit_depth == 16 ? 65535.0 : 255.0;
    std::vector<unsigned char> row(width * std::size_t(channels) * bytes);
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t k = 0; k < width * std::size_t(channels); ++k) {
            const double v = data[y * width * std::size_t(channels) + k];
            const double q = std::round(std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0) * scale);
            if (bit_depth == 16) {
                const auto s = static_cast<std::uint16_t>(q);
                std::memcpy(&row[2 * k], &s, 2);
            } else {
                row[k] = static_cast<unsigned char>(q);
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
}

}  // namespace detail

/// 8-bit RGB PNG; values are clamped to [0, 1] and written without a gamma transform.
inline void save_png(const std::string& path, const Image& img) {
    check_image(img, "save_png");
    detail::write_png(path, width_of(img), height_of(img), 3, 8, img.storage());
}

/// RGB image in [0, 1]. Grayscale files are replicated to three channels; alpha is dropped.
inline Image load_png(const std::string& path) {
    auto d = detail::read_png(path);
    Image img = make_image(d.height, d.width);
    for (std::size_t i = 0; i < d.width * d.height; ++i) {
        for (int c = 0; c < 3; ++c) img[3 * i + c] = d.data[i * d.channels + (d.channels == 1 ? 0 : c)];
    }
    return img;
}

/// Single-channel PNG as a depth map, [0, 2^bits - 1] mapped linearly to [0, 1].
inline DepthMap load_png_depth(const std::string& path) {
    auto d = detail::read_png(path);
    if (d.channels != 1) {
        throw FormatError(path + ": depth PNG must have one channel, found " + std::to_string(d.channels));
    }
    DepthMap m = make_depth(d.height, d.width);
    for (std::size_t i = 0; i < m.numel(); ++i) m[i] = d.data[i];
    return m;
}

/// 16-bit grayscale PNG of a depth map already scaled to [0, 1].
inline void save_png_depth16(const std::string& path, const DepthMap& d) {
    check_depth(d, "save_png_depth16");
    detail::write_png(path, width_of(d), height_of(d), 1, 16, d.storage());
}

// ---- portable float map ----

/// PFM ("Pf" one channel, "PF" three), little-endian float32, rows stored bottom to top.
inline void save_pfm(const std::string& path, const ad::Tensor<double>& t) {
    const bool color = t.rank() == 3;
    if (!(t.rank() == 2 || (color && t.dim(2) == 3))) throw ShapeError("save_pfm: expected [H, W] or [H, W, 3]");
    const std::size_t h = t.dim(0), w = t.dim(1), c = color ? 3 : 1;
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f << (color ? "PF" : "Pf") << "\n" << w << " " << h << "\n-1.0\n";
    std::vector<float> row(w * c);
    for (std::size_t y = h; y-- > 0;) {
        for (std::size_t k = 0; k < w * c; ++k) row[k] = static_cast<float>(t[y * w * c + k]);
        f.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size() * sizeof(float)));
    }
    if (!f) throw std::runtime_error("write failed: " + path);
}

/// Reads a PFM; `channels` (1 or 3) must match the file.
inline ad::Tensor<double> load_pfm(const std::string& path, int channels) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::string magic;
    f >> magic;
    if (magic != "Pf" && magic != "PF") throw FormatError(path + ": bad PFM header '" + magic + "'");
    const int c = magic == "PF" ? 3 : 1;
    if (c != channels) {
        throw FormatError(path + ": PFM has " + std::to_string(c) + " channel(s), expected " + std::to_string(channels));
    }
    long w = 0, h = 0;
    double scale = 0;
    f >> w >> h >> scale;
    if (!f || w <= 0 || h <= 0 || scale == 0.0) throw FormatError(path + ": malformed PFM header");
    f.get();  // single whitespace byte before the raster
    const bool little = scale < 0;
    std::vector<float> raw(std::size_t(w * h * c));
    f.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size() * sizeof(float)));
    if (f.gcount() != std::streamsize(raw.size() * sizeof(float))) throw FormatError(path + ": truncated PFM raster");
    if (!little) {
        for (auto& v : raw) {
            std::uint32_t u;
            std::memcpy(&u, &v, 4);
            u = __builtin_bswap32(u);
            std::memcpy(&v, &u, 4);
        }
    }
    const std::size_t W = std::size_t(w), H = std::size_t(h), C = std::size_t(c);
    ad::Tensor<double> t(c == 3 ? ad::Shape{H, W, 3} : ad::Shape{H, W});
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t k = 0; k < W * C; ++k) t[y * W * C + k] = raw[(H - 1 - y) * W * C + k];
    }
    return t;
}

inline DepthMap load_depth(const std::string& path) {
    const auto dot = path.rfind('.');
    const std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
    if (ext == "pfm" || ext == "PFM") return load_pfm(path, 1);
    if (ext == "png" || ext == "PNG") return load_png_depth(path);
    throw FormatError(path + ": depth must be .pfm or .png");
}

}  // namespace nerdi::toolkit
