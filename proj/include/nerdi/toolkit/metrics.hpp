#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "nerdi/error.hpp"
#include "nerdi/image.hpp"

namespace nerdi::toolkit {

constexpr double kPsnrCap = 99.0;

inline void check_same(const ad::Tensor<double>& a, const ad::Tensor<double>& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": shapes " + ad::shape_str(a.shape()) + " and " + ad::shape_str(b.shape()) +
                         " differ");
    }
}

inline double mse(const ad::Tensor<double>& a, const ad::Tensor<double>& b) {
    check_same(a, b, "mse");
    if (a.numel() == 0) throw ShapeError("mse: empty images");
    double acc = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    return acc / double(a.numel());
}

/// 10 log10(1 / MSE) for images in [0, 1], capped at kPsnrCap.
inline double psnr(const ad::Tensor<double>& a, const ad::Tensor<double>& b) {
    const double m = mse(a, b);
    if (m <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, -10.0 * std::log10(m));
}

struct SsimOptions {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01, k2 = 0.03;
    std::array<double, 3> luma{0.299, 0.587, 0.114};
};

inline DepthMap to_gray(const Image& img, const std::array<double, 3>& luma) {
    check_image(img, "to_gray");
    DepthMap g = make_depth(height_of(img), width_of(img));
    for (std::size_t i = 0; i < g.numel(); ++i) {
        g[i] = luma[0] * img[3 * i] + luma[1] * img[3 * i + 1] + luma[2] * img[3 * i + 2];
    }
    return g;
}

/// Mean SSIM over every full window position of the luma images (no padding).
inline double ssim(const Image& a, const Image& b, const SsimOptions& opt = {}) {
    check_same(a, b, "ssim");
    const auto ga = to_gray(a, opt.luma), gb = to_gray(b, opt.luma);
    const std::size_t H = height_of(ga), W = width_of(ga), n = std::size_t(opt.window);
    if (H < n || W < n) {
        throw ShapeError("ssim: image " + std::to_string(W) + "x" + std::to_string(H) + " is smaller than the " +
                         std::to_string(n) + "x" + std::to_string(n) + " window");
    }
    std::vector<double> g(n);
    double gs = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = double(i) - 0.5 * double(n - 1);
        g[i] = std::exp(-d * d / (2 * opt.sigma * opt.sigma));
        gs += g[i];
    }
    for (auto& v : g) v /= gs;
    const double c1 = opt.k1 * opt.k1, c2 = opt.k2 * opt.k2;

    double total = 0;
    for (std::size_t y = 0; y + n <= H; ++y) {
        for (std::size_t x = 0; x + n <= W; ++x) {
            double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    const double w = g[i] * g[j];
                    const double va = ga[(y + i) * W + x + j], vb = gb[(y + i) * W + x + j];
                    ma += w * va;
                    mb += w * vb;
                    saa += w * va * va;
                    sbb += w * vb * vb;
                    sab += w * va * vb;
                }
            }
            const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
            total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    return total / double((H - n + 1) * (W - n + 1));
}

struct Summary {
    double mean = 0, std = 0;
};

inline Summary summarize(const std::vector<double>& v) {
    Summary s;
    if (v.empty()) return s;
    for (double x : v) s.mean += x;
    s.mean /= double(v.size());
    for (double x : v) s.std += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(s.std / double(v.size()));
    return s;
}

}  // namespace nerdi::toolkit
