#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "nerdi/autodiff.hpp"

namespace nerdi::render {

namespace detail {

/// Tent-filter taps for resampling `in` samples to `out` samples, pixel-center aligned.
/// The filter widens by the scale factor when shrinking so the result is antialiased.
struct Taps {
    std::size_t width = 0;  // taps per output sample
    std::vector<std::size_t> index;
    std::vector<double> weight;
};

inline Taps tent_taps(std::size_t in, std::size_t out) {
    const double scale = double(in) / double(out);
    const double radius = std::max(1.0, scale);
    Taps taps;
    taps.width = static_cast<std::size_t>(2 * std::ceil(radius)) + 1;
    taps.index.resize(out * taps.width);
    taps.weight.resize(out * taps.width);
    for (std::size_t o = 0; o < out; ++o) {
        const double center = (o + 0.5) * scale - 0.5;
        const long first = static_cast<long>(std::floor(center - radius)) + 1;
        double total = 0;
        for (std::size_t k = 0; k < taps.width; ++k) {
            const long src = first + static_cast<long>(k);
            const double w = std::max(0.0, 1.0 - std::abs(double(src) - center) / radius);
            taps.index[o * taps.width + k] = static_cast<std::size_t>(std::clamp<long>(src, 0, long(in) - 1));
            taps.weight[o * taps.width + k] = w;
            total += w;
        }
        for (std::size_t k = 0; k < taps.width; ++k) taps.weight[o * taps.width + k] /= total;
    }
    return taps;
}

/// Resamples the middle axis of x viewed as [outer, in, inner] to `out` entries.
template <class T>
ad::Var<T> resample_axis(const ad::Var<T>& x, std::size_t outer, std::size_t in, std::size_t inner, std::size_t out) {
    if (in == out) return x;
    const auto taps = tent_taps(in, out);
    auto idx = std::make_shared<std::vector<std::size_t>>();
    ad::Tensor<T> w({outer * out * taps.width, 1});
    idx->reserve(outer * out * taps.width);
    std::size_t k = 0;
    for (std::size_t a = 0; a < outer; ++a) {
        for (std::size_t o = 0; o < out; ++o) {
            for (std::size_t j = 0; j < taps.width; ++j, ++k) {
                idx->push_back(a * in + taps.index[o * taps.width + j]);
                w[k] = T(taps.weight[o * taps.width + j]);
            }
        }
    }
    const auto rows = ad::reshape(x, {outer * in, inner});
    const auto picked = ad::gather(rows, std::shared_ptr<const std::vector<std::size_t>>(idx)) * ad::Var<T>::constant(w);
    return ad::sum(ad::reshape(picked, {outer * out, taps.width, inner}), 1);
}

}  // namespace detail

/// Differentiable separable resize of an [H, W, C] image.
template <class T>
ad::Var<T> resize(const ad::Var<T>& img, std::size_t out_h, std::size_t out_w) {
    if (img.shape().size() != 3) throw ShapeError("resize: expected [H, W, C], got " + ad::shape_str(img.shape()));
    if (out_h == 0 || out_w == 0) throw ShapeError("resize: empty output size");
    const std::size_t h = img.shape()[0], w = img.shape()[1], c = img.shape()[2];
    auto x = detail::resample_axis(img, h, w, c, out_w);
    x = detail::resample_axis(x, 1, h, out_w * c, out_h);
    return ad::reshape(x, {out_h, out_w, c});
}

template <class T>
ad::Tensor<T> resize(const ad::Tensor<T>& img, std::size_t out_h, std::size_t out_w) {
    return resize(ad::Var<T>::constant(img), out_h, out_w).value();
}

}  // namespace nerdi::render
