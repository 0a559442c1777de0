#pragma once

#include <string>

#include "nerdi/autodiff/tensor.hpp"
#include "nerdi/error.hpp"

namespace nerdi {

/// Row-major [height, width, 3] RGB in [0, 1].
using Image = ad::Tensor<double>;
/// Row-major [height, width].
using DepthMap = ad::Tensor<double>;

inline Image make_image(std::size_t height, std::size_t width, double fill = 0.0) {
    return Image({height, width, 3}, fill);
}

inline DepthMap make_depth(std::size_t height, std::size_t width, double fill = 0.0) {
    return DepthMap({height, width}, fill);
}

inline void check_image(const Image& img, const std::string& what) {
    if (img.rank() != 3 || img.dim(2) != 3) {
        throw ShapeError(what + ": expected an [H, W, 3] image, got " + ad::shape_str(img.shape()));
    }
}

inline void check_depth(const DepthMap& d, const std::string& what) {
    if (d.rank() != 2) throw ShapeError(what + ": expected an [H, W] depth map, got " + ad::shape_str(d.shape()));
}

inline std::size_t height_of(const ad::Tensor<double>& t) { return t.dim(0); }
inline std::size_t width_of(const ad::Tensor<double>& t) { return t.dim(1); }

}  // namespace nerdi
