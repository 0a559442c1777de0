#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "nerdi/autodiff.hpp"

namespace nerdi::field {

struct HashGridConfig {
    int levels = 8;
    int base_resolution = 16;
    double per_level_scale = 1.5;
    int table_size_log2 = 15;
    int features_per_level = 2;
    double box_min = -1.0;
    double box_max = 1.0;
    std::array<std::uint64_t, 3> primes{1ULL, 2654435761ULL, 805459861ULL};

    void validate() const {
        if (levels < 1) throw std::invalid_argument("hash grid: levels must be >= 1");
        if (base_resolution < 1) throw std::invalid_argument("hash grid: base_resolution must be >= 1");
        if (!(per_level_scale > 1.0)) throw std::invalid_argument("hash grid: per_level_scale must be > 1");
        if (table_size_log2 < 1 || table_size_log2 > 30) throw std::invalid_argument("hash grid: table_size_log2 out of range");
        if (features_per_level < 1) throw std::invalid_argument("hash grid: features_per_level must be >= 1");
        if (!(box_max > box_min)) throw std::invalid_argument("hash grid: empty bounding box");
        if (!std::isfinite(resolution_real(levels - 1)) || resolution_real(levels - 1) > 1e7) {
            throw std::invalid_argument("hash grid: finest resolution is not finite");
        }
    }

    double resolution_real(int level) const { return base_resolution * std::pow(per_level_scale, level); }
    std::int64_t resolution(int level) const { return static_cast<std::int64_t>(std::floor(resolution_real(level))); }
    std::size_t table_size() const { return std::size_t{1} << table_size_log2; }
    bool dense(int level) const {
        const double side = static_cast<double>(resolution(level) + 1);
        return side * side * side <= static_cast<double>(table_size());
    }
    std::size_t feature_dim() const { return static_cast<std::size_t>(levels * features_per_level); }
};

using Cell = std::array<std::int64_t, 3>;

/// Table row for a grid vertex: row-major direct index on levels small enough to store
/// densely, XOR of coordinate-prime products otherwise.
inline std::size_t hash_index(const HashGridConfig& cfg, int level, const Cell& cell) {
    if (level < 0 || level >= cfg.levels) {
        throw std::out_of_range("hash_index: level " + std::to_string(level) + " out of range [0, " +
                                std::to_string(cfg.levels) + ")");
    }
    const std::int64_t side = cfg.resolution(level) + 1;
    for (auto c : cell) {
        if (c < 0 || c >= side) throw std::out_of_range("hash_index: cell outside level resolution");
    }
    if (cfg.dense(level)) {
        return static_cast<std::size_t>(cell[0] + cell[1] * side + cell[2] * side * side);
    }
    std::uint64_t h = 0;
    for (int a = 0; a < 3; ++a) h ^= static_cast<std::uint64_t>(cell[a]) * cfg.primes[a];
    return static_cast<std::size_t>(h & (cfg.table_size() - 1));
}

namespace detail {

/// Corner rows and trilinear weights (plus weight derivatives w.r.t. the unit
/// coordinate) of one point on one level.
struct CornerSet {
    std::array<std::size_t, 8> index;
    std::array<double, 8> weight;
    std::array<std::array<double, 3>, 8> dweight;
    std::array<bool, 3> inside;  // false where the coordinate was clamped
};

/// Per-level constants, hoisted out of the per-point loops.
struct LevelInfo {
    double n;
    std::int64_t side;
    bool dense;
    std::uint64_t mask;
};

inline LevelInfo level_info(const HashGridConfig& cfg, int level) {
    if (level < 0 || level >= cfg.levels) throw std::out_of_range("hash grid: level out of range");
    const auto n = cfg.resolution(level);
    return {static_cast<double>(n), n + 1, cfg.dense(level), static_cast<std::uint64_t>(cfg.table_size() - 1)};
}

/// hash_index without the range checks; `cell` must lie inside the level.
inline std::size_t row_of(const HashGridConfig& cfg, const LevelInfo& li, const Cell& cell) {
    if (li.dense) return static_cast<std::size_t>(cell[0] + cell[1] * li.side + cell[2] * li.side * li.side);
    const std::uint64_t h = (static_cast<std::uint64_t>(cell[0]) * cfg.primes[0]) ^
                            (static_cast<std::uint64_t>(cell[1]) * cfg.primes[1]) ^
                            (static_cast<std::uint64_t>(cell[2]) * cfg.primes[2]);
    return static_cast<std::size_t>(h & li.mask);
}

inline CornerSet corners(const HashGridConfig& cfg, const LevelInfo& li, const double* p) {
    CornerSet cs;
    const double n = li.n;
    const double extent = cfg.box_max - cfg.box_min;
    Cell base;
    std::array<double, 3> frac;
    for (int a = 0; a < 3; ++a) {
        const double u_raw = (p[a] - cfg.box_min) / extent;
        cs.inside[a] = u_raw >= 0.0 && u_raw <= 1.0;
        const double x = std::clamp(u_raw, 0.0, 1.0) * n;
        const double c = std::min(std::floor(x), n - 1.0);
        base[a] = static_cast<std::int64_t>(c);
        frac[a] = x - c;
    }
    for (int k = 0; k < 8; ++k) {
        Cell cell;
        double w = 1.0;
        std::array<double, 3> f;
        for (int a = 0; a < 3; ++a) {
            const int bit = (k >> a) & 1;
            cell[a] = base[a] + bit;
            f[a] = bit ? frac[a] : 1.0 - frac[a];
            w *= f[a];
        }
        cs.index[k] = row_of(cfg, li, cell);
        cs.weight[k] = w;
        for (int a = 0; a < 3; ++a) {
            const int bit = (k >> a) & 1;
            double d = bit ? 1.0 : -1.0;
            for (int b = 0; b < 3; ++b) {
                if (b != a) d *= f[b];
            }
            cs.dweight[k][a] = d * n / extent;
        }
    }
    return cs;
}

inline CornerSet corners(const HashGridConfig& cfg, int level, const double* p) {
    return corners(cfg, level_info(cfg, level), p);
}

}  // namespace detail

/// Multi-resolution grid features for points [P, 3] -> [P, L*F], coarse levels first.
/// `tables` holds one [2^T, F] tensor per level. Differentiable w.r.t. the tables and
/// the points (zero gradient along clamped coordinates).
template <class T>
ad::Var<T> encode(const ad::Var<T>& points, const std::vector<ad::Var<T>>& tables, const HashGridConfig& cfg) {
    using ad::Tensor;
    if (points.shape().size() != 2 || points.shape()[1] != 3) {
        throw ShapeError("encode: points must be [P, 3], got " + ad::shape_str(points.shape()));
    }
    if (tables.size() != static_cast<std::size_t>(cfg.levels)) {
        throw ShapeError("encode: expected " + std::to_string(cfg.levels) + " tables, got " +
                             std::to_string(tables.size()));
    }
    const std::size_t nf = static_cast<std::size_t>(cfg.features_per_level);
    for (const auto& t : tables) {
        if (t.shape() != ad::Shape{cfg.table_size(), nf}) {
            throw ShapeError("encode: table shape " + ad::shape_str(t.shape()) + " does not match config");
        }
    }
    std::vector<ad::Var<T>> operands{points};
    operands.insert(operands.end(), tables.begin(), tables.end());
    const std::size_t levels = tables.size();
    const std::size_t width = levels * nf;
    std::vector<detail::LevelInfo> info;
    for (int l = 0; l < cfg.levels; ++l) info.push_back(detail::level_info(cfg, l));

    auto forward = [cfg, info, levels, nf, width](const std::vector<const Tensor<T>*>& in) {
        const auto& pts = *in[0];
        const std::size_t np = pts.shape()[0];
        Tensor<T> out({np, width});
        parallel_for(np, 256, [&](std::size_t b, std::size_t e) {
            for (std::size_t i = b; i < e; ++i) {
                const double p[3] = {double(pts[3 * i]), double(pts[3 * i + 1]), double(pts[3 * i + 2])};
                for (std::size_t l = 0; l < levels; ++l) {
                    const auto cs = detail::corners(cfg, info[l], p);
                    const auto table = in[1 + l]->data();
                    for (std::size_t f = 0; f < nf; ++f) {
                        T acc = 0;
                        for (int k = 0; k < 8; ++k) acc += T(cs.weight[k]) * table[cs.index[k] * nf + f];
                        out[i * width + l * nf + f] = acc;
                    }
                }
            }
        });
        return out;
    };

    auto backward = [cfg, info, levels, nf, width](const std::vector<const Tensor<T>*>& in, const Tensor<T>&,
                                             const Tensor<T>& g, const std::vector<bool>& needed) {
        const auto& pts = *in[0];
        const std::size_t np = pts.shape()[0];
        std::vector<std::optional<Tensor<T>>> grads(in.size());
        if (needed[0]) {
            grads[0] = Tensor<T>(pts.shape());
            auto& gp = *grads[0];
            parallel_for(np, 256, [&](std::size_t b, std::size_t e) {
                for (std::size_t i = b; i < e; ++i) {
                    const double p[3] = {double(pts[3 * i]), double(pts[3 * i + 1]), double(pts[3 * i + 2])};
                    for (std::size_t l = 0; l < levels; ++l) {
                        const auto cs = detail::corners(cfg, info[l], p);
                        const auto table = in[1 + l]->data();
                        for (std::size_t f = 0; f < nf; ++f) {
                            const T go = g[i * width + l * nf + f];
                            for (int k = 0; k < 8; ++k) {
                                const T v = table[cs.index[k] * nf + f] * go;
                                for (int a = 0; a < 3; ++a) {
                                    if (cs.inside[a]) gp[3 * i + a] += T(cs.dweight[k][a]) * v;
                                }
                            }
                        }
                    }
                }
            });
        }
        // Scatter into the tables serially: rows are shared between points.
        for (std::size_t l = 0; l < levels; ++l) {
            if (!needed[1 + l]) continue;
            grads[1 + l] = Tensor<T>(in[1 + l]->shape());
            auto gt = grads[1 + l]->data();
            for (std::size_t i = 0; i < np; ++i) {
                const double p[3] = {double(pts[3 * i]), double(pts[3 * i + 1]), double(pts[3 * i + 2])};
                const auto cs = detail::corners(cfg, info[l], p);
                for (int k = 0; k < 8; ++k) {
                    for (std::size_t f = 0; f < nf; ++f) {
                        gt[cs.index[k] * nf + f] += T(cs.weight[k]) * g[i * width + l * nf + f];
                    }
                }
            }
        }
        return grads;
    };

    return ad::Graph<T>::apply(ad::OpKind::hash_encode, operands, forward, backward);
}

}  // namespace nerdi::field
