#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nerdi/autodiff.hpp"
#include "nerdi/field/field.hpp"
#include "nerdi/image.hpp"
#include "nerdi/render/camera.hpp"
#include "nerdi/rng.hpp"

namespace nerdi::render {

enum class Background { white, black };
enum class DepthMode { expected, optical };

struct RenderConfig {
    int samples_per_ray = 128;
    bool stratified_jitter = false;
    Background background = Background::white;
    DepthMode depth_mode = DepthMode::expected;
    std::uint64_t seed = 0;

    void validate() const {
        if (samples_per_ray < 2) throw std::invalid_argument("render: samples_per_ray must be >= 2");
    }
    double background_value() const { return background == Background::white ? 1.0 : 0.0; }
};

constexpr double kOpacityFloor = 1e-6;

/// Sample distances t_i = t_near + (i + u_i)·Δ with u_i = 0 unless jittered, and
/// segment widths δ_i = t_{i+1} - t_i (the last segment runs to t_far).
inline void sample_ray(const Ray& ray, const RenderConfig& cfg, std::uint64_t ray_id, double* t, double* delta) {
    const int n = cfg.samples_per_ray;
    const double step = (ray.t_far - ray.t_near) / n;
    Rng rng(derive_seed(cfg.seed, ray_id));
    for (int i = 0; i < n; ++i) {
        const double u = cfg.stratified_jitter ? rng.uniform() : 0.0;
        t[i] = ray.t_near + (i + u) * step;
    }
    for (int i = 0; i + 1 < n; ++i) delta[i] = t[i + 1] - t[i];
    delta[n - 1] = ray.t_far - t[n - 1];
}

struct RayResult {
    std::array<double, 3> rgb{};
    double depth = 0;
    double opacity = 0;
    std::vector<double> weights;
    std::vector<double> t;
    std::vector<double> delta;
    std::vector<double> sigma;
    bool miss = false;         // ray never entered the scene box
    bool transparent = false;  // opacity below floor; expected depth reported as t_far
};

struct PointSample {
    std::array<double, 3> rgb;
    double sigma;
};

using PointField = std::function<PointSample(const Vec3&)>;

/// Depth from quadrature weights: expected termination distance or optical thickness.
inline double render_depth(const std::vector<double>& weights, const std::vector<double>& t,
                           const std::vector<double>& sigma, const std::vector<double>& delta, DepthMode mode,
                           double t_far, bool* transparent = nullptr) {
    if (mode == DepthMode::optical) {
        double tau = 0;
        for (std::size_t i = 0; i < sigma.size(); ++i) tau += sigma[i] * delta[i];
        return tau;
    }
    double wt = 0, ws = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        wt += weights[i] * t[i];
        ws += weights[i];
    }
    if (ws < kOpacityFloor) {
        if (transparent) *transparent = true;
        return t_far;
    }
    return wt / std::max(ws, kOpacityFloor);
}

/// Quadrature of the emission-absorption integral along one ray for a point-wise field.
inline RayResult render_ray(const PointField& field, const Ray& ray, const RenderConfig& cfg, std::uint64_t ray_id = 0) {
    cfg.validate();
    RayResult r;
    const double bg = cfg.background_value();
    if (!ray.hit) {
        r.rgb = {bg, bg, bg};
        r.miss = true;
        return r;
    }
    const int n = cfg.samples_per_ray;
    r.t.resize(n);
    r.delta.resize(n);
    r.weights.resize(n);
    r.sigma.resize(n);
    sample_ray(ray, cfg, ray_id, r.t.data(), r.delta.data());
    double trans = 1.0;
    for (int i = 0; i < n; ++i) {
        const auto s = field(ray.origin + r.t[i] * ray.direction);
        if (!std::isfinite(s.sigma) || !std::isfinite(s.rgb[0]) || !std::isfinite(s.rgb[1]) || !std::isfinite(s.rgb[2])) {
            throw DomainError("render_ray: non-finite field output at sample " + std::to_string(i));
        }
        r.sigma[i] = s.sigma;
        const double keep = std::exp(-s.sigma * r.delta[i]);
        const double w = trans * (1.0 - keep);
        r.weights[i] = w;
        for (int c = 0; c < 3; ++c) r.rgb[c] += w * s.rgb[c];
        r.opacity += w;
        trans *= keep;
    }
    for (int c = 0; c < 3; ++c) r.rgb[c] += (1.0 - r.opacity) * bg;
    r.depth = render_depth(r.weights, r.t, r.sigma, r.delta, cfg.depth_mode, ray.t_far, &r.transparent);
    return r;
}

// ---- batched, differentiable rendering of a learned field ----

template <class T>
struct RenderBatch {
    ad::Var<T> rgb;      // [R, 3]
    ad::Var<T> depth;    // [R]
    ad::Var<T> opacity;  // [R]
    ad::Var<T> weights;  // [H, S] over hit rays only
    std::vector<bool> miss;
    std::vector<bool> transparent;
};

/// Renders rays against field params `vars` (leaves or constants). Ray ids seed jitter so
/// results do not depend on how rays are batched.
template <class T>
RenderBatch<T> render_rays(const std::vector<ad::Var<T>>& vars, const field::FieldConfig& fcfg,
                           const std::vector<Ray>& rays, const std::vector<std::uint64_t>& ray_ids,
                           const RenderConfig& cfg) {
    using ad::Tensor;
    using ad::Var;
    cfg.validate();
    if (ray_ids.size() != rays.size()) throw ShapeError("render_rays: one id per ray required");
    const std::size_t n_rays = rays.size();
    const std::size_t S = static_cast<std::size_t>(cfg.samples_per_ray);
    const double bg = cfg.background_value();

    std::vector<std::size_t> hit_rows(n_rays);
    std::vector<std::size_t> hits;
    RenderBatch<T> out;
    out.miss.resize(n_rays);
    out.transparent.assign(n_rays, false);
    for (std::size_t r = 0; r < n_rays; ++r) {
        out.miss[r] = !rays[r].hit;
        if (rays[r].hit) {
            hit_rows[r] = hits.size();
            hits.push_back(r);
        }
    }
    const std::size_t H = hits.size();
    // Row H of every per-ray table below is the background/miss row.
    for (std::size_t r = 0; r < n_rays; ++r) {
        if (!rays[r].hit) hit_rows[r] = H;
    }

    Var<T> rgb_hit, depth_hit, opacity_hit;
    if (H > 0) {
        Tensor<T> points({H * S, 3});
        Tensor<T> t({H, S}), delta({H, S});
        std::vector<double> tb(S), db(S);
        for (std::size_t h = 0; h < H; ++h) {
            const Ray& ray = rays[hits[h]];
            sample_ray(ray, cfg, ray_ids[hits[h]], tb.data(), db.data());
            for (std::size_t i = 0; i < S; ++i) {
                t[h * S + i] = T(tb[i]);
                delta[h * S + i] = T(db[i]);
                for (int a = 0; a < 3; ++a) points[(h * S + i) * 3 + a] = T(ray.origin[a] + tb[i] * ray.direction[a]);
            }
        }
        const auto f = field::eval(Var<T>::constant(std::move(points)), vars, fcfg);
        const auto& sv = f.sigma.value();
        const auto& cv = f.rgb.value();
        for (std::size_t k = 0; k < sv.numel(); ++k) {
            if (!std::isfinite(sv[k]) || !std::isfinite(cv[3 * k]) || !std::isfinite(cv[3 * k + 1]) ||
                !std::isfinite(cv[3 * k + 2])) {
                throw DomainError("render: non-finite field output at ray " + std::to_string(hits[k / S]) +
                                  ", sample " + std::to_string(k % S));
            }
        }
        const auto sigma = ad::reshape(f.sigma, {H, S});
        const auto colors = ad::reshape(f.rgb, {H, S, 3});
        const auto keep = ad::exp(-(sigma * Var<T>::constant(delta)));
        const auto trans = ad::cumprod_exclusive(keep);
        const auto w = trans * (T(1) - keep);
        out.weights = w;
        opacity_hit = ad::sum(w, 1);
        rgb_hit = ad::sum(ad::reshape(w, {H, S, 1}) * colors, 1) +
                  ad::reshape(T(1) - opacity_hit, {H, 1}) * T(bg);
        if (cfg.depth_mode == DepthMode::optical) {
            depth_hit = ad::sum(sigma * Var<T>::constant(delta), 1);
        } else {
            Tensor<T> far_fill({H});
            const auto& op = opacity_hit.value();
            for (std::size_t h = 0; h < H; ++h) {
                if (op[h] < T(kOpacityFloor)) {
                    out.transparent[hits[h]] = true;
                    far_fill[h] = T(rays[hits[h]].t_far);
                }
            }
            depth_hit = ad::div(ad::sum(w * Var<T>::constant(t), 1), opacity_hit, T(kOpacityFloor)) +
                        Var<T>::constant(std::move(far_fill));
        }
    }

    if (H == n_rays) {
        out.rgb = rgb_hit;
        out.depth = depth_hit;
        out.opacity = opacity_hit;
        return out;
    }
    auto rows = std::make_shared<const std::vector<std::size_t>>(hit_rows);
    auto with_background = [&](const Var<T>& hit_part, Tensor<T> fill) {
        if (H == 0) return ad::gather(Var<T>::constant(std::move(fill)), rows);
        return ad::gather(ad::concat<T>({hit_part, Var<T>::constant(std::move(fill))}, 0), rows);
    };
    out.rgb = with_background(rgb_hit, Tensor<T>({1, 3}, T(bg)));
    out.depth = ad::reshape(with_background(H ? ad::reshape(depth_hit, {H, 1}) : depth_hit, Tensor<T>({1, 1}, T(0))), {n_rays});
    out.opacity = ad::reshape(with_background(H ? ad::reshape(opacity_hit, {H, 1}) : opacity_hit, Tensor<T>({1, 1}, T(0))), {n_rays});
    return out;
}

/// Rays of every pixel center, row-major; ray id = pixel index.
inline std::vector<Ray> image_rays(const Intrinsics& K, const Pose& pose, const Box& box = {}) {
    K.validate();
    std::vector<Ray> rays;
    rays.reserve(static_cast<std::size_t>(K.width) * K.height);
    for (int y = 0; y < K.height; ++y) {
        for (int x = 0; x < K.width; ++x) rays.push_back(pixel_to_ray(K, pose, x + 0.5, y + 0.5, box));
    }
    return rays;
}

template <class T>
struct ViewRender {
    ad::Var<T> rgb;    // [H, W, 3]
    ad::Var<T> depth;  // [H, W]
    ad::Var<T> opacity;
    std::vector<bool> miss, transparent;
};

/// Whole-view render as one differentiable batch.
template <class T>
ViewRender<T> render_view(const std::vector<ad::Var<T>>& vars, const field::FieldConfig& fcfg, const Intrinsics& K,
                          const Pose& pose, const RenderConfig& cfg) {
    const auto rays = image_rays(K, pose, Box{fcfg.grid.box_min, fcfg.grid.box_max});
    std::vector<std::uint64_t> ids(rays.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    auto b = render_rays(vars, fcfg, rays, ids, cfg);
    const std::size_t h = static_cast<std::size_t>(K.height), w = static_cast<std::size_t>(K.width);
    return {ad::reshape(b.rgb, {h, w, 3}), ad::reshape(b.depth, {h, w}), ad::reshape(b.opacity, {h, w}),
            std::move(b.miss), std::move(b.transparent)};
}

struct RenderedImage {
    Image rgb;
    DepthMap depth;
    DepthMap opacity;
};

/// Non-differentiable image render in ray chunks; output is independent of chunk size
/// and worker count.
template <class T>
RenderedImage render_image(const field::FieldParams<T>& params, const Intrinsics& K, const Pose& pose,
                           const RenderConfig& cfg, std::size_t chunk = 4096) {
    const auto rays = image_rays(K, pose, Box{params.config.grid.box_min, params.config.grid.box_max});
    const auto vars = field::constants(params);
    const std::size_t h = static_cast<std::size_t>(K.height), w = static_cast<std::size_t>(K.width);
    RenderedImage out{make_image(h, w), make_depth(h, w), make_depth(h, w)};
    for (std::size_t b = 0; b < rays.size(); b += chunk) {
        const std::size_t e = std::min(rays.size(), b + chunk);
        std::vector<Ray> part(rays.begin() + long(b), rays.begin() + long(e));
        std::vector<std::uint64_t> ids(e - b);
        for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = b + i;
        const auto r = render_rays(vars, params.config, part, ids, cfg);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            for (int c = 0; c < 3; ++c) out.rgb[(b + i) * 3 + c] = double(r.rgb.value()[i * 3 + c]);
            out.depth[b + i] = double(r.depth.value()[i]);
            out.opacity[b + i] = double(r.opacity.value()[i]);
        }
    }
    return out;
}

/// Image render of a point-wise field (analytic scenes).
inline RenderedImage render_image(const PointField& field, const Intrinsics& K, const Pose& pose,
                                  const RenderConfig& cfg, const Box& box = {}) {
    const auto rays = image_rays(K, pose, box);
    const std::size_t h = static_cast<std::size_t>(K.height), w = static_cast<std::size_t>(K.width);
    RenderedImage out{make_image(h, w), make_depth(h, w), make_depth(h, w)};
    parallel_for(rays.size(), 64, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            const auto r = render_ray(field, rays[i], cfg, i);
            for (int c = 0; c < 3; ++c) out.rgb[i * 3 + c] = r.rgb[c];
            out.depth[i] = r.depth;
            out.opacity[i] = r.opacity;
        }
    });
    return out;
}

}  // namespace nerdi::render
