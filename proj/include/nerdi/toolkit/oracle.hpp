#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "nerdi/image.hpp"
#include "nerdi/render/camera.hpp"
#include "nerdi/render/volume.hpp"
#include "nerdi/rng.hpp"
#include "nerdi/trainer/view.hpp"

namespace nerdi::toolkit {

using render::Vec3;
using render::operator-;
using Color = std::array<double, 3>;

enum class PrimitiveKind { sphere, box };
enum class Texture { solid, checker, stripes };

struct Primitive {
    PrimitiveKind kind = PrimitiveKind::sphere;
    Vec3 center{0, 0, 0};
    Vec3 size{0.5, 0.5, 0.5};  // sphere: size[0] is the radius; box: half extents
    Color color{0.8, 0.3, 0.2};
    Color color2{0.2, 0.3, 0.8};  // second texture color
    Texture texture = Texture::solid;
    double density = 200.0;

    /// Signed distance to the surface, negative inside.
    double sdf(const Vec3& p) const {
        const Vec3 d = p - center;
        if (kind == PrimitiveKind::sphere) return render::norm(d) - size[0];
        double outside = 0, inside = -std::numeric_limits<double>::infinity();
        for (int a = 0; a < 3; ++a) {
            const double q = std::abs(d[a]) - size[a];
            outside += std::max(q, 0.0) * std::max(q, 0.0);
            inside = std::max(inside, q);
        }
        return std::sqrt(outside) + std::min(inside, 0.0);
    }

    Color color_at(const Vec3& p) const {
        const Vec3 d = p - center;
        bool alt = false;
        if (texture == Texture::checker) {
            long k = 0;
            for (int a = 0; a < 3; ++a) k += static_cast<long>(std::floor(4.0 * d[a]));
            alt = (k & 1) != 0;
        } else if (texture == Texture::stripes) {
            alt = (static_cast<long>(std::floor(6.0 * d[1])) & 1) != 0;
        }
        return alt ? color2 : color;
    }

    /// Nearest ray parameter where the ray enters the surface, or +inf.
    double intersect(const Vec3& o, const Vec3& dir) const {
        constexpr double inf = std::numeric_limits<double>::infinity();
        const Vec3 oc = o - center;
        if (kind == PrimitiveKind::sphere) {
            const double a = render::dot(dir, dir), b = render::dot(oc, dir), c = render::dot(oc, oc) - size[0] * size[0];
            const double disc = b * b - a * c;
            if (disc < 0) return inf;
            const double s = std::sqrt(disc);
            const double t0 = (-b - s) / a, t1 = (-b + s) / a;
            if (t0 >= 0) return t0;
            return t1 >= 0 ? 0.0 : inf;  // origin inside
        }
        double lo = -inf, hi = inf;
        for (int k = 0; k < 3; ++k) {
            if (dir[k] == 0.0) {
                if (std::abs(oc[k]) > size[k]) return inf;
                continue;
            }
            double ta = (-size[k] - oc[k]) / dir[k], tb = (size[k] - oc[k]) / dir[k];
            if (ta > tb) std::swap(ta, tb);
            lo = std::max(lo, ta);
            hi = std::min(hi, tb);
        }
        if (lo > hi || hi < 0) return inf;
        return std::max(lo, 0.0);
    }
};

struct OracleSceneSpec {
    std::vector<Primitive> primitives;
    render::Background background = render::Background::white;
    double ramp = 0.01;  // width of the density transition at each surface
    std::string label;
    std::uint64_t seed = 0;

    void validate() const {
        if (primitives.empty()) throw std::invalid_argument("oracle scene: no primitives");
        if (!(ramp > 0)) throw std::invalid_argument("oracle scene: ramp must be positive");
        for (const auto& p : primitives) {
            if (!(p.density >= 0)) throw std::invalid_argument("oracle scene: negative density");
            for (int a = 0; a < 3; ++a) {
                const double ext = p.kind == PrimitiveKind::sphere ? p.size[0] : p.size[a];
                if (!(ext > 0)) throw std::invalid_argument("oracle scene: primitive size must be positive");
                if (p.center[a] - ext < -1.0 - 1e-12 || p.center[a] + ext > 1.0 + 1e-12) {
                    throw std::invalid_argument("oracle scene: primitive leaves [-1, 1]^3");
                }
            }
            for (double c : p.color) {
                if (!(c >= 0 && c <= 1)) throw std::invalid_argument("oracle scene: color outside [0, 1]");
            }
        }
    }

    /// Canonical text form; hashed into dataset metadata.
    std::string describe() const {
        std::ostringstream os;
        os.precision(17);
        os << "label=" << label << " seed=" << seed << " ramp=" << ramp
           << " background=" << (background == render::Background::white ? "white" : "black");
        for (const auto& p : primitives) {
            os << " | " << (p.kind == PrimitiveKind::sphere ? "sphere" : "box") << " c=" << p.center[0] << ","
               << p.center[1] << "," << p.center[2] << " s=" << p.size[0] << "," << p.size[1] << "," << p.size[2]
               << " rgb=" << p.color[0] << "," << p.color[1] << "," << p.color[2] << " rgb2=" << p.color2[0] << ","
               << p.color2[1] << "," << p.color2[2] << " tex=" << int(p.texture) << " density=" << p.density;
        }
        return os.str();
    }

    /// Density ramps linearly from 0 to full across [ramp/2 outside, ramp/2 inside] each surface;
    /// color comes from the densest primitive.
    render::PointSample sample(const Vec3& p) const {
        render::PointSample s{{0, 0, 0}, 0.0};
        double best = 0;
        for (const auto& prim : primitives) {
            const double u = std::clamp(0.5 - prim.sdf(p) / ramp, 0.0, 1.0);
            const double sigma = prim.density * u;
            if (sigma > best) {
                best = sigma;
                s.rgb = prim.color_at(p);
            }
            s.sigma = std::max(s.sigma, sigma);
        }
        return s;
    }

    render::PointField field() const {
        return [this](const Vec3& p) { return sample(p); };
    }

    /// Distance along the ray to the first surface, 0 when the ray misses everything.
    double surface_distance(const render::Ray& ray) const {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& prim : primitives) best = std::min(best, prim.intersect(ray.origin, ray.direction));
        return std::isfinite(best) ? best : 0.0;
    }
};

// ---- procedural classes ----

inline const std::vector<std::string>& oracle_classes() {
    static const std::vector<std::string> names{"snowman", "mushroom", "crate", "dumbbell"};
    return names;
}

/// A random member of one of the oracle_classes(); size and colors vary with the seed.
inline OracleSceneSpec make_class_scene(const std::string& label, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x6f7261636c65ULL));
    auto jitter = [&](double v, double rel) { return v * (1.0 + rng.uniform(-rel, rel)); };
    auto tint = [&](Color c) {
        for (auto& v : c) v = std::clamp(v + rng.uniform(-0.1, 0.1), 0.0, 1.0);
        return c;
    };
    OracleSceneSpec s;
    s.label = label;
    s.seed = seed;
    auto sphere = [](Vec3 c, double r, Color col) {
        Primitive p;
        p.kind = PrimitiveKind::sphere;
        p.center = c;
        p.size = {r, r, r};
        p.color = col;
        return p;
    };
    auto box = [](Vec3 c, Vec3 h, Color col) {
        Primitive p;
        p.kind = PrimitiveKind::box;
        p.center = c;
        p.size = h;
        p.color = col;
        return p;
    };
    if (label == "snowman") {
        const double r0 = jitter(0.42, 0.1), r1 = jitter(0.27, 0.1);
        s.primitives.push_back(sphere({0, -0.55 + r0, 0}, r0, tint({0.85, 0.85, 0.9})));
        s.primitives.push_back(sphere({0, -0.55 + 2 * r0 + r1 * 0.8, 0}, r1, tint({0.9, 0.55, 0.2})));
    } else if (label == "mushroom") {
        const double h = jitter(0.3, 0.15), r = jitter(0.45, 0.1);
        s.primitives.push_back(box({0, -0.6 + h, 0}, {0.13, h, 0.13}, tint({0.9, 0.85, 0.7})));
        auto cap = sphere({0, -0.6 + 2 * h + 0.1, 0}, r, tint({0.8, 0.15, 0.1}));
        cap.texture = Texture::stripes;
        cap.color2 = tint({0.95, 0.9, 0.85});
        s.primitives.push_back(cap);
    } else if (label == "crate") {
        const Vec3 half{jitter(0.45, 0.12), jitter(0.4, 0.12), jitter(0.45, 0.12)};
        auto b = box({0, 0, 0}, half, tint({0.6, 0.4, 0.2}));
        b.texture = Texture::checker;
        b.color2 = tint({0.35, 0.22, 0.1});
        s.primitives.push_back(b);
    } else if (label == "dumbbell") {
        const double r = jitter(0.3, 0.12), half = jitter(0.55, 0.08);
        const auto col = tint({0.2, 0.3, 0.75});
        s.primitives.push_back(sphere({-half, 0, 0}, r, col));
        s.primitives.push_back(sphere({half, 0, 0}, r, col));
        s.primitives.push_back(box({0, 0, 0}, {half, 0.07, 0.07}, tint({0.55, 0.55, 0.55})));
    } else {
        throw std::invalid_argument("unknown oracle class '" + label + "'");
    }
    s.validate();
    return s;
}

// ---- rendering ----

struct OracleView {
    Image rgb;
    DepthMap depth;  // analytic surface distance along each pixel ray, 0 for background
    render::Intrinsics K;
    render::Pose pose;
};

/// Renders the analytic field directly and intersects the analytic surfaces for depth.
inline OracleView render_oracle(const OracleSceneSpec& spec, const render::Intrinsics& K, const render::Pose& pose,
                                int samples = 512) {
    spec.validate();
    render::RenderConfig rc;
    rc.samples_per_ray = samples;
    rc.background = spec.background;
    const auto r = render::render_image(spec.field(), K, pose, rc);
    const auto rays = render::image_rays(K, pose);
    DepthMap d = make_depth(std::size_t(K.height), std::size_t(K.width));
    for (std::size_t i = 0; i < rays.size(); ++i) {
        d[i] = spec.surface_distance(rays[i]);
    }
    return {r.rgb, d, K, pose};
}

/// Camera ring for datasets: view i at azimuth 360 i / n and a seed-drawn elevation;
/// view 0 sits at azimuth 0 and elevation 15 and serves as the input view.
inline std::vector<render::Pose> oracle_poses(std::size_t n, double radius, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x706f736573ULL));
    std::vector<render::Pose> out;
    for (std::size_t i = 0; i < n; ++i) {
        const double el = i == 0 ? 15.0 : rng.uniform(5.0, 35.0);
        out.push_back(trainer::orbit_pose(radius, el, 360.0 * double(i) / double(n)));
    }
    return out;
}

/// Pixel-wise mean of `members` other scenes of one class, each rendered from a view drawn
/// from `range`; a view-independent class template for the analytic prior.
inline Image class_mean_image(const std::string& label, const trainer::ViewRange& range, int size,
                              std::size_t members, std::uint64_t seed, int samples = 128) {
    if (members < 1) throw std::invalid_argument("class mean: need at least one member");
    Rng rng(derive_seed(seed, 0x6d65616eULL));
    Image mu = make_image(std::size_t(size), std::size_t(size));
    for (std::size_t k = 0; k < members; ++k) {
        const auto spec = make_class_scene(label, derive_seed(seed, 0x6d656d626572ULL + k));
        const auto v = trainer::sample_view(rng, range, size);
        const auto r = render_oracle(spec, v.K, v.pose, samples);
        for (std::size_t i = 0; i < mu.numel(); ++i) mu[i] += r.rgb[i];
    }
    for (auto& x : mu.data()) x /= double(members);
    return mu;
}

/// Affine distortion plus Gaussian noise on the pixels that carry depth (d > 0).
inline DepthMap distort_depth(const DepthMap& d, double scale, double shift, double noise, Rng& rng) {
    if (!(scale > 0)) throw std::invalid_argument("distort_depth: scale must be positive");
    DepthMap out = d;
    for (std::size_t i = 0; i < out.numel(); ++i) {
        if (d[i] > 0) out[i] = std::max(1e-6, scale * d[i] + shift + noise * rng.normal());
    }
    return out;
}

}  // namespace nerdi::toolkit
