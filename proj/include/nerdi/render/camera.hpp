#pragma once

#include <array>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "nerdi/error.hpp"

namespace nerdi::render {

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalize(const Vec3& a) { return (1.0 / norm(a)) * a; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

struct Intrinsics {
    double fx = 1, fy = 1, cx = 0, cy = 0;
    int width = 1, height = 1;

    void validate() const {
        if (!(fx > 0 && fy > 0)) throw std::invalid_argument("camera: focal lengths must be positive");
        if (width < 1 || height < 1) throw std::invalid_argument("camera: image size must be positive");
        if (!(cx >= 0 && cx < width && cy >= 0 && cy < height)) {
            throw std::invalid_argument("camera: principal point outside the image");
        }
    }

    /// Centered principal point, square pixels, given vertical field of view.
    static Intrinsics from_fov(int width, int height, double vfov_deg) {
        const double f = 0.5 * height / std::tan(0.5 * vfov_deg * M_PI / 180.0);
        return {f, f, 0.5 * width, 0.5 * height, width, height};
    }

    /// Same view at a different pixel resolution.
    Intrinsics scaled(int new_width, int new_height) const {
        const double sx = double(new_width) / width, sy = double(new_height) / height;
        return {fx * sx, fy * sy, cx * sx, cy * sy, new_width, new_height};
    }
};

/// Camera-to-world transform; camera axes are x-right, y-down, z-forward.
struct Pose {
    std::array<double, 9> R{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major
    Vec3 t{0, 0, 0};

    Vec3 rotate(const Vec3& v) const {
        return {R[0] * v[0] + R[1] * v[1] + R[2] * v[2], R[3] * v[0] + R[4] * v[1] + R[5] * v[2],
                R[6] * v[0] + R[7] * v[1] + R[8] * v[2]};
    }
    Vec3 column(int c) const { return {R[c], R[3 + c], R[6 + c]}; }
    Vec3 forward() const { return column(2); }

    void validate(double tol = 1e-9) const {
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) {
                const double d = dot(column(i), column(j)) - (i == j ? 1.0 : 0.0);
                if (std::abs(d) > tol) throw std::invalid_argument("camera: rotation is not orthonormal");
            }
        }
        if (std::abs(dot(cross(column(0), column(1)), column(2)) - 1.0) > tol) {
            throw std::invalid_argument("camera: rotation has determinant -1");
        }
    }
};

/// Camera at `eye` looking at `target`; `up` is the world up direction.
inline Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up = {0, 1, 0}) {
    const Vec3 f = normalize(target - eye);
    Vec3 r = cross(f, up);
    if (norm(r) < 1e-12) r = cross(f, Vec3{0, 0, 1});
    r = normalize(r);
    const Vec3 d = cross(f, r);  // image-down
    Pose p;
    for (int i = 0; i < 3; ++i) {
        p.R[3 * i + 0] = r[i];
        p.R[3 * i + 1] = d[i];
        p.R[3 * i + 2] = f[i];
    }
    p.t = eye;
    return p;
}

struct Box {
    double min = -1.0, max = 1.0;
};

struct Ray {
    Vec3 origin{0, 0, 0};
    Vec3 direction{0, 0, 1};
    double t_near = 0, t_far = 0;
    bool hit = false;  // false: misses the scene box, renders as background
};

constexpr double kMinNear = 1e-3;

/// Slab intersection with the cube [min, max]^3; near distance clamped to kMinNear.
inline Ray clip_to_box(Vec3 origin, Vec3 direction, const Box& box) {
    Ray ray{origin, direction, 0, 0, false};
    double t0 = -INFINITY, t1 = INFINITY;
    for (int a = 0; a < 3; ++a) {
        if (direction[a] == 0.0) {
            if (origin[a] < box.min || origin[a] > box.max) return ray;
            continue;
        }
        double ta = (box.min - origin[a]) / direction[a];
        double tb = (box.max - origin[a]) / direction[a];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
    }
    t0 = std::max(t0, kMinNear);
    if (t1 <= t0) return ray;
    ray.t_near = t0;
    ray.t_far = t1;
    ray.hit = true;
    return ray;
}

/// Ray through image-plane position (u, v) in pixels; pixel (i, j) has its center at (i + 0.5, j + 0.5).
inline Ray pixel_to_ray(const Intrinsics& K, const Pose& pose, double u, double v, const Box& box = {}) {
    if (!(u >= 0 && u <= K.width && v >= 0 && v <= K.height)) {
        throw std::out_of_range("pixel_to_ray: pixel outside the image");
    }
    const Vec3 cam{(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0};
    return clip_to_box(pose.t, normalize(pose.rotate(cam)), box);
}

// ---- camera records: one line of key=value tokens ----

inline std::string format_camera(const Intrinsics& K, const Pose& P) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "fx=" << K.fx << " fy=" << K.fy << " cx=" << K.cx << " cy=" << K.cy << " width=" << K.width
       << " height=" << K.height << " R=";
    for (int i = 0; i < 9; ++i) os << (i ? "," : "") << P.R[i];
    os << " t=" << P.t[0] << "," << P.t[1] << "," << P.t[2] << " convention=x_right_y_down_z_forward";
    return os.str();
}

inline std::vector<double> parse_list(const std::string& s, std::size_t n, const std::string& key) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::logic_error&) {
            throw FormatError("camera record: bad number '" + item + "' in " + key);
        }
    }
    if (out.size() != n) throw FormatError("camera record: " + key + " needs " + std::to_string(n) + " values");
    return out;
}

inline std::pair<Intrinsics, Pose> parse_camera(const std::string& line) {
    std::map<std::string, std::string> kv;
    std::istringstream is(line);
    std::string tok;
    while (is >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) throw FormatError("camera record: token without '=': " + tok);
        kv[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    for (const char* k : {"fx", "fy", "cx", "cy", "width", "height", "R", "t"}) {
        if (!kv.count(k)) throw FormatError(std::string("camera record: missing ") + k);
    }
    if (kv.count("convention") && kv["convention"] != "x_right_y_down_z_forward") {
        throw FormatError("camera record: unsupported convention " + kv["convention"]);
    }
    Intrinsics K;
    K.fx = parse_list(kv["fx"], 1, "fx")[0];
    K.fy = parse_list(kv["fy"], 1, "fy")[0];
    K.cx = parse_list(kv["cx"], 1, "cx")[0];
    K.cy = parse_list(kv["cy"], 1, "cy")[0];
    K.width = static_cast<int>(parse_list(kv["width"], 1, "width")[0]);
    K.height = static_cast<int>(parse_list(kv["height"], 1, "height")[0]);
    Pose P;
    const auto r = parse_list(kv["R"], 9, "R");
    std::copy(r.begin(), r.end(), P.R.begin());
    const auto t = parse_list(kv["t"], 3, "t");
    P.t = {t[0], t[1], t[2]};
    K.validate();
    P.validate(1e-6);
    return {K, P};
}

}  // namespace nerdi::render
