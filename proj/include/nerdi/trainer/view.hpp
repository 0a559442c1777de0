#pragma once

#include <cmath>

#include "nerdi/render/camera.hpp"
#include "nerdi/rng.hpp"
#include "nerdi/trainer/config.hpp"

namespace nerdi::trainer {

struct SampledView {
    render::Intrinsics K;
    render::Pose pose;
    double radius = 0, elevation = 0, azimuth = 0;  // degrees for the angles
};

/// Camera at distance r, elevation el and azimuth az, looking at the origin with world up +y.
/// az = 0, el = 0 puts the camera on the -z axis.
inline render::Pose orbit_pose(double radius, double elevation_deg, double azimuth_deg) {
    const double el = elevation_deg * M_PI / 180.0, az = azimuth_deg * M_PI / 180.0;
    const render::Vec3 eye{radius * std::cos(el) * std::sin(az), radius * std::sin(el), -radius * std::cos(el) * std::cos(az)};
    return render::look_at(eye, {0, 0, 0}, {0, 1, 0});
}

/// Radius and elevation uniform in their intervals, azimuth uniform on [0, 360).
inline SampledView sample_view(Rng& rng, const ViewRange& range, int size) {
    range.validate();
    SampledView v;
    v.radius = rng.uniform(range.radius_min, range.radius_max);
    v.elevation = rng.uniform(range.elevation_min, range.elevation_max);
    v.azimuth = rng.uniform(0.0, 360.0);
    v.pose = orbit_pose(v.radius, v.elevation, v.azimuth);
    v.K = render::Intrinsics::from_fov(size, size, range.fov);
    return v;
}

inline SampledView sample_view(Rng& rng, const SynthesisConfig& cfg) { return sample_view(rng, cfg.view, cfg.render_size); }

/// Input camera for images without one: on the -z axis at distance 2.5, axis-aligned with
/// world up on screen (the azimuth 0, elevation 0 orbit pose), 50 degree FOV.
inline std::pair<render::Intrinsics, render::Pose> canonical_camera(int width, int height) {
    return {render::Intrinsics::from_fov(width, height, 50.0), orbit_pose(2.5, 0.0, 0.0)};
}

}  // namespace nerdi::trainer
