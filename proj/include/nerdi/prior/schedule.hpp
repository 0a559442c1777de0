#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "nerdi/autodiff.hpp"
#include "nerdi/rng.hpp"

namespace nerdi::prior {

struct NoiseSchedule {
    std::vector<double> beta;
    std::vector<double> alpha_bar;

    int steps() const { return static_cast<int>(beta.size()); }

    /// ᾱ at timestep t in [0, T); t = -1 is the clean limit ᾱ = 1.
    double alpha_bar_at(int t) const {
        if (t == -1) return 1.0;
        if (t < -1 || t >= steps()) {
            throw std::out_of_range("timestep " + std::to_string(t) + " outside [0, " + std::to_string(steps()) + ")");
        }
        return alpha_bar[static_cast<std::size_t>(t)];
    }
};

inline NoiseSchedule schedule_from_betas(std::vector<double> beta) {
    if (beta.empty()) throw std::invalid_argument("noise schedule: T must be >= 1");
    NoiseSchedule s;
    double prod = 1.0;
    for (double b : beta) {
        if (!(b > 0.0 && b < 1.0)) throw std::invalid_argument("noise schedule: beta must lie in (0, 1)");
        prod *= 1.0 - b;
        s.alpha_bar.push_back(prod);
    }
    s.beta = std::move(beta);
    return s;
}

/// Linearly spaced betas from beta_start to beta_end.
inline NoiseSchedule build_schedule(int steps, double beta_start, double beta_end) {
    if (steps < 1) throw std::invalid_argument("noise schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw std::invalid_argument("noise schedule: need 0 < beta_start <= beta_end < 1");
    }
    std::vector<double> beta(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i) {
        beta[i] = steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * i / (steps - 1);
    }
    return schedule_from_betas(std::move(beta));
}

inline NoiseSchedule default_schedule() { return build_schedule(1000, 1e-4, 0.02); }

/// Uniform timestep in [lo_frac·T, hi_frac·T].
inline int sample_timestep(Rng& rng, const NoiseSchedule& s, double lo_frac = 0.02, double hi_frac = 0.98) {
    const long lo = std::lround(lo_frac * s.steps());
    const long hi = std::min<long>(std::lround(hi_frac * s.steps()), s.steps() - 1);
    return static_cast<int>(rng.integer(lo, std::max(lo, hi)));
}

template <class T>
ad::Tensor<T> normal_tensor(const ad::Shape& shape, Rng& rng) {
    ad::Tensor<T> t(shape);
    for (auto& v : t.data()) v = T(rng.normal());
    return t;
}

/// z_t = sqrt(ᾱ) z0 + sqrt(1 - ᾱ) eps, with ᾱ given directly.
template <class T>
ad::Var<T> q_sample_ab(const ad::Var<T>& z0, double alpha_bar, const ad::Var<T>& eps) {
    if (z0.shape() != eps.shape()) {
        throw ShapeError("q_sample: noise shape " + ad::shape_str(eps.shape()) + " != latent shape " +
                         ad::shape_str(z0.shape()));
    }
    return z0 * T(std::sqrt(alpha_bar)) + eps * T(std::sqrt(1.0 - alpha_bar));
}

template <class T>
ad::Var<T> q_sample(const ad::Var<T>& z0, int t, const ad::Var<T>& eps, const NoiseSchedule& s) {
    return q_sample_ab(z0, s.alpha_bar_at(t), eps);
}

}  // namespace nerdi::prior
