#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "nerdi/autodiff.hpp"
#include "nerdi/prior/schedule.hpp"

namespace nerdi::prior {

/// Conditioning as [s0; s*]: a frozen caption section followed by a learnable inverted section.
struct GuidanceEmbedding {
    ad::Tensor<double> caption;    // [K0, D]
    ad::Tensor<double> inversion;  // [K*, D]

    std::size_t dim() const { return caption.dim(1); }
    std::size_t rows() const { return caption.dim(0) + inversion.dim(0); }

    ad::Tensor<double> joint() const {
        return ad::concat<double>({ad::Var<double>::constant(caption), ad::Var<double>::constant(inversion)}, 0).value();
    }
};

inline GuidanceEmbedding concat_guidance(const ad::Tensor<double>& s0, const ad::Tensor<double>& s_star) {
    if (s0.rank() != 2 || s_star.rank() != 2) throw ShapeError("concat_guidance: sections must be [K, D] matrices");
    if (s0.dim(1) != s_star.dim(1)) {
        throw ShapeError("concat_guidance: embedding dimension mismatch (" + std::to_string(s0.dim(1)) + " vs " +
                         std::to_string(s_star.dim(1)) + ")");
    }
    return {s0, s_star};
}

/// Noise predictor eps_theta(z_t, t, cond). `cond` is a [K, D] embedding matrix.
template <class T>
class Denoiser {
public:
    virtual ~Denoiser() = default;
    virtual ad::Var<T> predict(const ad::Var<T>& z_t, int t, const ad::Var<T>& cond) const = 0;
    /// Whether predict() records a differentiable graph w.r.t. z_t and cond.
    virtual bool differentiable() const { return true; }
    virtual std::string name() const = 0;
};

template <class T>
class LatentCodec {
public:
    virtual ~LatentCodec() = default;
    virtual ad::Var<T> encode(const ad::Var<T>& image) const = 0;
    virtual ad::Var<T> decode(const ad::Var<T>& latent) const = 0;
    virtual bool differentiable() const { return true; }
};

template <class T>
class IdentityCodec final : public LatentCodec<T> {
public:
    ad::Var<T> encode(const ad::Var<T>& image) const override { return image; }
    ad::Var<T> decode(const ad::Var<T>& latent) const override { return latent; }
};

/// eps_hat = sqrt(1-ᾱ) (z_t - sqrt(ᾱ) mu) / (ᾱ sigma0² + 1 - ᾱ)
template <class T>
ad::Var<T> analytic_gaussian_eps(const ad::Var<T>& z_t, double alpha_bar, const ad::Var<T>& mu, double sigma0) {
    if (z_t.shape() != mu.shape()) {
        throw ShapeError("analytic prior: latent shape " + ad::shape_str(z_t.shape()) + " != mean shape " +
                         ad::shape_str(mu.shape()));
    }
    const double denom = alpha_bar * sigma0 * sigma0 + 1.0 - alpha_bar;
    return (z_t - mu * T(std::sqrt(alpha_bar))) * T(std::sqrt(1.0 - alpha_bar) / denom);
}

/// Exact denoiser for data distributed as N(mu, sigma0² I); ignores the conditioning.
template <class T>
class AnalyticGaussianPrior final : public Denoiser<T> {
public:
    AnalyticGaussianPrior(ad::Tensor<T> mu, double sigma0, NoiseSchedule sched)
        : mu_(ad::Var<T>::constant(std::move(mu))), sigma0_(sigma0), sched_(std::move(sched)) {
        if (!(sigma0 >= 0.0) || !std::isfinite(sigma0)) throw std::invalid_argument("analytic prior: sigma0 must be >= 0");
        if (!mu_.value().all_finite()) throw DomainError("analytic prior: mean is not finite");
    }

    ad::Var<T> predict(const ad::Var<T>& z_t, int t, const ad::Var<T>&) const override {
        return analytic_gaussian_eps(z_t, sched_.alpha_bar_at(t), mu_, sigma0_);
    }
    std::string name() const override { return "analytic"; }

    const ad::Tensor<T>& mean() const { return mu_.value(); }
    double sigma0() const { return sigma0_; }

private:
    ad::Var<T> mu_;
    double sigma0_;
    NoiseSchedule sched_;
};

/// ‖eps - eps_theta(q_sample(encode(x), t, eps), t, cond)‖², differentiable w.r.t. x and cond
/// when the backends are.
template <class T>
ad::Var<T> diffusion_residual(const Denoiser<T>& denoiser, const LatentCodec<T>& codec, const ad::Var<T>& x,
                              const ad::Var<T>& cond, int t, const ad::Tensor<T>& eps, const NoiseSchedule& sched) {
    const auto z0 = codec.encode(x);
    const auto noise = ad::Var<T>::constant(eps);
    const auto z_t = q_sample(z0, t, noise, sched);
    const auto eps_hat = denoiser.predict(z_t, t, cond);
    if (eps_hat.shape() != eps.shape()) {
        throw ShapeError(denoiser.name() + " denoiser returned shape " + ad::shape_str(eps_hat.shape()) +
                         " for input " + ad::shape_str(eps.shape()));
    }
    const auto diff = noise - eps_hat;
    return ad::sum(diff * diff);
}

}  // namespace nerdi::prior
