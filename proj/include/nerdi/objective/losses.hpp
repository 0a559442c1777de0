#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "nerdi/autodiff.hpp"
#include "nerdi/prior/denoiser.hpp"

namespace nerdi::objective {

constexpr double kVarianceGuard = 1e-8;

namespace detail {

/// Indices of the pixels selected by `mask` (nonzero entries), or all `pixels` without a mask.
inline std::vector<std::size_t> selected(std::size_t pixels, const ad::Tensor<double>* mask, const char* what) {
    std::vector<std::size_t> idx;
    if (!mask) {
        idx.resize(pixels);
        for (std::size_t i = 0; i < pixels; ++i) idx[i] = i;
        return idx;
    }
    if (mask->numel() != pixels) {
        throw ShapeError(std::string(what) + ": mask has " + std::to_string(mask->numel()) + " entries for " +
                         std::to_string(pixels) + " pixels");
    }
    for (std::size_t i = 0; i < pixels; ++i) {
        if ((*mask)[i] != 0.0) idx.push_back(i);
    }
    return idx;
}

}  // namespace detail

/// Mean squared error over the masked pixels and all channels. The last axis is the channel
/// axis; `mask` has one entry per pixel.
template <class T>
ad::Var<T> recon_loss(const ad::Var<T>& render, const ad::Var<T>& target, const ad::Tensor<double>* mask = nullptr) {
    if (render.shape() != target.shape()) {
        throw ShapeError("recon_loss: render " + ad::shape_str(render.shape()) + " vs target " +
                         ad::shape_str(target.shape()));
    }
    if (render.shape().empty() || render.numel() == 0) throw ShapeError("recon_loss: empty image");
    const auto diff = render - target;
    if (!mask) return ad::mean(diff * diff);
    const std::size_t channels = render.shape().back();
    const std::size_t pixels = render.numel() / channels;
    auto idx = detail::selected(pixels, mask, "recon_loss");
    if (idx.empty()) throw std::invalid_argument("recon_loss: mask selects no pixels");
    const auto picked = ad::gather(ad::reshape(diff, {pixels, channels}), std::move(idx));
    return ad::mean(picked * picked);
}

/// 1 - Pearson(d_hat, d_est) over the masked pixels. The rendered-depth variance is clamped
/// below at kVarianceGuard; a constant estimate is rejected.
template <class T>
ad::Var<T> depth_corr_loss(const ad::Var<T>& d_hat, const ad::Tensor<double>& d_est,
                           const ad::Tensor<double>* mask = nullptr) {
    if (d_hat.numel() != d_est.numel() || d_hat.shape() != d_est.shape()) {
        throw ShapeError("depth_corr_loss: rendered depth " + ad::shape_str(d_hat.shape()) + " vs estimate " +
                         ad::shape_str(d_est.shape()));
    }
    const std::size_t n_all = d_hat.numel();
    auto idx = detail::selected(n_all, mask, "depth_corr_loss");
    const std::size_t n = idx.size();
    if (n < 2) throw std::invalid_argument("depth_corr_loss: need at least 2 pixels, got " + std::to_string(n));

    double mean_e = 0;
    for (std::size_t i : idx) mean_e += d_est[i];
    mean_e /= double(n);
    double var_e = 0, scale = 0;
    for (std::size_t i : idx) {
        var_e += (d_est[i] - mean_e) * (d_est[i] - mean_e);
        scale = std::max(scale, std::abs(d_est[i]));
    }
    var_e /= double(n);
    if (!std::isfinite(var_e)) throw DomainError("depth_corr_loss: non-finite estimated depth");
    if (var_e <= 1e-24 * (1.0 + scale * scale)) throw DomainError("degenerate estimated depth");

    ad::Tensor<T> e_norm({n});
    const double inv_sd = 1.0 / std::sqrt(var_e);
    for (std::size_t k = 0; k < n; ++k) e_norm[k] = T((d_est[idx[k]] - mean_e) * inv_sd);

    auto h = ad::reshape(d_hat, {n_all});
    if (mask) h = ad::gather(h, std::move(idx));
    const auto centered = h - ad::mean(h);
    const auto var_h = ad::mean(centered * centered);
    const auto cov = ad::mean(centered * ad::Var<T>::constant(std::move(e_norm)));
    const auto rho = cov / ad::power(ad::clamp_min(var_h, T(kVarianceGuard)), T(0.5));
    return T(1) - rho;
}

/// Plain Pearson correlation of two equally sized samples.
inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("pearson: need two samples of equal size >= 2");
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
    ma /= double(a.size());
    mb /= double(b.size());
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa <= 0 || sbb <= 0) throw DomainError("pearson: zero-variance sample");
    return sab / std::sqrt(saa * sbb);
}

// ---- novel-view diffusion term ----

enum class GradMode { distilled, full };
enum class Weighting { one_minus_alpha_bar, constant };

inline double timestep_weight(Weighting w, double alpha_bar) {
    return w == Weighting::constant ? 1.0 : 1.0 - alpha_bar;
}

inline GradMode parse_grad_mode(const std::string& s) {
    if (s == "distilled") return GradMode::distilled;
    if (s == "full") return GradMode::full;
    throw std::invalid_argument("unknown gradient mode '" + s + "' (distilled|full)");
}
inline std::string to_string(GradMode m) { return m == GradMode::full ? "full" : "distilled"; }

inline Weighting parse_weighting(const std::string& s) {
    if (s == "one_minus_alpha_bar") return Weighting::one_minus_alpha_bar;
    if (s == "constant") return Weighting::constant;
    throw std::invalid_argument("unknown timestep weighting '" + s + "' (one_minus_alpha_bar|constant)");
}
inline std::string to_string(Weighting w) { return w == Weighting::constant ? "constant" : "one_minus_alpha_bar"; }

template <class T>
struct PriorSetup {
    const prior::Denoiser<T>* denoiser = nullptr;
    const prior::LatentCodec<T>* codec = nullptr;
    const prior::NoiseSchedule* schedule = nullptr;
    ad::Tensor<T> cond;  // joint guidance [K, D]
    GradMode mode = GradMode::distilled;
    Weighting weighting = Weighting::one_minus_alpha_bar;
    double t_lo = 0.02, t_hi = 0.98;
};

template <class T>
struct DiffusionTerm {
    ad::Var<T> loss;           // scalar whose gradient w.r.t. the image is the contribution
    double residual = 0;       // ‖eps - eps_hat‖² / numel
    int t = 0;
    double weight = 0;         // w(t)
    ad::Tensor<double> update; // distilled image-space direction, shape of x
};

/// Diffusion contribution for the rendered image x at a fixed (t, eps). Distilled mode
/// skips the denoiser Jacobian: the image gradient is w(t)(eps_hat - eps)/numel pulled back
/// through the encoder. Full mode differentiates w(t)‖eps - eps_hat‖²/numel exactly.
template <class T>
DiffusionTerm<T> diffusion_term_at(const ad::Var<T>& x, const PriorSetup<T>& p, int t, const ad::Tensor<T>& eps) {
    if (!p.denoiser || !p.codec || !p.schedule) throw std::invalid_argument("diffusion term: prior setup is incomplete");
    const auto& sched = *p.schedule;
    const double ab = sched.alpha_bar_at(t);
    DiffusionTerm<T> out;
    out.t = t;
    out.weight = timestep_weight(p.weighting, ab);
    const auto cond = ad::Var<T>::constant(p.cond);

    if (p.mode == GradMode::full) {
        if (!p.denoiser->differentiable() || !p.codec->differentiable()) {
            throw std::invalid_argument("full gradient mode needs a differentiable prior; the " + p.denoiser->name() +
                                        " backend is not");
        }
        const auto r = prior::diffusion_residual(*p.denoiser, *p.codec, x, cond, t, eps, sched);
        const double n = double(eps.numel());
        out.residual = double(r.value().item()) / n;
        out.loss = r * T(out.weight / n);
        return out;
    }

    // Distilled: values only through the prior.
    const auto x_const = ad::Var<T>::constant(x.value());
    const auto z0 = p.codec->encode(x_const).value();
    if (z0.shape() != eps.shape()) {
        throw ShapeError("diffusion term: latent " + ad::shape_str(z0.shape()) + " vs noise " + ad::shape_str(eps.shape()));
    }
    const auto noise = ad::Var<T>::constant(eps);
    const auto z_t = prior::q_sample(ad::Var<T>::constant(z0), t, noise, sched);
    const auto eps_hat = p.denoiser->predict(z_t, t, cond).value();
    if (eps_hat.shape() != eps.shape()) {
        throw ShapeError(p.denoiser->name() + " denoiser returned shape " + ad::shape_str(eps_hat.shape()) +
                         " for input " + ad::shape_str(eps.shape()));
    }
    const double n = double(eps.numel());
    ad::Tensor<T> u(eps.shape());
    double res = 0;
    for (std::size_t i = 0; i < u.numel(); ++i) {
        const double d = double(eps_hat[i]) - double(eps[i]);
        res += d * d;
        u[i] = T(out.weight * d / n);
    }
    out.residual = res / n;
    if (!u.all_finite()) throw DomainError("diffusion term: non-finite prior update at t=" + std::to_string(t));

    if (p.codec->differentiable()) {
        ad::Graph<T> local;
        const auto probe = local.leaf(x.value());
        const auto pulled = ad::sum(p.codec->encode(probe) * ad::Var<T>::constant(u));
        out.update = pulled.requires_grad() ? local.backward(pulled).of(probe).template cast<double>()
                                            : ad::Tensor<double>(x.shape());
        out.loss = ad::sum(p.codec->encode(x) * ad::Var<T>::constant(std::move(u)));
    } else {
        // Encoder Jacobian unavailable: push the latent step through the decoder instead.
        const auto base = p.codec->decode(ad::Var<T>::constant(z0)).value();
        const auto moved = p.codec->decode(ad::Var<T>::constant(z0) + ad::Var<T>::constant(u)).value();
        if (base.shape() != x.shape() || moved.shape() != x.shape()) {
            throw ShapeError("diffusion term: decoded image " + ad::shape_str(base.shape()) + " vs render " +
                             ad::shape_str(x.shape()));
        }
        ad::Tensor<T> u_img(x.shape());
        for (std::size_t i = 0; i < u_img.numel(); ++i) u_img[i] = moved[i] - base[i];
        out.update = u_img.template cast<double>();
        out.loss = ad::sum(x * ad::Var<T>::constant(std::move(u_img)));
    }
    return out;
}

/// Samples t uniformly in [t_lo·T, t_hi·T] and eps ~ N(0, I) in latent shape, then evaluates the term.
template <class T>
DiffusionTerm<T> diffusion_term(const ad::Var<T>& x, const PriorSetup<T>& p, Rng& rng) {
    if (!p.schedule || !p.codec) throw std::invalid_argument("diffusion term: prior setup is incomplete");
    const int t = prior::sample_timestep(rng, *p.schedule, p.t_lo, p.t_hi);
    const auto latent_shape = p.codec->encode(ad::Var<T>::constant(x.value())).shape();
    const auto eps = prior::normal_tensor<T>(latent_shape, rng);
    return diffusion_term_at(x, p, t, eps);
}

}  // namespace nerdi::objective
