#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "nerdi/field/field.hpp"
#include "nerdi/image.hpp"
#include "nerdi/objective.hpp"
#include "nerdi/render.hpp"
#include "nerdi/trainer/adam.hpp"
#include "nerdi/trainer/checkpoint.hpp"
#include "nerdi/trainer/config.hpp"
#include "nerdi/trainer/view.hpp"

namespace nerdi::trainer {

/// Non-finite loss or gradient during synthesis; carries the report of the failing step.
class SynthesisDiverged : public DivergenceError {
public:
    SynthesisDiverged(const std::string& what, long step, objective::LossReport report)
        : DivergenceError(what, step), report_(std::move(report)) {}
    const objective::LossReport& report() const { return report_; }

private:
    objective::LossReport report_;
};

template <class T>
struct SynthesisInputs {
    Image image;  // [H, W, 3]
    render::Intrinsics K;
    render::Pose pose;
    std::optional<DepthMap> depth;  // estimated depth at the input view; entries <= 0 or non-finite are ignored
    // Prior used on novel views. Mode, weighting and timestep range come from the config.
    const prior::Denoiser<T>* denoiser = nullptr;
    const prior::LatentCodec<T>* codec = nullptr;
    const prior::NoiseSchedule* schedule = nullptr;
    ad::Tensor<T> cond;  // joint guidance [K, D]
};

struct SynthesisHooks {
    std::string log_path;         // JSON lines, appended
    std::string checkpoint_path;  // written every checkpoint_every steps and after the last step
    std::function<void(const objective::LossReport&)> on_report;
    long stop_after = 0;  // stop once this many steps are done (0: run to train.iterations)
};

template <class T>
struct SynthesisResult {
    TrainState<T> state;
    std::vector<objective::LossReport> log;
};

namespace detail {

/// Input-view pixels that carry a usable depth estimate.
inline std::vector<char> depth_valid(const DepthMap& d) {
    std::vector<char> ok(d.numel());
    for (std::size_t i = 0; i < d.numel(); ++i) ok[i] = std::isfinite(d[i]) && d[i] > 0.0;
    return ok;
}

}  // namespace detail

/// Optimizes a radiance field with reconstruction and depth losses on the input view and
/// the diffusion loss on one sampled novel view per step, from `warm` or a fresh init.
/// Every step draws from its own rng stream, so a resumed run repeats the uninterrupted one.
template <class T>
SynthesisResult<T> synthesize(const SynthesisInputs<T>& in, const SynthesisConfig& cfg,
                              std::optional<TrainState<std::type_identity_t<T>>> warm = std::nullopt,
                              const SynthesisHooks& hooks = {}) {
    cfg.validate();
    check_image(in.image, "synthesize: input image");
    const std::size_t H = height_of(in.image), W = width_of(in.image);
    if (std::size_t(in.K.width) != W || std::size_t(in.K.height) != H) {
        throw ShapeError("synthesize: input camera is " + std::to_string(in.K.width) + "x" + std::to_string(in.K.height) +
                         ", image is " + std::to_string(W) + "x" + std::to_string(H));
    }
    if (in.depth && (in.depth->rank() != 2 || in.depth->dim(0) != H || in.depth->dim(1) != W)) {
        throw ShapeError("synthesize: depth estimate " + ad::shape_str(in.depth->shape()) + " does not match the image");
    }
    const bool use_diff = cfg.weights.diff > 0;
    const bool use_depth = cfg.weights.depth > 0 && in.depth.has_value();
    if (use_diff && (!in.denoiser || !in.codec || !in.schedule)) {
        throw std::invalid_argument("synthesize: loss.diff > 0 needs a prior");
    }

    objective::PriorSetup<T> prior;
    prior.denoiser = in.denoiser;
    prior.codec = in.codec;
    prior.schedule = in.schedule;
    prior.cond = in.cond;
    prior.mode = cfg.mode;
    prior.weighting = cfg.weighting;
    prior.t_lo = cfg.t_lo;
    prior.t_hi = cfg.t_hi;

    SynthesisResult<T> out;
    auto& st = out.state;
    if (warm) {
        st = std::move(*warm);
    } else {
        st.params = field::FieldParams<T>::init(cfg.field, cfg.seed);
    }
    const auto& fcfg = st.params.config;
    const render::Box box{fcfg.grid.box_min, fcfg.grid.box_max};
    const auto valid = in.depth ? detail::depth_valid(*in.depth) : std::vector<char>();

    std::ofstream log;
    if (!hooks.log_path.empty()) {
        log.open(hooks.log_path, std::ios::app);
        if (!log) throw std::runtime_error("cannot open training log " + hooks.log_path);
    }
    auto emit = [&](const objective::LossReport& r) {
        if (log.is_open()) log << r.to_line() << "\n" << std::flush;
        if (hooks.on_report) hooks.on_report(r);
        out.log.push_back(r);
    };

    int prior_failures = 0;
    const long last = hooks.stop_after > 0 ? std::min(cfg.iterations, hooks.stop_after) : cfg.iterations;
    for (long s = st.step; s < last; ++s) {
        Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(s)));
        render::RenderConfig rc = cfg.render;
        rc.seed = derive_seed(cfg.seed ^ 0x72656e646572ULL, static_cast<std::uint64_t>(s));
        const double lr = cfg.lr_at(s);

        ad::Graph<T> graph;
        const auto vars = field::bind(graph, st.params);
        objective::StepTerms<T> terms;
        std::string note;

        // Input view: a batch of pixels drawn with replacement.
        std::vector<render::Ray> rays(cfg.rays);
        std::vector<std::uint64_t> ids(cfg.rays);
        std::vector<std::size_t> pix(cfg.rays);
        for (std::size_t r = 0; r < cfg.rays; ++r) {
            pix[r] = static_cast<std::size_t>(rng.integer(0, long(H * W) - 1));
            ids[r] = pix[r];
            rays[r] = render::pixel_to_ray(in.K, in.pose, double(pix[r] % W) + 0.5, double(pix[r] / W) + 0.5, box);
        }
        const auto batch = render::render_rays(vars, fcfg, rays, ids, rc);
        if (cfg.weights.rec > 0) {
            ad::Tensor<T> target({cfg.rays, 3});
            for (std::size_t r = 0; r < cfg.rays; ++r) {
                for (int c = 0; c < 3; ++c) target[3 * r + c] = T(in.image[3 * pix[r] + c]);
            }
            const auto l = objective::recon_loss(batch.rgb, ad::Var<T>::constant(std::move(target)));
            terms.rec = objective::Term<T>{l, double(l.value().item())};
        }
        if (use_depth) {
            ad::Tensor<double> est({cfg.rays}), mask({cfg.rays});
            std::size_t n_valid = 0;
            for (std::size_t r = 0; r < cfg.rays; ++r) {
                est[r] = valid[pix[r]] ? (*in.depth)[pix[r]] : 0.0;
                mask[r] = valid[pix[r]] ? 1.0 : 0.0;
                n_valid += valid[pix[r]] ? 1 : 0;
            }
            try {
                if (n_valid < 2) throw DomainError("fewer than 2 pixels with depth");
                const auto l = objective::depth_corr_loss(batch.depth, est, &mask);
                terms.depth = objective::Term<T>{l, double(l.value().item())};
            } catch (const DomainError& e) {
                note = std::string("depth term skipped: ") + e.what();
            }
        }

        // One novel view through the prior.
        std::optional<objective::DiffusionTerm<T>> diff;
        if (use_diff) {
            const auto view = sample_view(rng, cfg);
            const auto vr = render::render_view(vars, fcfg, view.K, view.pose, rc);
            const auto x = cfg.render_size == cfg.prior_size
                               ? vr.rgb
                               : render::resize(vr.rgb, std::size_t(cfg.prior_size), std::size_t(cfg.prior_size));
            try {
                diff = objective::diffusion_term(x, prior, rng);
                prior_failures = 0;
            } catch (const DomainError& e) {
                objective::LossReport rep;
                rep.step = s;
                rep.lr = lr;
                rep.note = e.what();
                throw SynthesisDiverged(std::string("synthesize: ") + e.what() + " at step " + std::to_string(s), s, rep);
            } catch (const PriorError& e) {
                if (++prior_failures > cfg.max_prior_failures) throw;
                objective::LossReport rep;
                rep.step = s;
                rep.lr = lr;
                rep.skipped = true;
                rep.note = std::string("prior failure: ") + e.what();
                st.step = s + 1;
                emit(rep);
                continue;
            }
            terms.diff = objective::Term<T>{diff->loss, diff->residual};
        }

        auto combined = objective::combine_terms(vars, terms, cfg.weights, cfg.component_norms);
        auto& rep = combined.report;
        rep.step = s;
        rep.lr = lr;
        rep.note = note;
        if (diff) {
            rep.t = diff->t;
            rep.view_id = s;
        }
        if (!rep.finite()) {
            throw SynthesisDiverged("synthesize: non-finite loss or gradient at step " + std::to_string(s) + ": " +
                                        rep.to_line(),
                                    s, rep);
        }
        try {
            adam_step(st.params.tensors, combined.grads, st.adam, lr);
        } catch (const DomainError& e) {
            throw SynthesisDiverged(std::string("synthesize: ") + e.what() + " at step " + std::to_string(s), s, rep);
        }
        if (!st.params.all_finite()) {
            throw SynthesisDiverged("synthesize: parameters became non-finite at step " + std::to_string(s), s, rep);
        }
        st.step = s + 1;
        emit(rep);
        if (!hooks.checkpoint_path.empty() && cfg.checkpoint_every > 0 && st.step % cfg.checkpoint_every == 0) {
            save_checkpoint(hooks.checkpoint_path, st);
        }
    }
    if (!hooks.checkpoint_path.empty()) save_checkpoint(hooks.checkpoint_path, st);
    return out;
}

}  // namespace nerdi::trainer
