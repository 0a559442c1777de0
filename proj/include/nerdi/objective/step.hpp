#pragma once

#include <cmath>
#include <json.hpp>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nerdi/autodiff.hpp"

namespace nerdi::objective {

struct LossWeights {
    double rec = 1.0;
    double diff = 0.05;
    double depth = 0.05;

    void validate() const {
        for (double v : {rec, diff, depth}) {
            if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("loss weights must be finite and >= 0");
        }
        if (rec == 0.0 && diff == 0.0 && depth == 0.0) throw std::invalid_argument("loss weights: all three are zero");
    }
};

/// One training-log record. Components that were not evaluated stay empty.
struct LossReport {
    long step = 0;
    std::optional<double> rec, diff, depth;
    double total = 0;
    int t = -1;
    long view_id = -1;
    double grad_norm = 0;
    std::optional<double> grad_norm_rec, grad_norm_diff, grad_norm_depth;
    double lr = 0;
    bool skipped = false;
    std::string note;

    bool finite() const {
        for (const auto& v : {rec, diff, depth, grad_norm_rec, grad_norm_diff, grad_norm_depth}) {
            if (v && !std::isfinite(*v)) return false;
        }
        return std::isfinite(total) && std::isfinite(grad_norm);
    }

    nlohmann::json to_json() const {
        auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
        nlohmann::json j{{"step", step},         {"rec", opt(rec)},       {"diff", opt(diff)},
                         {"depth", opt(depth)},   {"total", total},        {"t", t},
                         {"view", view_id},       {"grad_norm", grad_norm}, {"lr", lr},
                         {"skipped", skipped}};
        if (grad_norm_rec || grad_norm_diff || grad_norm_depth) {
            j["grad_norms"] = {{"rec", opt(grad_norm_rec)}, {"diff", opt(grad_norm_diff)}, {"depth", opt(grad_norm_depth)}};
        }
        if (!note.empty()) j["note"] = note;
        return j;
    }
    std::string to_line() const { return to_json().dump(); }
};

/// A loss component: the differentiable scalar plus the value to report for it.
template <class T>
struct Term {
    ad::Var<T> loss;
    double value = 0;
};

template <class T>
struct StepTerms {
    std::optional<Term<T>> rec, diff, depth;
};

template <class T>
struct CombinedGradient {
    std::vector<ad::Tensor<T>> grads;
    LossReport report;
};

namespace detail {

template <class T>
std::vector<ad::Tensor<T>> grads_of(const ad::Var<T>& loss, const std::vector<ad::Var<T>>& params) {
    std::vector<ad::Tensor<T>> out;
    if (!loss.requires_grad()) {
        for (const auto& p : params) out.emplace_back(p.shape());
        return out;
    }
    const auto g = ad::backward(loss);
    for (const auto& p : params) out.push_back(g.of(p));
    return out;
}

template <class T>
double norm(const std::vector<ad::Tensor<T>>& gs) {
    double acc = 0;
    for (const auto& g : gs) {
        for (T v : g.data()) acc += double(v) * double(v);
    }
    return std::sqrt(acc);
}

}  // namespace detail

/// λ_rec ∇rec + λ_diff ∇diff + λ_depth ∇depth over `params` (leaves of one graph). With
/// `component_norms` each term gets its own backward pass so its gradient norm can be reported;
/// otherwise the weighted sum is differentiated once.
template <class T>
CombinedGradient<T> combine_terms(const std::vector<ad::Var<T>>& params, const StepTerms<T>& terms,
                                  const LossWeights& w, bool component_norms = false) {
    w.validate();
    CombinedGradient<T> out;
    auto& rep = out.report;
    struct Part {
        const std::optional<Term<T>>* term;
        double lambda;
        std::optional<double>* value;
        std::optional<double>* gnorm;
    };
    const Part parts[] = {{&terms.rec, w.rec, &rep.rec, &rep.grad_norm_rec},
                          {&terms.diff, w.diff, &rep.diff, &rep.grad_norm_diff},
                          {&terms.depth, w.depth, &rep.depth, &rep.grad_norm_depth}};

    std::optional<ad::Var<T>> weighted;
    for (const auto& part : parts) {
        if (!*part.term) continue;
        *part.value = (*part.term)->value;
        rep.total += part.lambda * (*part.term)->value;
        if (part.lambda == 0.0) continue;
        const auto scaled = (*part.term)->loss * T(part.lambda);
        if (component_norms) {
            auto gs = detail::grads_of(scaled, params);
            *part.gnorm = detail::norm(gs);
            if (out.grads.empty()) {
                out.grads = std::move(gs);
            } else {
                for (std::size_t i = 0; i < gs.size(); ++i) {
                    auto dst = out.grads[i].data();
                    auto src = gs[i].data();
                    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
                }
            }
        } else {
            weighted = weighted ? *weighted + scaled : scaled;
        }
    }
    if (!component_norms) {
        if (weighted) {
            out.grads = detail::grads_of(*weighted, params);
        }
    }
    if (out.grads.empty()) {
        for (const auto& p : params) out.grads.emplace_back(p.shape());
    }
    rep.grad_norm = detail::norm(out.grads);
    return out;
}

}  // namespace nerdi::objective
