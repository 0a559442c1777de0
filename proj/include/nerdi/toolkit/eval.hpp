#pragma once

#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "nerdi/objective/losses.hpp"
#include "nerdi/render/volume.hpp"
#include "nerdi/toolkit/metrics.hpp"

namespace nerdi::toolkit {

constexpr const char* kLpipsNote = "LPIPS not computed: it needs a pretrained perceptual network";

struct EvalReport {
    std::vector<std::size_t> views;
    std::vector<double> psnr, ssim;
    std::optional<double> depth_pearson;  // input view, pixels with reference depth
    std::string config_hash;

    Summary psnr_summary() const { return summarize(psnr); }
    Summary ssim_summary() const { return summarize(ssim); }

    nlohmann::json to_json() const {
        nlohmann::json per_view = nlohmann::json::array();
        for (std::size_t i = 0; i < views.size(); ++i) {
            per_view.push_back({{"view", views[i]}, {"psnr", psnr[i]}, {"ssim", ssim[i]}});
        }
        const auto p = psnr_summary(), s = ssim_summary();
        nlohmann::json j{{"views", per_view},
                         {"psnr", {{"mean", p.mean}, {"std", p.std}}},
                         {"ssim", {{"mean", s.mean}, {"std", s.std}}},
                         {"depth_pearson", depth_pearson ? nlohmann::json(*depth_pearson) : nlohmann::json(nullptr)},
                         {"config_hash", config_hash},
                         {"lpips", nullptr},
                         {"note", kLpipsNote}};
        return j;
    }
};

/// PSNR and SSIM of predicted against reference images, view by view.
inline EvalReport compare_images(const std::vector<Image>& pred, const std::vector<Image>& truth,
                                 std::vector<std::size_t> views = {}) {
    if (pred.size() != truth.size()) throw ShapeError("eval: different numbers of predicted and reference images");
    if (views.empty()) {
        for (std::size_t i = 0; i < pred.size(); ++i) views.push_back(i);
    }
    if (views.size() != pred.size()) throw ShapeError("eval: one view index per image required");
    EvalReport r;
    r.views = std::move(views);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        r.psnr.push_back(psnr(pred[i], truth[i]));
        r.ssim.push_back(ssim(pred[i], truth[i]));
    }
    return r;
}

/// Pearson correlation of two depth maps over pixels where `reference` is positive.
inline double depth_correlation(const DepthMap& rendered, const DepthMap& reference) {
    check_same(rendered, reference, "depth_correlation");
    std::vector<double> a, b;
    for (std::size_t i = 0; i < reference.numel(); ++i) {
        if (std::isfinite(reference[i]) && reference[i] > 0) {
            a.push_back(rendered[i]);
            b.push_back(reference[i]);
        }
    }
    return objective::pearson(a, b);
}

}  // namespace nerdi::toolkit
