#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "nerdi/render/camera.hpp"
#include "nerdi/toolkit/image_io.hpp"
#include "nerdi/toolkit/oracle.hpp"
#include "nerdi/trainer/config.hpp"

namespace nerdi::toolkit {

/// Views of one scene. View 0 is the input view by convention.
struct Dataset {
    std::vector<Image> images;
    std::vector<DepthMap> depths;  // may be empty
    std::vector<std::pair<render::Intrinsics, render::Pose>> cameras;
    std::string label;
    std::string spec_hash;

    std::size_t size() const { return images.size(); }
};

struct OracleDatasetOptions {
    std::size_t views = 9;
    int width = 64, height = 64;
    double fov = 50.0;
    double radius = 2.5;
    int samples = 512;
};

inline Dataset make_oracle_dataset(const OracleSceneSpec& spec, const OracleDatasetOptions& opt = {}) {
    spec.validate();
    if (opt.views < 1) throw std::invalid_argument("oracle dataset: need at least one view");
    Dataset ds;
    ds.label = spec.label;
    ds.spec_hash = trainer::fnv_hex(spec.describe());
    const auto K = render::Intrinsics::from_fov(opt.width, opt.height, opt.fov);
    for (const auto& pose : oracle_poses(opt.views, opt.radius, spec.seed)) {
        auto v = render_oracle(spec, K, pose, opt.samples);
        ds.images.push_back(std::move(v.rgb));
        ds.depths.push_back(std::move(v.depth));
        ds.cameras.emplace_back(K, pose);
    }
    return ds;
}

/// Labeled renders of random members of the oracle classes from views drawn from `range`,
/// stacked as [N, size, size, 3]; the training set for the toy prior.
struct ClassImages {
    ad::Tensor<double> images;
    std::vector<int> labels;
    std::vector<std::string> class_names;

    ad::Tensor<double> image(std::size_t i) const {
        const std::size_t n = images.numel() / images.dim(0);
        ad::Tensor<double> out({images.dim(1), images.dim(2), images.dim(3)});
        std::copy_n(images.data().begin() + long(i * n), n, out.data().begin());
        return out;
    }
};

inline ClassImages make_class_images(const std::vector<std::string>& classes, std::size_t per_class, int size,
                                     const trainer::ViewRange& range, std::uint64_t seed, int samples = 96) {
    if (classes.empty() || per_class < 1) throw std::invalid_argument("class images: need classes and members");
    ClassImages out;
    out.class_names = classes;
    const std::size_t n = std::size_t(size) * std::size_t(size) * 3;
    out.images = ad::Tensor<double>({classes.size() * per_class, std::size_t(size), std::size_t(size), 3});
    std::size_t row = 0;
    for (std::size_t c = 0; c < classes.size(); ++c) {
        for (std::size_t k = 0; k < per_class; ++k, ++row) {
            const std::uint64_t s = derive_seed(seed, c * 1000003ULL + k);
            Rng rng(s);
            const auto spec = make_class_scene(classes[c], s);
            const auto v = trainer::sample_view(rng, range, size);
            const auto r = render_oracle(spec, v.K, v.pose, samples);
            std::copy_n(r.rgb.data().begin(), n, out.images.data().begin() + long(row * n));
            out.labels.push_back(int(c));
        }
    }
    return out;
}

namespace detail {

inline std::string view_name(std::size_t i, const char* ext) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04zu.%s", i, ext);
    return buf;
}

}  // namespace detail

/// Layout: cameras.txt (one record per line), rgb/%04d.png, depth/%04d.pfm, meta.txt.
inline void save_dataset(const std::string& dir, const Dataset& ds) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "rgb");
    if (!ds.depths.empty()) fs::create_directories(fs::path(dir) / "depth");
    std::ofstream cams(fs::path(dir) / "cameras.txt");
    if (!cams) throw std::runtime_error("cannot write " + dir + "/cameras.txt");
    for (std::size_t i = 0; i < ds.size(); ++i) {
        cams << render::format_camera(ds.cameras[i].first, ds.cameras[i].second) << "\n";
        save_png((fs::path(dir) / "rgb" / detail::view_name(i, "png")).string(), ds.images[i]);
        if (!ds.depths.empty()) save_pfm((fs::path(dir) / "depth" / detail::view_name(i, "pfm")).string(), ds.depths[i]);
    }
    std::ofstream meta(fs::path(dir) / "meta.txt");
    meta << "class=" << ds.label << "\nspec_hash=" << ds.spec_hash << "\nviews=" << ds.size() << "\n";
}

inline std::map<std::string, std::string> read_meta(const std::string& dir) {
    std::ifstream f(std::filesystem::path(dir) / "meta.txt");
    if (!f) throw std::runtime_error(dir + ": missing meta.txt");
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(f, line)) {
        const auto eq = line.find('=');
        if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

/// Reads a dataset directory. meta.txt is optional; depth maps are loaded when present for every view.
inline Dataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    Dataset ds;
    std::ifstream cams(fs::path(dir) / "cameras.txt");
    if (!cams) throw std::runtime_error(dir + ": missing cameras.txt");
    std::string line;
    while (std::getline(cams, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        ds.cameras.push_back(render::parse_camera(line));
    }
    bool all_depth = true;
    for (std::size_t i = 0; i < ds.cameras.size(); ++i) {
        const auto rgb = fs::path(dir) / "rgb" / detail::view_name(i, "png");
        ds.images.push_back(load_png(rgb.string()));
        const auto& K = ds.cameras[i].first;
        if (height_of(ds.images.back()) != std::size_t(K.height) || width_of(ds.images.back()) != std::size_t(K.width)) {
            throw FormatError(rgb.string() + ": image size does not match its camera record");
        }
        const auto dp = fs::path(dir) / "depth" / detail::view_name(i, "pfm");
        if (all_depth && fs::exists(dp)) {
            ds.depths.push_back(load_pfm(dp.string(), 1));
        } else {
            all_depth = false;
        }
    }
    if (!all_depth) ds.depths.clear();
    if (fs::exists(fs::path(dir) / "meta.txt")) {
        const auto meta = read_meta(dir);
        if (meta.count("class")) ds.label = meta.at("class");
        if (meta.count("spec_hash")) ds.spec_hash = meta.at("spec_hash");
    }
    return ds;
}

}  // namespace nerdi::toolkit
