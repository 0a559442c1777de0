#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "nerdi/toolkit.hpp"

using namespace nerdi;
using namespace nerdi::toolkit;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("nerdi_toolkit_" + name)).string();
}

Image random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
    Rng rng(seed);
    Image img = make_image(h, w);
    for (auto& v : img.data()) v = rng.uniform();
    return img;
}

/// Reference SSIM: full-image Gaussian filtering of the five moment images, then the map mean.
double ssim_reference(const Image& a, const Image& b) {
    const std::size_t H = a.dim(0), W = a.dim(1);
    std::vector<double> x(H * W), y(H * W);
    for (std::size_t i = 0; i < H * W; ++i) {
        x[i] = 0.299 * a[3 * i] + 0.587 * a[3 * i + 1] + 0.114 * a[3 * i + 2];
        y[i] = 0.299 * b[3 * i] + 0.587 * b[3 * i + 1] + 0.114 * b[3 * i + 2];
    }
    double k[11], ks = 0;
    for (int i = 0; i < 11; ++i) ks += k[i] = std::exp(-(i - 5.0) * (i - 5.0) / 4.5);
    auto filter = [&](const std::vector<double>& img) {
        const std::size_t oh = H - 10, ow = W - 10;
        std::vector<double> out(oh * ow, 0.0);
        for (std::size_t r = 0; r < oh; ++r) {
            for (std::size_t c = 0; c < ow; ++c) {
                for (int i = 0; i < 11; ++i) {
                    for (int j = 0; j < 11; ++j) out[r * ow + c] += k[i] * k[j] / (ks * ks) * img[(r + i) * W + c + j];
                }
            }
        }
        return out;
    };
    std::vector<double> xx(H * W), yy(H * W), xy(H * W);
    for (std::size_t i = 0; i < H * W; ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const auto mx = filter(x), my = filter(y), sxx = filter(xx), syy = filter(yy), sxy = filter(xy);
    const double c1 = 1e-4, c2 = 9e-4;
    double acc = 0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
        const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
        acc += (2 * mx[i] * my[i] + c1) * (2 * cxy + c2) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    return acc / double(mx.size());
}

}  // namespace

// ---- metrics ----

TEST(Psnr, Examples) {
    Image a = make_image(4, 4, 0.5), b = make_image(4, 4, 0.6);
    EXPECT_NEAR(psnr(a, b), 20.0, 1e-9);
    EXPECT_EQ(psnr(a, a), 99.0);
    EXPECT_THROW(psnr(a, make_image(4, 5)), ShapeError);
}

TEST(Psnr, MatchesDirectFormula) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto a = random_image(9, 7, s), b = random_image(9, 7, s + 100);
        const double sq = std::inner_product(a.storage().begin(), a.storage().end(), b.storage().begin(), 0.0,
                                             std::plus<>(), [](double u, double v) { return (u - v) * (u - v); });
        EXPECT_NEAR(psnr(a, b), 10.0 * std::log10(double(a.numel()) / sq), 1e-9);
    }
}

TEST(Ssim, Examples) {
    const auto x = random_image(16, 16, 1);
    EXPECT_NEAR(ssim(x, x), 1.0, 1e-12);
    EXPECT_NEAR(ssim(make_image(12, 12, 0.5), make_image(12, 12, 0.6)), 0.6001 / 0.6101, 1e-9);
    EXPECT_NEAR(ssim(make_image(12, 12, 0.5), make_image(12, 12, 0.6)), 0.98361, 1e-5);
    EXPECT_THROW(ssim(make_image(10, 20), make_image(10, 20)), ShapeError);
}

TEST(Ssim, SymmetricAndMatchesReference) {
    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto a = random_image(20, 17, s), b = random_image(20, 17, s + 50);
        EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
        EXPECT_NEAR(ssim(a, b), ssim_reference(a, b), 1e-6);
        const double v = ssim(a, b);
        EXPECT_GE(v, -1.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(Eval, IdenticalImages) {
    std::vector<Image> imgs{random_image(16, 16, 3), random_image(16, 16, 4)};
    const auto r = compare_images(imgs, imgs);
    EXPECT_EQ(r.psnr_summary().mean, 99.0);
    EXPECT_NEAR(r.ssim_summary().mean, 1.0, 1e-12);
    const auto j = r.to_json();
    EXPECT_TRUE(j["lpips"].is_null());
    EXPECT_NE(j["note"].get<std::string>().find("LPIPS"), std::string::npos);
}

TEST(Eval, DepthCorrelationIgnoresBackground) {
    DepthMap ref = make_depth(2, 3), ren = make_depth(2, 3);
    const double r[] = {0, 1, 2, 0, 3, 5};
    for (int i = 0; i < 6; ++i) {
        ref[i] = r[i];
        ren[i] = r[i] > 0 ? 2 * r[i] + 1 : 100.0;
    }
    EXPECT_NEAR(depth_correlation(ren, ref), 1.0, 1e-12);
}

// ---- image io ----

TEST(ImageIo, PngRoundTripWithinQuantization) {
    const auto img = random_image(13, 17, 9);
    const auto path = temp_path("rt.png");
    save_png(path, img);
    const auto back = load_png(path);
    ASSERT_EQ(back.shape(), img.shape());
    double worst = 0;
    for (std::size_t i = 0; i < img.numel(); ++i) worst = std::max(worst, std::abs(back[i] - img[i]));
    EXPECT_LE(worst, 1.0 / 255.0);
    EXPECT_LE(worst, 0.5 / 255.0 + 1e-12);
    EXPECT_THROW(load_png_depth(path), FormatError);
    std::remove(path.c_str());
}

TEST(ImageIo, SixteenBitDepthIsLinear) {
    DepthMap d = make_depth(1, 3);
    d[0] = 0.0;
    d[1] = 1.0;
    d[2] = 32768.0 / 65535.0;
    const auto path = temp_path("d16.png");
    save_png_depth16(path, d);
    const auto back = load_depth(path);
    EXPECT_EQ(back[0], 0.0);
    EXPECT_EQ(back[1], 1.0);
    EXPECT_EQ(back[2], 32768.0 / 65535.0);
    std::remove(path.c_str());
}

TEST(ImageIo, PfmRoundTripIsBitExact) {
    Rng rng(4);
    DepthMap d = make_depth(5, 7);
    for (auto& v : d.data()) v = double(float(rng.uniform(0, 10)));
    const auto path = temp_path("d.pfm");
    save_pfm(path, d);
    const auto back = load_depth(path);
    EXPECT_EQ(back.storage(), d.storage());
    EXPECT_THROW(load_pfm(path, 3), FormatError);

    const auto img = random_image(3, 4, 5);
    save_pfm(path, img);
    const auto back3 = load_pfm(path, 3);
    for (std::size_t i = 0; i < img.numel(); ++i) EXPECT_EQ(back3[i], double(float(img[i])));
    std::remove(path.c_str());
}

TEST(ImageIo, MalformedFiles) {
    const auto path = temp_path("junk.png");
    {
        std::ofstream f(path);
        f << "not an image";
    }
    EXPECT_THROW(load_png(path), FormatError);
    EXPECT_THROW(load_pfm(path, 1), FormatError);
    {
        std::ofstream f(path, std::ios::binary);
        f << "Pf\n4 4\n-1.0\n" << std::string(10, '\0');
    }
    EXPECT_THROW(load_pfm(path, 1), FormatError);
    EXPECT_THROW(load_png(temp_path("absent.png")), std::runtime_error);
    EXPECT_THROW(load_depth(temp_path("x.exr")), FormatError);
    std::remove(path.c_str());
}

// ---- oracle scenes ----

TEST(Oracle, AxialSphereDepth) {
    OracleSceneSpec spec;
    Primitive p;
    p.size = {0.5, 0.5, 0.5};
    spec.primitives = {p};
    const auto K = render::Intrinsics::from_fov(33, 33, 40);
    const auto pose = render::look_at({0, 0, -3}, {0, 0, 0});
    const auto v = render_oracle(spec, K, pose, 64);
    EXPECT_EQ(v.depth[16 * 33 + 16], 2.5);
    EXPECT_EQ(v.depth[0], 0.0);  // corner ray misses
}

TEST(Oracle, RendersAreDeterministic) {
    const auto spec = make_class_scene("mushroom", 7);
    const auto K = render::Intrinsics::from_fov(16, 16, 50);
    const auto pose = trainer::orbit_pose(2.5, 20, 40);
    const auto a = render_oracle(spec, K, pose, 64), b = render_oracle(spec, K, pose, 64);
    EXPECT_EQ(a.rgb.storage(), b.rgb.storage());
    EXPECT_EQ(a.depth.storage(), b.depth.storage());
    EXPECT_EQ(make_class_scene("mushroom", 7).describe(), spec.describe());
    EXPECT_NE(make_class_scene("mushroom", 8).describe(), spec.describe());
}

TEST(Oracle, AnalyticDepthMatchesRenderedDepth) {
    for (const auto& label : oracle_classes()) {
        const auto spec = make_class_scene(label, 3);
        const auto K = render::Intrinsics::from_fov(24, 24, 50);
        const auto pose = trainer::orbit_pose(2.5, 25, 70);
        render::RenderConfig rc;
        rc.samples_per_ray = 256;
        const auto r = render::render_image(spec.field(), K, pose, rc);
        const auto v = render_oracle(spec, K, pose, 256);
        const auto rays = render::image_rays(K, pose);
        int checked = 0;
        for (std::size_t i = 0; i < rays.size(); ++i) {
            if (r.opacity[i] < 0.999 || v.depth[i] <= 0) continue;
            const double width = (rays[i].t_far - rays[i].t_near) / rc.samples_per_ray;
            EXPECT_NEAR(r.depth[i], v.depth[i], width + spec.ramp) << label << " pixel " << i;
            ++checked;
        }
        EXPECT_GT(checked, 20) << label;
    }
}

TEST(Oracle, ClassScenesStayInBounds) {
    for (const auto& label : oracle_classes()) {
        for (std::uint64_t s = 0; s < 30; ++s) EXPECT_NO_THROW(make_class_scene(label, s).validate());
    }
    EXPECT_THROW(make_class_scene("teapot", 0), std::invalid_argument);
    OracleSceneSpec bad;
    Primitive p;
    p.center = {0.8, 0, 0};
    bad.primitives = {p};
    EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Oracle, DepthDistortionPreservesCorrelation) {
    Rng rng(1);
    DepthMap d = make_depth(4, 4);
    for (std::size_t i = 0; i < d.numel(); ++i) d[i] = i % 5 == 0 ? 0.0 : rng.uniform(2, 3);
    const auto e = distort_depth(d, 0.3, 1.2, 0.0, rng);
    EXPECT_NEAR(depth_correlation(e, d), 1.0, 1e-12);
    for (std::size_t i = 0; i < d.numel(); ++i) {
        if (d[i] == 0) {
            EXPECT_EQ(e[i], 0.0);
        }
    }
    EXPECT_LT(depth_correlation(distort_depth(d, 1.0, 0.0, 0.2, rng), d), 1.0);
    EXPECT_THROW(distort_depth(d, -1.0, 0.0, 0.0, rng), std::invalid_argument);
}

TEST(Dataset, SaveLoadRoundTrip) {
    OracleDatasetOptions opt;
    opt.views = 3;
    opt.width = opt.height = 16;
    opt.samples = 64;
    const auto ds = make_oracle_dataset(make_class_scene("snowman", 2), opt);
    ASSERT_EQ(ds.size(), 3u);
    const auto dir = temp_path("dataset");
    std::filesystem::remove_all(dir);
    save_dataset(dir, ds);
    EXPECT_TRUE(std::filesystem::exists(dir + "/rgb/0002.png"));
    EXPECT_TRUE(std::filesystem::exists(dir + "/depth/0000.pfm"));
    const auto back = load_dataset(dir);
    ASSERT_EQ(back.size(), 3u);
    EXPECT_EQ(back.label, "snowman");
    EXPECT_EQ(back.spec_hash, ds.spec_hash);
    for (std::size_t v = 0; v < 3; ++v) {
        for (std::size_t i = 0; i < ds.images[v].numel(); ++i) {
            EXPECT_LE(std::abs(back.images[v][i] - ds.images[v][i]), 1.0 / 255.0);
        }
        for (std::size_t i = 0; i < ds.depths[v].numel(); ++i) EXPECT_EQ(back.depths[v][i], double(float(ds.depths[v][i])));
        EXPECT_EQ(back.cameras[v].second.R, ds.cameras[v].second.R);
        EXPECT_EQ(back.cameras[v].second.t, ds.cameras[v].second.t);
        EXPECT_EQ(back.cameras[v].first.fx, ds.cameras[v].first.fx);
    }
    std::filesystem::remove_all(dir);
}

TEST(Dataset, InputViewIsFirstOnRing) {
    const auto poses = oracle_poses(8, 2.5, 4);
    const auto& t0 = poses[0].t;
    EXPECT_NEAR(t0[0], 0.0, 1e-12);
    EXPECT_LT(t0[2], 0.0);
    EXPECT_NEAR(std::asin(t0[1] / 2.5) * 180 / M_PI, 15.0, 1e-9);
    for (const auto& p : poses) EXPECT_NEAR(render::norm(p.t), 2.5, 1e-12);
}
