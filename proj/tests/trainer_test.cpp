#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "nerdi/prior.hpp"
#include "nerdi/render.hpp"
#include "nerdi/trainer.hpp"

using namespace nerdi;
using namespace nerdi::trainer;
using ad::Tensor;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("nerdi_trainer_" + name)).string();
}

/// Small, fast configuration for optimization tests.
SynthesisConfig tiny_config() {
    SynthesisConfig c;
    c.iterations = 12;
    c.rays = 96;
    c.seed = 5;
    c.render_size = 8;
    c.prior_size = 8;
    c.render.samples_per_ray = 12;
    c.field.grid.levels = 4;
    c.field.grid.table_size_log2 = 10;
    c.field.grid.base_resolution = 4;
    c.field.mlp.hidden_width = 16;
    c.field.mlp.hidden_layers = 1;
    return c;
}

/// Orange sphere of radius 0.5 in front of a white background, seen by the canonical camera.
struct SphereView {
    Image image;
    DepthMap depth;
    render::Intrinsics K;
    render::Pose pose;
};

SphereView sphere_view(int size) {
    const auto [K, pose] = canonical_camera(size, size);
    render::PointField f = [](const render::Vec3& p) {
        render::PointSample s;
        const bool in = render::norm(p) < 0.5;
        s.sigma = in ? 40.0 : 0.0;
        s.rgb = {0.9, 0.5, 0.1};
        return s;
    };
    render::RenderConfig rc;
    rc.samples_per_ray = 128;
    const auto r = render::render_image(f, K, pose, rc);
    DepthMap d = r.depth;
    for (std::size_t i = 0; i < d.numel(); ++i) {
        if (r.opacity[i] < 0.5) d[i] = 0.0;
    }
    return {r.rgb, d, K, pose};
}

template <class T>
SynthesisInputs<T> inputs_for(const SphereView& v) {
    SynthesisInputs<T> in;
    in.image = v.image;
    in.depth = v.depth;
    in.K = v.K;
    in.pose = v.pose;
    return in;
}

bool same_params(const field::FieldParams<double>& a, const field::FieldParams<double>& b) {
    if (a.tensors.size() != b.tensors.size()) return false;
    for (std::size_t i = 0; i < a.tensors.size(); ++i) {
        if (a.tensors[i].storage() != b.tensors[i].storage()) return false;
    }
    return true;
}

class ThrowingDenoiser final : public prior::Denoiser<double> {
public:
    explicit ThrowingDenoiser(int failures) : left_(failures) {}
    ad::Var<double> predict(const ad::Var<double>& z, int, const ad::Var<double>&) const override {
        if (left_ > 0) {
            --left_;
            throw PriorError("backend unavailable");
        }
        return ad::Var<double>::constant(Tensor<double>(z.shape()));
    }
    std::string name() const override { return "flaky"; }
    bool differentiable() const override { return false; }

private:
    mutable int left_;
};

class NanDenoiser final : public prior::Denoiser<double> {
public:
    ad::Var<double> predict(const ad::Var<double>& z, int, const ad::Var<double>&) const override {
        return ad::Var<double>::constant(Tensor<double>(z.shape(), std::nan("")));
    }
    std::string name() const override { return "nan"; }
    bool differentiable() const override { return false; }
};

}  // namespace

// ---- Adam ----

TEST(AdamStep, ZeroGradientLeavesParametersUnchanged) {
    std::vector<Tensor<double>> p{Tensor<double>({2, 2}, {1, -2, 3, 0.5})};
    const auto before = p[0].storage();
    AdamState<double> st;
    adam_step(p, {Tensor<double>({2, 2})}, st, 0.1);
    EXPECT_EQ(p[0].storage(), before);
    EXPECT_EQ(st.step, 1);
}

TEST(AdamStep, ConstantGradientFirstStepMovesByLr) {
    std::vector<Tensor<double>> p{Tensor<double>({3}, {0, 0, 0})};
    AdamState<double> st;
    adam_step(p, {Tensor<double>({3}, {2.0, -0.5, 1e-3})}, st, 0.01);
    // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps).
    EXPECT_NEAR(p[0][0], -0.01 * 2.0 / (2.0 + 1e-8), 1e-15);
    EXPECT_NEAR(p[0][1], 0.01 * 0.5 / (0.5 + 1e-8), 1e-15);
    EXPECT_NEAR(p[0][2], -0.01 * 1e-3 / (1e-3 + 1e-8), 1e-15);
}

TEST(AdamStep, TwoStepsAreBitIdentical) {
    auto run = [] {
        Rng rng(17);
        std::vector<Tensor<float>> p{Tensor<float>({5}, 0.3f)};
        AdamState<float> st;
        for (int k = 0; k < 2; ++k) {
            Tensor<float> g({5});
            for (auto& v : g.data()) v = float(rng.normal());
            adam_step(p, {g}, st, 0.05);
        }
        return std::make_pair(p[0].storage(), st.v[0].storage());
    };
    EXPECT_EQ(run(), run());
}

TEST(AdamStep, RejectsNonFiniteGradient) {
    std::vector<Tensor<double>> p{Tensor<double>({2})};
    AdamState<double> st;
    EXPECT_THROW(adam_step(p, {Tensor<double>({2}, {1.0, std::nan("")})}, st, 0.1), DomainError);
}

// ---- config ----

TEST(Config, DefaultsValidate) {
    SynthesisConfig c;
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(c.iterations, 5000);
    EXPECT_EQ(c.rays, 4096u);
    EXPECT_DOUBLE_EQ(c.lr, 1e-2);
    EXPECT_DOUBLE_EQ(c.lr_final, 1e-3);
}

TEST(Config, CosineLearningRate) {
    SynthesisConfig c;
    c.iterations = 101;
    EXPECT_DOUBLE_EQ(c.lr_at(0), c.lr);
    EXPECT_NEAR(c.lr_at(100), c.lr_final, 1e-15);
    EXPECT_NEAR(c.lr_at(50), 0.5 * (c.lr + c.lr_final), 1e-15);
    for (long s = 1; s < 101; ++s) EXPECT_LE(c.lr_at(s), c.lr_at(s - 1));
}

TEST(Config, ParsesIniAndOverrides) {
    const auto c = parse_config(
        "[train]\niterations = 300\nseed = 9\n[loss]\nmode = full\ndepth = 0\n[view]\nelevation_min = 30\n"
        "elevation_max = 30\n[prior]\nbackend = toy\nmodel = /tmp/m.nrdt\n[field]\nhidden_width = 24\n");
    EXPECT_EQ(c.iterations, 300);
    EXPECT_EQ(c.seed, 9u);
    EXPECT_EQ(c.mode, objective::GradMode::full);
    EXPECT_EQ(c.weights.depth, 0.0);
    EXPECT_EQ(c.view.elevation_min, 30.0);
    EXPECT_EQ(c.prior_backend, "toy");
    EXPECT_EQ(c.prior_model, "/tmp/m.nrdt");
    EXPECT_EQ(c.field.mlp.hidden_width, 24);

    auto d = c;
    apply_override(d, "train.iterations=7");
    apply_override(d, " render.jitter = false ");
    EXPECT_EQ(d.iterations, 7);
    EXPECT_FALSE(d.render.stratified_jitter);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
    EXPECT_THROW(parse_config("[train]\nitterations = 3\n"), std::invalid_argument);
    EXPECT_THROW(parse_config("[nope]\nx = 1\n"), std::invalid_argument);
    EXPECT_THROW(parse_config("[train]\niterations = many\n"), std::invalid_argument);
    EXPECT_THROW(parse_config("[loss]\nmode = exact\n"), std::invalid_argument);
    SynthesisConfig c;
    EXPECT_THROW(apply_override(c, "train.iterations"), std::invalid_argument);
    EXPECT_THROW(apply_override(c, "train.rays=12x"), std::invalid_argument);
    c.view.radius_min = 3;
    c.view.radius_max = 2;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Config, IniRoundTrip) {
    auto c = tiny_config();
    c.mode = objective::GradMode::full;
    c.weighting = objective::Weighting::constant;
    c.prior_sigma0 = 0.123456789012345;
    c.render.background = render::Background::black;
    const auto text = to_ini(c);
    const auto back = parse_config(text);
    EXPECT_EQ(to_ini(back), text);
    EXPECT_EQ(config_hash(back), config_hash(c));
    EXPECT_NE(config_hash(back), config_hash(SynthesisConfig{}));
}

// ---- view sampling ----

TEST(SampleView, FixedElevation) {
    ViewRange r;
    r.elevation_min = r.elevation_max = 30;
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
        const auto v = sample_view(rng, r, 16);
        EXPECT_EQ(v.elevation, 30.0);
        const double el = std::asin(v.pose.t[1] / render::norm(v.pose.t)) * 180.0 / M_PI;
        EXPECT_NEAR(el, 30.0, 1e-9);
    }
}

TEST(SampleView, LooksAtOriginWithOrthonormalRotation) {
    Rng rng(4);
    ViewRange r;
    for (int i = 0; i < 50; ++i) {
        const auto v = sample_view(rng, r, 16);
        const auto& R = v.pose.R;
        for (int a = 0; a < 3; ++a) {
            for (int b = 0; b < 3; ++b) {
                double d = 0;
                for (int k = 0; k < 3; ++k) d += R[3 * k + a] * R[3 * k + b];
                EXPECT_NEAR(d, a == b ? 1.0 : 0.0, 1e-12);
            }
        }
        const render::Vec3 z{R[2], R[5], R[8]};
        const auto to_origin = render::normalize(render::Vec3{-v.pose.t[0], -v.pose.t[1], -v.pose.t[2]});
        EXPECT_NEAR(render::dot(z, to_origin), 1.0, 1e-9);
        // Image-down points away from world up.
        EXPECT_LE(R[4], 1e-12);
        EXPECT_GE(v.radius, r.radius_min);
        EXPECT_LE(v.radius, r.radius_max);
        EXPECT_NEAR(render::norm(v.pose.t), v.radius, 1e-12);
    }
}

TEST(SampleView, SameSeedSameSequence) {
    auto seq = [](std::uint64_t seed) {
        Rng rng(seed);
        std::vector<double> out;
        for (int i = 0; i < 20; ++i) {
            const auto v = sample_view(rng, ViewRange{}, 8);
            out.insert(out.end(), v.pose.R.begin(), v.pose.R.end());
            out.insert(out.end(), v.pose.t.begin(), v.pose.t.end());
        }
        return out;
    };
    EXPECT_EQ(seq(11), seq(11));
    EXPECT_NE(seq(11), seq(12));
}

TEST(SampleView, AzimuthCoversCircle) {
    Rng rng(8);
    int quadrant[4] = {0, 0, 0, 0};
    for (int i = 0; i < 400; ++i) {
        const auto v = sample_view(rng, ViewRange{}, 8);
        EXPECT_GE(v.azimuth, 0.0);
        EXPECT_LT(v.azimuth, 360.0);
        ++quadrant[int(v.azimuth / 90.0)];
    }
    for (int q : quadrant) EXPECT_GT(q, 60);
}

TEST(SampleView, CanonicalCamera) {
    const auto [K, pose] = canonical_camera(64, 48);
    EXPECT_EQ(K.width, 64);
    EXPECT_NEAR(2.0 * std::atan(0.5 * 48 / K.fy) * 180.0 / M_PI, 50.0, 1e-12);
    EXPECT_NEAR(pose.t[2], -2.5, 1e-15);
    const auto center = render::pixel_to_ray(K, pose, 32, 24);
    EXPECT_NEAR(center.direction[2], 1.0, 1e-12);
    // The top row of the image looks above the origin.
    const auto top = render::pixel_to_ray(K, pose, 32, 0.5);
    EXPECT_GT(top.direction[1], 0.0);
}

// ---- checkpoints ----

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
    auto cfg = tiny_config();
    TrainState<float> s{field::FieldParams<float>::init(cfg.field, 1), {}, 0};
    std::vector<Tensor<float>> grads;
    Rng rng(2);
    for (const auto& t : s.params.tensors) {
        Tensor<float> g(t.shape());
        for (auto& v : g.data()) v = float(rng.normal());
        grads.push_back(g);
    }
    adam_step(s.params.tensors, grads, s.adam, 0.01);
    s.step = 1;
    const auto path = temp_path("ckpt.nrdf");
    save_checkpoint(path, s);
    const auto bytes = read_file(path);
    const auto back = load_checkpoint<float>(path);
    EXPECT_EQ(back.step, 1);
    EXPECT_EQ(back.adam.step, 1);
    ASSERT_EQ(back.adam.m.size(), s.params.tensors.size());
    for (std::size_t i = 0; i < s.params.tensors.size(); ++i) {
        EXPECT_EQ(back.params.tensors[i].storage(), s.params.tensors[i].storage());
        EXPECT_EQ(back.adam.m[i].storage(), s.adam.m[i].storage());
        EXPECT_EQ(back.adam.v[i].storage(), s.adam.v[i].storage());
    }
    save_checkpoint(path, back);
    EXPECT_EQ(read_file(path), bytes);
    std::remove(path.c_str());
}

TEST(Checkpoint, DoubleRoundTripIsBitExact) {
    TrainState<double> s{field::FieldParams<double>::init(tiny_config().field, 3), {}, 4};
    const auto c = decode_container(encode_container(checkpoint_container(s)), "NRDF", "mem");
    const auto back = state_from_container<double>(c);
    EXPECT_TRUE(same_params(back.params, s.params));
    EXPECT_TRUE(back.adam.empty());
    EXPECT_EQ(back.step, 4);
    EXPECT_THROW(state_from_container<float>(c), FormatError);
}

TEST(Checkpoint, CorruptMagicAndTruncation) {
    TrainState<float> s{field::FieldParams<float>::init(tiny_config().field, 3), {}, 0};
    auto bytes = encode_container(checkpoint_container(s));
    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(decode_container(bad, "NRDF", "mem"), FormatError);
    EXPECT_THROW(decode_container(bytes.substr(0, bytes.size() / 2), "NRDF", "mem"), FormatError);
    EXPECT_THROW(load_checkpoint<float>(temp_path("missing.nrdf")), std::runtime_error);
}

// ---- synthesis ----

TEST(Synthesize, ReconstructionLossDecreases) {
    const auto v = sphere_view(16);
    auto cfg = tiny_config();
    cfg.iterations = 60;
    cfg.weights = {1.0, 0.0, 0.0};
    const auto res = synthesize(inputs_for<float>(v), cfg);
    ASSERT_EQ(res.log.size(), 60u);
    double first = 0, last = 0;
    for (int i = 0; i < 10; ++i) {
        first += *res.log[i].rec;
        last += *res.log[50 + i].rec;
    }
    EXPECT_LT(last, 0.5 * first);
    EXPECT_EQ(res.state.step, 60);
    EXPECT_FALSE(res.log[0].diff.has_value());
}

TEST(Synthesize, ZeroExtraIterationsReturnsCheckpoint) {
    const auto v = sphere_view(12);
    auto cfg = tiny_config();
    cfg.iterations = 5;
    cfg.weights.diff = 0;
    auto in = inputs_for<double>(v);
    const auto first = synthesize(in, cfg);
    const auto again = synthesize(in, cfg, first.state);
    EXPECT_TRUE(again.log.empty());
    EXPECT_TRUE(same_params(again.state.params, first.state.params));
}

TEST(Synthesize, ResumeMatchesUninterruptedRun) {
    const auto v = sphere_view(12);
    auto cfg = tiny_config();
    prior::AnalyticGaussianPrior<double> den(Tensor<double>({8, 8, 3}, 0.5), 0.1, prior::default_schedule());
    prior::IdentityCodec<double> codec;
    const auto sched = prior::default_schedule();
    auto in = inputs_for<double>(v);
    in.denoiser = &den;
    in.codec = &codec;
    in.schedule = &sched;
    in.cond = Tensor<double>({1, 4});

    const auto full = synthesize(in, cfg);
    const auto ckpt = temp_path("resume.nrdf");
    synthesize(in, cfg, std::nullopt, {"", ckpt, nullptr, 5});
    const auto resumed = synthesize(in, cfg, load_checkpoint<double>(ckpt));
    std::remove(ckpt.c_str());

    ASSERT_EQ(resumed.log.size(), full.log.size() - 5);
    for (std::size_t i = 0; i < resumed.log.size(); ++i) {
        EXPECT_EQ(resumed.log[i].to_line(), full.log[i + 5].to_line());
    }
    EXPECT_TRUE(same_params(resumed.state.params, full.state.params));
}

TEST(Synthesize, IndependentOfWorkerCount) {
    const auto v = sphere_view(12);
    auto cfg = tiny_config();
    cfg.iterations = 4;
    cfg.rays = 600;
    prior::AnalyticGaussianPrior<double> den(Tensor<double>({8, 8, 3}, 0.5), 0.1, prior::default_schedule());
    prior::IdentityCodec<double> codec;
    const auto sched = prior::default_schedule();
    auto in = inputs_for<double>(v);
    in.denoiser = &den;
    in.codec = &codec;
    in.schedule = &sched;
    in.cond = Tensor<double>({1, 4});

    const auto saved = worker_count();
    set_worker_count(1);
    const auto a = synthesize(in, cfg);
    set_worker_count(3);
    const auto b = synthesize(in, cfg);
    set_worker_count(saved);
    EXPECT_TRUE(same_params(a.state.params, b.state.params));
}

TEST(Synthesize, WritesLogAndPeriodicCheckpoints) {
    const auto v = sphere_view(12);
    auto cfg = tiny_config();
    cfg.iterations = 6;
    cfg.checkpoint_every = 4;
    cfg.component_norms = true;
    prior::AnalyticGaussianPrior<float> den(Tensor<float>({8, 8, 3}, 0.5f), 0.1, prior::default_schedule());
    prior::IdentityCodec<float> codec;
    const auto sched = prior::default_schedule();
    auto in = inputs_for<float>(v);
    in.denoiser = &den;
    in.codec = &codec;
    in.schedule = &sched;
    in.cond = Tensor<float>({1, 4});
    const auto log = temp_path("log.jsonl");
    const auto ckpt = temp_path("periodic.nrdf");
    std::remove(log.c_str());
    long seen_step = -1;
    const auto res = synthesize(in, cfg, std::nullopt,
                                {log, ckpt, [&](const objective::LossReport& r) { seen_step = r.step; }});
    EXPECT_EQ(seen_step, 5);
    std::ifstream f(log);
    std::string line;
    int lines = 0;
    while (std::getline(f, line)) {
        const auto j = nlohmann::json::parse(line);
        EXPECT_EQ(j["step"].get<long>(), lines);
        EXPECT_TRUE(j.contains("grad_norms"));
        EXPECT_TRUE(j["diff"].is_number());
        ++lines;
    }
    EXPECT_EQ(lines, 6);
    EXPECT_EQ(load_checkpoint<float>(ckpt).step, 6);
    std::remove(log.c_str());
    std::remove(ckpt.c_str());
    (void)res;
}

TEST(Synthesize, SkipsTransientPriorFailures) {
    const auto v = sphere_view(12);
    auto cfg = tiny_config();
    cfg.iterations = 6;
    prior::IdentityCodec<double> codec;
    const auto sched = prior::default_schedule();
    auto in = inputs_for<double>(v);
    in.codec = &codec;
    in.schedule = &sched;
    in.cond = Tensor<double>({1, 4});

    ThrowingDenoiser flaky(3);
    in.denoiser = &flaky;
    const auto res = synthesize(in, cfg);
    ASSERT_EQ(res.log.size(), 6u);
    for (int i = 0; i < 3; ++i) EXPECT_TRUE(res.log[i].skipped);
    EXPECT_FALSE(res.log[3].skipped);
    EXPECT_EQ(res.state.adam.step, 3);

    ThrowingDenoiser dead(4);
    in.denoiser = &dead;
    EXPECT_THROW(synthesize(in, cfg), PriorError);
}

TEST(Synthesize, NonFinitePriorAbortsWithStep) {
    const auto v = sphere_view(12);
    auto cfg = tiny_config();
    NanDenoiser nan;
    prior::IdentityCodec<double> codec;
    const auto sched = prior::default_schedule();
    auto in = inputs_for<double>(v);
    in.denoiser = &nan;
    in.codec = &codec;
    in.schedule = &sched;
    in.cond = Tensor<double>({1, 4});
    try {
        synthesize(in, cfg);
        FAIL() << "expected divergence";
    } catch (const SynthesisDiverged& e) {
        EXPECT_EQ(e.step(), 0);
        EXPECT_EQ(e.report().step, 0);
    }
}

TEST(Synthesize, RejectsMismatchedInputs) {
    const auto v = sphere_view(12);
    auto cfg = tiny_config();
    auto in = inputs_for<float>(v);
    in.K = render::Intrinsics::from_fov(10, 12, 50);
    EXPECT_THROW(synthesize(in, cfg), ShapeError);
    in = inputs_for<float>(v);
    in.depth = make_depth(3, 3);
    EXPECT_THROW(synthesize(in, cfg), ShapeError);
    in = inputs_for<float>(v);
    EXPECT_THROW(synthesize(in, cfg), std::invalid_argument);  // diffusion weight without a prior
}
