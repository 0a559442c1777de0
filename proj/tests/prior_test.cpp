#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <memory>
#include <thread>

#include "nerdi/prior.hpp"
#include "nerdi/prior/mock_bridge.hpp"

using namespace nerdi;
using namespace nerdi::prior;
using ad::Tensor;
using ad::Var;

namespace {

Tensor<double> filled(ad::Shape s, double v) { return Tensor<double>(std::move(s), v); }

Tensor<double> random_tensor(ad::Shape s, std::uint64_t seed, double lo = 0, double hi = 1) {
    Rng rng(seed);
    Tensor<double> t(std::move(s));
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

ToyConfig small_toy() {
    ToyConfig c;
    c.height = c.width = 6;
    c.hidden = 48;
    c.time_features = 8;
    c.embed_dim = 8;
    return c;
}

/// Three classes of 6x6 sprites: a colored 3x3 square on white at a random offset.
struct Sprites {
    Tensor<double> images;
    std::vector<int> labels;
};

Sprites make_sprites(std::size_t count, std::uint64_t seed) {
    const double colors[3][3] = {{0.9, 0.1, 0.1}, {0.1, 0.8, 0.2}, {0.15, 0.2, 0.9}};
    Rng rng(seed);
    Sprites s{Tensor<double>({count, 6, 6, 3}, 1.0), {}};
    for (std::size_t i = 0; i < count; ++i) {
        const int k = static_cast<int>(i % 3);
        s.labels.push_back(k);
        const long oy = rng.integer(0, 3), ox = rng.integer(0, 3);
        for (long y = oy; y < oy + 3; ++y) {
            for (long x = ox; x < ox + 3; ++x) {
                for (int c = 0; c < 3; ++c) s.images[((i * 6 + y) * 6 + x) * 3 + c] = colors[k][c];
            }
        }
    }
    return s;
}

const std::vector<std::string> kClasses{"red", "green", "blue"};

/// Returns the noise it was built with, whatever it is asked.
class PerfectDenoiser final : public Denoiser<double> {
public:
    explicit PerfectDenoiser(Tensor<double> eps) : eps_(std::move(eps)) {}
    Var<double> predict(const Var<double>&, int, const Var<double>&) const override {
        return Var<double>::constant(eps_);
    }
    std::string name() const override { return "perfect"; }

private:
    Tensor<double> eps_;
};

}  // namespace

// ---- schedule ----

TEST(Schedule, TwoStepProduct) {
    const auto s = build_schedule(2, 0.5, 0.5);
    ASSERT_EQ(s.steps(), 2);
    EXPECT_DOUBLE_EQ(s.alpha_bar[0], 0.5);
    EXPECT_DOUBLE_EQ(s.alpha_bar[1], 0.25);
    const auto f = schedule_from_betas({0.5, 0.5});
    EXPECT_EQ(f.alpha_bar, s.alpha_bar);
}

TEST(Schedule, SingleStep) {
    const auto s = build_schedule(1, 0.1, 0.1);
    ASSERT_EQ(s.steps(), 1);
    EXPECT_DOUBLE_EQ(s.alpha_bar[0], 0.9);
}

TEST(Schedule, DefaultIsStrictlyDecreasingInUnitInterval) {
    const auto s = default_schedule();
    ASSERT_EQ(s.steps(), 1000);
    EXPECT_DOUBLE_EQ(s.beta.front(), 1e-4);
    EXPECT_DOUBLE_EQ(s.beta.back(), 0.02);
    EXPECT_DOUBLE_EQ(s.alpha_bar[0], 1.0 - s.beta[0]);
    for (int t = 0; t < s.steps(); ++t) {
        EXPECT_GT(s.alpha_bar[t], 0.0);
        EXPECT_LT(s.alpha_bar[t], 1.0);
        if (t > 0) {
            EXPECT_LT(s.alpha_bar[t], s.alpha_bar[t - 1]);
        }
    }
}

TEST(Schedule, InvalidRanges) {
    EXPECT_THROW(build_schedule(0, 1e-4, 0.02), std::invalid_argument);
    EXPECT_THROW(build_schedule(10, 0.0, 0.02), std::invalid_argument);
    EXPECT_THROW(build_schedule(10, 0.03, 0.02), std::invalid_argument);
    EXPECT_THROW(build_schedule(10, 1e-4, 1.0), std::invalid_argument);
    EXPECT_THROW(default_schedule().alpha_bar_at(1000), std::out_of_range);
    EXPECT_THROW(default_schedule().alpha_bar_at(-2), std::out_of_range);
}

TEST(Schedule, TimestepSamplingRange) {
    const auto s = default_schedule();
    Rng rng(4);
    int lo = 1000, hi = -1;
    for (int i = 0; i < 20000; ++i) {
        const int t = sample_timestep(rng, s);
        lo = std::min(lo, t);
        hi = std::max(hi, t);
    }
    EXPECT_EQ(lo, 20);
    EXPECT_EQ(hi, 980);
}

// ---- q_sample ----

TEST(QSample, CleanLimitAndZeroNoise) {
    const auto s = default_schedule();
    const auto z0 = Var<double>::constant(random_tensor({4, 5}, 1, -1, 1));
    const auto eps = Var<double>::constant(random_tensor({4, 5}, 2, -1, 1));
    EXPECT_EQ(q_sample(z0, -1, eps, s).value(), z0.value());
    const auto zt = q_sample(z0, 500, Var<double>::constant(Tensor<double>({4, 5})), s).value();
    const double a = std::sqrt(s.alpha_bar[500]);
    for (std::size_t i = 0; i < zt.numel(); ++i) EXPECT_DOUBLE_EQ(zt[i], a * z0.value()[i]);
}

TEST(QSample, Errors) {
    const auto s = default_schedule();
    const auto z0 = Var<double>::constant(Tensor<double>({3}));
    EXPECT_THROW(q_sample(z0, 1000, z0, s), std::out_of_range);
    EXPECT_THROW(q_sample(z0, 3, Var<double>::constant(Tensor<double>({4})), s), ShapeError);
}

TEST(QSample, UnitVarianceIsPreserved) {
    const auto s = default_schedule();
    Rng rng(11);
    const std::size_t n = 100000;
    const auto z0 = Var<double>::constant(normal_tensor<double>({n}, rng));
    const auto eps = Var<double>::constant(normal_tensor<double>({n}, rng));
    for (int t : {20, 300, 700, 980}) {
        const auto zt = q_sample(z0, t, eps, s).value();
        double mean = 0, sq = 0;
        for (double v : zt.data()) mean += v;
        mean /= double(n);
        for (double v : zt.data()) sq += (v - mean) * (v - mean);
        EXPECT_NEAR(sq / double(n - 1), 1.0, 0.02) << "t=" << t;
    }
}

// ---- analytic prior ----

TEST(Analytic, ZeroSigmaRecoversNoise) {
    const auto s = default_schedule();
    const auto mu = Var<double>::constant(random_tensor({3, 4, 3}, 5));
    Rng rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        const int t = static_cast<int>(rng.integer(0, 999));
        const auto eps = normal_tensor<double>({3, 4, 3}, rng);
        const auto zt = q_sample(mu, t, Var<double>::constant(eps), s);
        const auto hat = analytic_gaussian_eps(zt, s.alpha_bar_at(t), mu, 0.0).value();
        for (std::size_t i = 0; i < eps.numel(); ++i) ASSERT_NEAR(hat[i], eps[i], 1e-9) << "t=" << t;
    }
}

TEST(Analytic, NoiselessLatentGivesZero) {
    const auto mu = random_tensor({2, 3}, 8);
    for (double sigma0 : {0.0, 0.4}) {
        const double ab = 0.37;
        Tensor<double> z = mu;
        for (auto& v : z.data()) v *= std::sqrt(ab);
        const auto hat = analytic_gaussian_eps(Var<double>::constant(z), ab, Var<double>::constant(mu), sigma0).value();
        for (double v : hat.data()) EXPECT_NEAR(v, 0.0, 1e-15);
    }
}

TEST(Analytic, BeatsPerturbedLinearDenoisers) {
    // Data x ~ N(mu, sigma0²); the posterior-mean denoiser is the best linear one in (z - sqrt(ab) mu).
    const double sigma0 = 0.5, mu = 0.3, ab = 0.6;
    const std::size_t n = 100000;
    Rng rng(21);
    std::vector<double> z(n), eps(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = mu + sigma0 * rng.normal();
        eps[i] = rng.normal();
        z[i] = std::sqrt(ab) * x + std::sqrt(1 - ab) * eps[i];
    }
    const double gain = std::sqrt(1 - ab) / (ab * sigma0 * sigma0 + 1 - ab);
    auto risk = [&](double g, double shift) {
        double acc = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double e = eps[i] - g * (z[i] - std::sqrt(ab) * mu - shift);
            acc += e * e;
        }
        return acc / double(n);
    };
    const double best = risk(gain, 0);
    EXPECT_NEAR(best, 1 - (1 - ab) / (ab * sigma0 * sigma0 + 1 - ab), 0.01);
    for (double dg : {-0.2, -0.05, 0.05, 0.2}) EXPECT_GT(risk(gain * (1 + dg), 0), best) << dg;
    for (double ds : {-0.1, 0.1}) EXPECT_GT(risk(gain, ds), best) << ds;
}

TEST(Analytic, ConstructorChecks) {
    EXPECT_THROW(AnalyticGaussianPrior<double>(filled({2}, 0), -1.0, default_schedule()), std::invalid_argument);
    EXPECT_THROW(AnalyticGaussianPrior<double>(filled({2}, NAN), 0.1, default_schedule()), DomainError);
    AnalyticGaussianPrior<double> p(filled({2}, 0), 0.1, default_schedule());
    EXPECT_THROW(p.predict(Var<double>::constant(filled({3}, 0)), 5, Var<double>::constant(filled({1, 4}, 0))),
                 ShapeError);
}

// ---- residual ----

TEST(Residual, PerfectOracleIsZero) {
    const auto s = default_schedule();
    Rng rng(3);
    const auto eps = normal_tensor<double>({4, 4, 3}, rng);
    PerfectDenoiser d(eps);
    IdentityCodec<double> codec;
    const auto x = Var<double>::constant(random_tensor({4, 4, 3}, 4));
    const auto cond = Var<double>::constant(filled({1, 16}, 0));
    EXPECT_EQ(diffusion_residual<double>(d, codec, x, cond, 400, eps, s).value().item(), 0.0);
}

TEST(Residual, AnalyticAtMeanIsZero) {
    const auto s = default_schedule();
    const auto mu = random_tensor({4, 4, 3}, 9);
    AnalyticGaussianPrior<double> d(mu, 0.0, s);
    IdentityCodec<double> codec;
    const auto cond = Var<double>::constant(filled({2, 16}, 0));
    Rng rng(10);
    for (int trial = 0; trial < 20; ++trial) {
        const int t = sample_timestep(rng, s);
        const auto eps = normal_tensor<double>(mu.shape(), rng);
        EXPECT_NEAR(diffusion_residual<double>(d, codec, Var<double>::constant(mu), cond, t, eps, s).value().item(), 0.0,
                    1e-18);
    }
}

TEST(Residual, GradcheckAnalytic) {
    const auto s = default_schedule();
    AnalyticGaussianPrior<double> d(random_tensor({5, 4, 3}, 12), 0.3, s);
    IdentityCodec<double> codec;
    Rng rng(13);
    const auto eps = normal_tensor<double>({5, 4, 3}, rng);
    const auto cond = Var<double>::constant(filled({1, 16}, 0));
    for (int t : {30, 400, 950}) {
        ad::ScalarFn<double> f = [&](const Var<double>& x) { return diffusion_residual<double>(d, codec, x, cond, t, eps, s); };
        EXPECT_LT(ad::gradcheck(f, random_tensor({5, 4, 3}, 14), 1e-5), 1e-4) << "t=" << t;
    }
}

TEST(Residual, ShapeMismatchNamesBackend) {
    const auto s = default_schedule();
    PerfectDenoiser d(filled({3}, 0));
    IdentityCodec<double> codec;
    try {
        diffusion_residual<double>(d, codec, Var<double>::constant(filled({4}, 0)), Var<double>::constant(filled({1, 2}, 0)),
                                   3, filled({4}, 0), s);
        FAIL();
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("perfect"), std::string::npos);
    }
}

// ---- guidance ----

TEST(Guidance, ConcatKeepsOrder) {
    const auto s0 = random_tensor({2, 16}, 1), s_star = random_tensor({1, 16}, 2);
    const auto g = concat_guidance(s0, s_star);
    EXPECT_EQ(g.rows(), 3u);
    EXPECT_EQ(g.dim(), 16u);
    const auto joint = g.joint();
    ASSERT_EQ(joint.shape(), (ad::Shape{3, 16}));
    const auto j = Var<double>::constant(joint);
    EXPECT_EQ(ad::slice(j, 0, 0, 2).value(), s0);
    EXPECT_EQ(ad::slice(j, 0, 2, 3).value(), s_star);
}

TEST(Guidance, EmptyInversionSection) {
    const auto s0 = random_tensor({2, 16}, 3);
    EXPECT_EQ(concat_guidance(s0, Tensor<double>({0, 16})).joint(), s0);
}

TEST(Guidance, DimensionMismatch) {
    EXPECT_THROW(concat_guidance(Tensor<double>({1, 16}), Tensor<double>({1, 8})), ShapeError);
    EXPECT_THROW(concat_guidance(Tensor<double>({16}), Tensor<double>({1, 16})), ShapeError);
}

// ---- toy denoiser ----

TEST(Toy, UntrainedResidualIsNoiseEnergy) {
    const auto s = default_schedule();
    const auto cfg = small_toy();
    const auto d = ToyDenoiser<double>::init(cfg, s, 1);
    const auto sprites = make_sprites(30, 1);
    const std::vector<Tensor<double>> conds(30, filled({1, cfg.embed_dim}, 0.1));
    const double r = validation_residual(d, sprites.images, conds, s, 20, 5);
    EXPECT_NEAR(r / double(cfg.pixels()), 1.0, 0.1);
}

TEST(Toy, ZeroStepsIsInitialization) {
    const auto s = default_schedule();
    const auto cfg = small_toy();
    const auto sprites = make_sprites(9, 2);
    ToyTrainConfig tc;
    tc.steps = 0;
    tc.seed = 17;
    const auto prior = train_toy_denoiser<double>(sprites.images, sprites.labels, kClasses, s, cfg, tc);
    const auto init = ToyDenoiser<double>::init(cfg, s, 17);
    ASSERT_EQ(prior.denoiser.weights().size(), init.weights().size());
    for (std::size_t i = 0; i < init.weights().size(); ++i) EXPECT_EQ(prior.denoiser.weights()[i], init.weights()[i]);
    EXPECT_TRUE(prior.loss_trace.empty());
    EXPECT_EQ(prior.embeddings.shape(), (ad::Shape{3, cfg.embed_dim}));
}

TEST(Toy, InputValidation) {
    const auto s = default_schedule();
    const auto cfg = small_toy();
    const auto sprites = make_sprites(6, 3);
    ToyTrainConfig tc;
    tc.steps = 1;
    EXPECT_THROW(train_toy_denoiser<double>(Tensor<double>({0, 6, 6, 3}), {}, kClasses, s, cfg, tc), ShapeError);
    EXPECT_THROW(train_toy_denoiser<double>(sprites.images, {0, 1}, kClasses, s, cfg, tc), ShapeError);
    EXPECT_THROW(train_toy_denoiser<double>(sprites.images, {0, 1, 2, 3, 0, 1}, kClasses, s, cfg, tc),
                 std::invalid_argument);
    auto big = cfg;
    big.height = 8;
    EXPECT_THROW(train_toy_denoiser<double>(sprites.images, sprites.labels, kClasses, s, big, tc), ShapeError);
    const auto d = ToyDenoiser<double>::init(cfg, s, 0);
    EXPECT_THROW(d.predict(Var<double>::constant(filled({5, 5, 3}, 0)), 3, Var<double>::constant(filled({1, 8}, 0))),
                 ShapeError);
    EXPECT_THROW(d.predict(Var<double>::constant(filled({6, 6, 3}, 0)), 3, Var<double>::constant(filled({1, 4}, 0))),
                 ShapeError);
}

TEST(Toy, DivergenceReportsStep) {
    const auto s = default_schedule();
    const auto cfg = small_toy();
    auto sprites = make_sprites(6, 3);
    sprites.images[0] = NAN;
    ToyTrainConfig tc;
    tc.steps = 50;
    tc.batch = 6;
    try {
        train_toy_denoiser<double>(sprites.images, sprites.labels, kClasses, s, cfg, tc);
        FAIL();
    } catch (const DivergenceError& e) {
        EXPECT_GE(e.step(), 0);
        EXPECT_LT(e.step(), 50);
    }
}

namespace {

struct TrainedToy {
    ToyPrior<float> prior;
    Sprites held_out;
};

/// Conditional gap: residual under a wrong class embedding minus residual under the true one.
double conditional_gap(const ToyPrior<float>& p, const Sprites& val, const NoiseSchedule& s) {
    std::vector<Tensor<double>> right, wrong;
    for (int l : val.labels) {
        right.push_back(p.class_embedding(std::size_t(l)));
        wrong.push_back(p.class_embedding(std::size_t((l + 1) % 3)));
    }
    return validation_residual(p.denoiser, val.images, wrong, s, 8, 99) -
           validation_residual(p.denoiser, val.images, right, s, 8, 99);
}

const TrainedToy& trained(bool shuffled) {
    static std::map<bool, TrainedToy> cache;
    auto it = cache.find(shuffled);
    if (it != cache.end()) return it->second;
    const auto s = default_schedule();
    auto train = make_sprites(60, 31);
    if (shuffled) {
        Rng rng(5);
        std::shuffle(train.labels.begin(), train.labels.end(), rng.engine());
    }
    ToyTrainConfig tc;
    tc.steps = 600;
    tc.batch = 16;
    tc.lr = 3e-3;
    tc.seed = 8;
    auto p = train_toy_denoiser<float>(train.images, train.labels, kClasses, s, small_toy(), tc);
    return cache.emplace(shuffled, TrainedToy{std::move(p), make_sprites(30, 77)}).first->second;
}

}  // namespace

TEST(Toy, TrainingBeatsUntrainedBaseline) {
    const auto s = default_schedule();
    const auto& t = trained(false);
    std::vector<Tensor<double>> conds;
    for (int l : t.held_out.labels) conds.push_back(t.prior.class_embedding(std::size_t(l)));
    const auto untrained = ToyDenoiser<float>::init(small_toy(), s, 8);
    const double before = validation_residual(untrained, t.held_out.images, conds, s, 8, 3);
    const double after = validation_residual(t.prior.denoiser, t.held_out.images, conds, s, 8, 3);
    EXPECT_LT(after, 0.7 * before) << "before " << before << " after " << after;
    EXPECT_LT(moving_average(t.prior.loss_trace, 50).back(), moving_average(t.prior.loss_trace, 50)[49]);
}

TEST(Toy, ConditioningIsUsed) {
    const auto s = default_schedule();
    const double gap = conditional_gap(trained(false).prior, trained(false).held_out, s);
    const double shuffled_gap = conditional_gap(trained(true).prior, trained(true).held_out, s);
    EXPECT_GT(gap, shuffled_gap) << "gap " << gap << " shuffled " << shuffled_gap;
    EXPECT_GT(gap, 0.0);
}

TEST(Toy, PersistenceRoundTrip) {
    const auto dir = std::filesystem::temp_directory_path() / "nerdi_prior_test";
    std::filesystem::create_directories(dir);
    const auto& p = trained(false).prior;
    save_toy_denoiser((dir / "toy.nrdt").string(), p.denoiser);
    const auto back = load_toy_denoiser<float>((dir / "toy.nrdt").string());
    ASSERT_EQ(back.weights().size(), p.denoiser.weights().size());
    for (std::size_t i = 0; i < back.weights().size(); ++i) EXPECT_EQ(back.weights()[i], p.denoiser.weights()[i]);
    EXPECT_EQ(back.schedule().alpha_bar, p.denoiser.schedule().alpha_bar);
    EXPECT_EQ(back.config().hidden, p.denoiser.config().hidden);

    save_embeddings((dir / "vocab.nrde").string(), p.embeddings, p.class_names);
    const auto [table, names] = load_embeddings((dir / "vocab.nrde").string());
    EXPECT_EQ(table, p.embeddings);
    EXPECT_EQ(names, kClasses);
    EXPECT_THROW(load_toy_denoiser<float>((dir / "vocab.nrde").string()), FormatError);
    std::filesystem::remove_all(dir);
}

// ---- textual inversion ----

TEST(Inversion, ZeroStepsReturnsInit) {
    const auto s = default_schedule();
    const auto d = ToyDenoiser<double>::init(small_toy(), s, 0);
    IdentityCodec<double> codec;
    const auto sprites = make_sprites(3, 1);
    std::vector<Tensor<double>> imgs{ad::slice(Var<double>::constant(sprites.images), 0, 0, 1).value().reshaped({6, 6, 3})};
    const auto init = random_tensor({1, 8}, 4);
    InversionConfig ic;
    ic.steps = 0;
    const auto r = textual_inversion<double>(imgs, d, codec, s, init, ic);
    EXPECT_EQ(r.embedding, init);
    EXPECT_TRUE(r.loss_trace.empty());
    ic.steps = -1;
    EXPECT_THROW(textual_inversion<double>(imgs, d, codec, s, init, ic), std::invalid_argument);
}

TEST(Inversion, RecoversClassOfHeldOutImages) {
    const auto s = default_schedule();
    const auto& t = trained(false);
    IdentityCodec<float> codec;
    int correct = 0;
    for (std::size_t i = 0; i < 6; ++i) {
        std::vector<Tensor<double>> imgs{
            ad::slice(Var<double>::constant(t.held_out.images), 0, i, i + 1).value().reshaped({6, 6, 3})};
        InversionConfig ic;
        ic.steps = 150;
        ic.lr = 5e-2;
        ic.seed = i;
        const auto r = textual_inversion<float>(imgs, t.prior.denoiser, codec, s, t.prior.vocabulary_mean(), ic);
        std::size_t best = 0;
        double best_sim = -2;
        for (std::size_t k = 0; k < 3; ++k) {
            const double sim = cosine_similarity(r.embedding, t.prior.class_embedding(k));
            if (sim > best_sim) best_sim = sim, best = k;
        }
        correct += best == std::size_t(t.held_out.labels[i]);
    }
    EXPECT_GE(correct, 5);
}

TEST(Inversion, MovingAverage) {
    const auto m = moving_average({1, 2, 3, 4, 5}, 2);
    EXPECT_EQ(m, (std::vector<double>{1, 1.5, 2.5, 3.5, 4.5}));
    EXPECT_NEAR(cosine_similarity(filled({1, 3}, 2), filled({1, 3}, 5)), 1.0, 1e-15);
}

// ---- shared Denoiser conformance ----

namespace {

struct Backend {
    std::string label;
    std::function<std::shared_ptr<Denoiser<double>>()> make;
    ad::Shape input;
    std::size_t embed_dim;
};

std::shared_ptr<MockBridge> shared_mock() {
    static auto mock = std::make_shared<MockBridge>();
    return mock;
}

std::vector<Backend> backends() {
    return {
        {"analytic",
         [] { return std::make_shared<AnalyticGaussianPrior<double>>(filled({6, 6, 3}, 0.5), 0.25, default_schedule()); },
         {6, 6, 3}, 16},
        {"toy",
         [] {
             auto d = ToyDenoiser<double>::init(small_toy(), default_schedule(), 3);
             for (auto& v : d.weights()[4].data()) v = 0.01;
             return std::make_shared<ToyDenoiser<double>>(std::move(d));
         },
         {6, 6, 3}, 8},
        {"remote",
         [] {
             BridgeConfig bc;
             bc.url = shared_mock()->url();
             return std::make_shared<RemoteDenoiser<double>>(std::make_shared<BridgeClient>(bc));
         },
         {6, 6, 3}, 16},
    };
}

class Conformance : public ::testing::TestWithParam<std::size_t> {
protected:
    Backend backend() const { return backends()[GetParam()]; }
};

}  // namespace

TEST_P(Conformance, ShapeEchoAndFinite) {
    const auto b = backend();
    const auto d = b.make();
    const auto z = Var<double>::constant(random_tensor(b.input, 1, -1, 1));
    for (std::size_t rows : {1u, 2u}) {
        const auto out = d->predict(z, 250, Var<double>::constant(random_tensor({rows, b.embed_dim}, 2)));
        EXPECT_EQ(out.shape(), z.shape()) << b.label;
        EXPECT_TRUE(out.value().all_finite()) << b.label;
    }
}

TEST_P(Conformance, Deterministic) {
    const auto b = backend();
    const auto d = b.make();
    const auto z = Var<double>::constant(random_tensor(b.input, 3, -1, 1));
    const auto c = Var<double>::constant(random_tensor({2, b.embed_dim}, 4));
    EXPECT_EQ(d->predict(z, 600, c).value(), d->predict(z, 600, c).value()) << b.label;
    EXPECT_EQ(d->predict(z, 600, c).value(), b.make()->predict(z, 600, c).value()) << b.label;
}

TEST_P(Conformance, DependsOnTimestep) {
    const auto b = backend();
    const auto d = b.make();
    const auto z = Var<double>::constant(random_tensor(b.input, 5, -1, 1));
    const auto c = Var<double>::constant(random_tensor({1, b.embed_dim}, 6));
    EXPECT_NE(d->predict(z, 30, c).value(), d->predict(z, 900, c).value()) << b.label;
}

TEST_P(Conformance, RejectsOutOfRangeTimestep) {
    const auto b = backend();
    const auto d = b.make();
    const auto z = Var<double>::constant(random_tensor(b.input, 7));
    const auto c = Var<double>::constant(random_tensor({1, b.embed_dim}, 8));
    EXPECT_THROW(d->predict(z, 1000, c), std::exception) << b.label;
    EXPECT_THROW(d->predict(z, -5, c), std::exception) << b.label;
}

TEST_P(Conformance, ConcurrentCallsAgree) {
    const auto b = backend();
    const auto d = b.make();
    const auto z = Var<double>::constant(random_tensor(b.input, 9, -1, 1));
    const auto c = Var<double>::constant(random_tensor({1, b.embed_dim}, 10));
    const auto expect = d->predict(z, 321, c).value();
    std::vector<Tensor<double>> got(4);
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < got.size(); ++i) {
        threads.emplace_back([&, i] { got[i] = d->predict(z, 321, c).value(); });
    }
    for (auto& th : threads) th.join();
    for (const auto& g : got) EXPECT_EQ(g, expect) << b.label;
}

TEST_P(Conformance, ResidualThroughBackend) {
    const auto b = backend();
    const auto d = b.make();
    IdentityCodec<double> codec;
    Rng rng(12);
    const auto eps = normal_tensor<double>(b.input, rng);
    const auto r = diffusion_residual<double>(*d, codec, Var<double>::constant(random_tensor(b.input, 11)),
                                              Var<double>::constant(random_tensor({1, b.embed_dim}, 13)), 500, eps,
                                              default_schedule());
    EXPECT_TRUE(std::isfinite(r.value().item())) << b.label;
    EXPECT_GE(r.value().item(), 0.0) << b.label;
}

INSTANTIATE_TEST_SUITE_P(Backends, Conformance, ::testing::Values(0u, 1u, 2u),
                         [](const auto& info) { return backends()[info.param].label; });

// ---- bridge protocol against the in-repo mock ----

TEST(Wire, Base64KnownVectors) {
    EXPECT_EQ(wire::base64_encode(""), "");
    EXPECT_EQ(wire::base64_encode("f"), "Zg==");
    EXPECT_EQ(wire::base64_encode("fo"), "Zm8=");
    EXPECT_EQ(wire::base64_encode("foobar"), "Zm9vYmFy");
    for (const std::string s : {"", "f", "fo", "foo", "foob", "fooba", "foobar"}) {
        EXPECT_EQ(wire::base64_decode(wire::base64_encode(s)), s);
    }
    EXPECT_THROW(wire::base64_decode("Zm9"), FormatError);
    EXPECT_THROW(wire::base64_decode("Z!9v"), FormatError);
}

TEST(Wire, TensorPayloadRoundTrip) {
    Tensor<double> t({2, 3}, 0.0);
    for (std::size_t i = 0; i < 6; ++i) t[i] = 0.25 * double(i) - 0.5;
    const auto j = wire::encode_tensor(t);
    EXPECT_EQ(j["dtype"], "f32");
    EXPECT_EQ(j["shape"], (std::vector<std::size_t>{2, 3}));
    EXPECT_EQ(wire::decode_tensor(j), t);
    auto bad = j;
    bad["shape"] = {4, 3};
    EXPECT_THROW(wire::decode_tensor(bad), ShapeError);
    bad = j;
    bad["dtype"] = "f64";
    EXPECT_THROW(wire::decode_tensor(bad), FormatError);
}

TEST(Bridge, HealthAndEndpoints) {
    MockBridge mock;
    BridgeClient client({mock.url()});
    EXPECT_TRUE(client.health());
    const auto img = random_tensor({4, 5, 3}, 1);
    const auto latent = client.encode(img);
    EXPECT_EQ(latent.shape(), img.shape());
    EXPECT_EQ(client.decode(latent).shape(), img.shape());
    EXPECT_EQ(client.depth(img).shape(), (ad::Shape{4, 5}));
    const auto e1 = client.text_embed("a chair"), e2 = client.text_embed("a chair"), e3 = client.text_embed("a car");
    EXPECT_EQ(e1.shape(), (ad::Shape{1, 16}));
    EXPECT_EQ(e1, e2);
    EXPECT_NE(e1, e3);
    try {
        client.caption(img);
        FAIL();
    } catch (const BridgeError& e) {
        EXPECT_EQ(e.status(), 500);
        EXPECT_NE(std::string(e.what()).find("unsupported"), std::string::npos);
    }
}

TEST(Bridge, RemoteMatchesLocalAnalytic) {
    const auto mu = random_tensor({4, 4, 3}, 2);
    MockBridge::Options opt;
    opt.mean = mu;
    opt.sigma0 = 0.2;
    MockBridge mock(opt);
    RemoteDenoiser<double> remote(std::make_shared<BridgeClient>(BridgeConfig{mock.url()}));
    AnalyticGaussianPrior<double> local(mu, 0.2, default_schedule());
    const auto z = Var<double>::constant(random_tensor({4, 4, 3}, 3, -1, 1));
    const auto c = Var<double>::constant(filled({1, 16}, 0));
    const auto a = remote.predict(z, 700, c).value(), b = local.predict(z, 700, c).value();
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-5 * (1 + std::abs(b[i])));
    EXPECT_FALSE(remote.differentiable());
}

TEST(Bridge, RetriesBusyThenSucceeds) {
    MockBridge mock;
    BridgeConfig bc{mock.url()};
    bc.backoff_ms = 1;
    BridgeClient client(bc);
    mock.set_busy(3);
    EXPECT_EQ(client.text_embed("x").shape(), (ad::Shape{1, 16}));
    EXPECT_EQ(mock.requests(), 4);
    mock.set_busy(10);
    try {
        client.text_embed("x");
        FAIL();
    } catch (const BridgeError& e) {
        EXPECT_EQ(e.status(), 503);
    }
}

TEST(Bridge, ErrorCodes) {
    MockBridge mock;
    httplib::Client raw(mock.url());
    auto res = raw.Post("/denoise", "{not json", "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 400);

    auto payload = wire::encode_tensor(filled({2, 2}, 1.0));
    payload["shape"] = {3, 2};
    wire::json body{{"id", "abc"}, {"z_t", payload}, {"t", 5}, {"cond", wire::encode_tensor(filled({1, 16}, 0))}};
    res = raw.Post("/denoise", body.dump(), "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 422);
    EXPECT_EQ(wire::json::parse(res->body)["id"], "abc");

    body["z_t"] = wire::encode_tensor(filled({2, 2}, 1.0));
    res = raw.Post("/denoise", body.dump(), "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    EXPECT_EQ(wire::json::parse(res->body)["id"], "abc");
    EXPECT_EQ(res->get_header_value(wire::kProtoHeader), "1");
}

TEST(Bridge, RejectsStaleRequestId) {
    MockBridge mock;
    BridgeClient client({mock.url()});
    mock.set_drop_id(true);
    EXPECT_THROW(client.text_embed("x"), BridgeError);
}

TEST(Bridge, TimeoutAndUnreachable) {
    MockBridge mock;
    BridgeConfig bc{mock.url()};
    bc.timeout_s = 0.1;
    BridgeClient client(bc);
    mock.set_delay_ms(400);
    try {
        client.text_embed("slow");
        FAIL();
    } catch (const BridgeError& e) {
        EXPECT_EQ(e.status(), 0);
    }
    mock.set_delay_ms(0);

    BridgeConfig dead{"http://127.0.0.1:1"};
    dead.timeout_s = 0.5;
    BridgeClient nobody(dead);
    EXPECT_FALSE(nobody.health());
    EXPECT_THROW(nobody.text_embed("x"), BridgeError);
}

TEST(Bridge, InversionNeedsDifferentiableBackend) {
    MockBridge mock;
    RemoteDenoiser<double> remote(std::make_shared<BridgeClient>(BridgeConfig{mock.url()}));
    IdentityCodec<double> codec;
    InversionConfig ic;
    ic.steps = 1;
    EXPECT_THROW(textual_inversion<double>({filled({6, 6, 3}, 0.5)}, remote, codec, default_schedule(),
                                           filled({1, 16}, 0), ic),
                 std::invalid_argument);
}

// ---- Adam ----

TEST(Adam, FirstStepMovesByLearningRate) {
    std::vector<Tensor<double>> p{Tensor<double>({3}, 1.0)};
    Tensor<double> g({3});
    g[0] = 2.0, g[1] = -0.5, g[2] = 0.0;
    trainer::AdamState<double> st;
    trainer::adam_step(p, {g}, st, 0.1);
    EXPECT_NEAR(p[0][0], 0.9, 1e-8);
    EXPECT_NEAR(p[0][1], 1.1, 1e-8);
    EXPECT_DOUBLE_EQ(p[0][2], 1.0);
    EXPECT_EQ(st.step, 1);
}

TEST(Adam, MinimizesQuadratic) {
    std::vector<Tensor<double>> p{Tensor<double>({2}, 3.0)};
    trainer::AdamState<double> st;
    for (int i = 0; i < 2000; ++i) {
        Tensor<double> g({2});
        g[0] = 2 * (p[0][0] - 1.0);
        g[1] = 2 * (p[0][1] + 2.0);
        trainer::adam_step(p, {g}, st, 0.05);
    }
    EXPECT_NEAR(p[0][0], 1.0, 1e-3);
    EXPECT_NEAR(p[0][1], -2.0, 1e-3);
}

TEST(Adam, Errors) {
    std::vector<Tensor<double>> p{Tensor<double>({2})};
    trainer::AdamState<double> st;
    EXPECT_THROW(trainer::adam_step(p, {Tensor<double>({3})}, st, 0.1), ShapeError);
    EXPECT_THROW(trainer::adam_step(p, {}, st, 0.1), ShapeError);
    EXPECT_THROW(trainer::adam_step(p, {Tensor<double>({2}, NAN)}, st, 0.1), DomainError);
}
