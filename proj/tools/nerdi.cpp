// nerdi command line: make-scene, synth, render, invert, eval, train-prior.
#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "nerdi/prior.hpp"
#include "nerdi/toolkit.hpp"
#include "nerdi/trainer.hpp"

namespace fs = std::filesystem;
using namespace nerdi;
using Real = float;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::pair<render::Intrinsics, render::Pose> read_camera(const std::string& path, std::size_t index) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open camera file " + path);
    std::string line;
    std::size_t i = 0;
    while (std::getline(f, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        if (i++ == index) return render::parse_camera(line);
    }
    throw FormatError(path + ": no camera record " + std::to_string(index));
}

std::vector<std::pair<render::Intrinsics, render::Pose>> read_cameras(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open camera file " + path);
    std::vector<std::pair<render::Intrinsics, render::Pose>> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.find_first_not_of(" \t\r") != std::string::npos) out.push_back(render::parse_camera(line));
    }
    return out;
}

void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << j.dump(2) << "\n";
}

ad::Tensor<Real> to_real(const ad::Tensor<double>& t) { return t.cast<Real>(); }

// ---- make-scene ----

struct MakeSceneArgs {
    std::string label = "snowman", out, prior_mean;
    std::uint64_t seed = 1;
    std::size_t views = 9, mean_members = 32;
    int size = 64, samples = 512, mean_size = 32;
    double depth_noise = 0, depth_scale = 1, depth_shift = 0;
};

int cmd_make_scene(const MakeSceneArgs& a) {
    const auto spec = toolkit::make_class_scene(a.label, a.seed);
    toolkit::OracleDatasetOptions opt;
    opt.views = a.views;
    opt.width = opt.height = a.size;
    opt.samples = a.samples;
    auto ds = toolkit::make_oracle_dataset(spec, opt);
    if (a.depth_noise > 0 || a.depth_scale != 1 || a.depth_shift != 0) {
        Rng rng(derive_seed(a.seed, 0x6e6f697365ULL));
        for (auto& d : ds.depths) d = toolkit::distort_depth(d, a.depth_scale, a.depth_shift, a.depth_noise, rng);
    }
    toolkit::save_dataset(a.out, ds);
    if (!a.prior_mean.empty()) {
        trainer::ViewRange range;
        const auto mu = toolkit::class_mean_image(a.label, range, a.mean_size, a.mean_members,
                                                  derive_seed(a.seed, 0x636c617373ULL));
        toolkit::save_png(a.prior_mean, mu);
    }
    std::cout << "wrote " << ds.size() << " views of '" << a.label << "' to " << a.out << "\n";
    return 0;
}

// ---- synth ----

struct SynthArgs {
    std::string image, config, depth, caption_class, prior = "", camera, embedding, prior_mean, out = "synth_out";
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::size_t camera_index = 0, workers = 1;
    int turntable = 8;
    bool resume = false;
};

/// Denoiser, codec and guidance for one synthesis run; owns whatever it builds.
struct PriorSetup {
    std::unique_ptr<prior::Denoiser<Real>> denoiser;
    std::unique_ptr<prior::LatentCodec<Real>> codec;
    prior::NoiseSchedule schedule = prior::default_schedule();
    ad::Tensor<Real> cond;
};

ad::Tensor<double> load_inversion(const std::string& path, std::size_t dim) {
    if (path.empty()) return ad::Tensor<double>({0, dim});
    auto [table, names] = prior::load_embeddings(path);
    if (table.dim(1) != dim) throw ShapeError(path + ": embedding dimension does not match the prior");
    return table;
}

PriorSetup make_prior(const SynthArgs& a, const trainer::SynthesisConfig& cfg, const Image& input) {
    PriorSetup p;
    const std::size_t S = std::size_t(cfg.prior_size);
    if (cfg.prior_backend == "analytic") {
        const Image mu = a.prior_mean.empty() ? render::resize(input, S, S) : toolkit::load_png(a.prior_mean);
        if (height_of(mu) != S || width_of(mu) != S) {
            throw ShapeError("prior mean must be " + std::to_string(S) + "x" + std::to_string(S) + " (view.prior_size)");
        }
        p.denoiser = std::make_unique<prior::AnalyticGaussianPrior<Real>>(to_real(mu), cfg.prior_sigma0, p.schedule);
        p.codec = std::make_unique<prior::IdentityCodec<Real>>();
        p.cond = ad::Tensor<Real>({1, 1});
    } else if (cfg.prior_backend == "toy") {
        if (cfg.prior_model.empty() || cfg.prior_vocab.empty()) {
            throw UsageError("the toy prior needs prior.model and prior.vocab");
        }
        auto den = prior::load_toy_denoiser<Real>(cfg.prior_model);
        if (den.config().height != S || den.config().width != S) {
            throw ShapeError("toy prior is " + std::to_string(den.config().height) + "x" +
                             std::to_string(den.config().width) + " but view.prior_size is " + std::to_string(S));
        }
        auto [table, names] = prior::load_embeddings(cfg.prior_vocab);
        ad::Tensor<double> s0;
        if (a.caption_class.empty()) {
            s0 = ad::mean(ad::Var<double>::constant(table), 0).value().reshaped({1, table.dim(1)});
        } else {
            const auto it = std::find(names.begin(), names.end(), a.caption_class);
            if (it == names.end()) throw std::invalid_argument("class '" + a.caption_class + "' is not in " + cfg.prior_vocab);
            s0 = ad::slice(ad::Var<double>::constant(table), 0, std::size_t(it - names.begin()),
                           std::size_t(it - names.begin()) + 1)
                     .value();
        }
        p.schedule = den.schedule();
        p.cond = to_real(prior::concat_guidance(s0, load_inversion(a.embedding, table.dim(1))).joint());
        p.denoiser = std::make_unique<prior::ToyDenoiser<Real>>(std::move(den));
        p.codec = std::make_unique<prior::IdentityCodec<Real>>();
    } else {
        prior::BridgeConfig bc;
        if (const char* url = std::getenv("NERDI_BRIDGE_URL")) bc.url = url;
        auto client = std::make_shared<prior::BridgeClient>(bc);
        if (!client->health()) throw prior::BridgeError("bridge at " + bc.url + " is not healthy", 0);
        const std::string caption = a.caption_class.empty() ? client->caption(render::resize(input, S, S))
                                                            : a.caption_class;
        const auto s0 = client->text_embed(caption);
        p.cond = to_real(prior::concat_guidance(s0, load_inversion(a.embedding, s0.dim(1))).joint());
        p.denoiser = std::make_unique<prior::RemoteDenoiser<Real>>(client);
        p.codec = std::make_unique<prior::RemoteCodec<Real>>(client);
    }
    return p;
}

int cmd_synth(const SynthArgs& a) {
    auto cfg = trainer::load_config(a.config);
    if (!a.prior.empty()) cfg.prior_backend = a.prior;
    for (const auto& s : a.sets) trainer::apply_override(cfg, s);
    if (a.seed) cfg.seed = *a.seed;
    cfg.validate();
    set_worker_count(a.workers);

    trainer::SynthesisInputs<Real> in;
    in.image = toolkit::load_png(a.image);
    const int W = int(width_of(in.image)), H = int(height_of(in.image));
    if (a.camera.empty()) {
        std::tie(in.K, in.pose) = trainer::canonical_camera(W, H);
    } else {
        std::tie(in.K, in.pose) = read_camera(a.camera, a.camera_index);
    }
    if (!a.depth.empty()) in.depth = toolkit::load_depth(a.depth);

    PriorSetup p;
    if (cfg.weights.diff > 0) {
        p = make_prior(a, cfg, in.image);
        in.denoiser = p.denoiser.get();
        in.codec = p.codec.get();
        in.schedule = &p.schedule;
        in.cond = p.cond;
    }

    fs::create_directories(a.out);
    const std::string ckpt = (fs::path(a.out) / "checkpoint.nrdf").string();
    const std::string log = (fs::path(a.out) / "log.jsonl").string();
    std::optional<trainer::TrainState<Real>> warm;
    if (a.resume && fs::exists(ckpt)) {
        warm = trainer::load_checkpoint<Real>(ckpt);
    } else if (fs::exists(log)) {
        fs::remove(log);
    }
    {
        std::ofstream f(fs::path(a.out) / "config.ini");
        f << trainer::to_ini(cfg);
    }
    trainer::SynthesisHooks hooks;
    hooks.log_path = log;
    hooks.checkpoint_path = ckpt;
    const long every = std::max(1L, cfg.iterations / 10);
    hooks.on_report = [&](const objective::LossReport& r) {
        if (r.step % every == 0 || r.step + 1 == cfg.iterations) std::cerr << r.to_line() << "\n";
    };
    const auto res = trainer::synthesize(in, cfg, std::move(warm), hooks);

    const fs::path tdir = fs::path(a.out) / "turntable";
    fs::create_directories(tdir);
    std::ofstream cams(tdir / "cameras.txt");
    const double radius = 0.5 * (cfg.view.radius_min + cfg.view.radius_max);
    for (int k = 0; k < a.turntable; ++k) {
        const auto pose = trainer::orbit_pose(radius, 15.0, 360.0 * k / a.turntable);
        const auto r = render::render_image(res.state.params, in.K, pose, cfg.render);
        char name[32];
        std::snprintf(name, sizeof name, "%04d.png", k);
        toolkit::save_png((tdir / name).string(), r.rgb);
        cams << render::format_camera(in.K, pose) << "\n";
    }
    std::cout << "checkpoint " << ckpt << " after " << res.state.step << " steps (config " << trainer::config_hash(cfg)
              << ")\n";
    return 0;
}

// ---- render ----

struct RenderArgs {
    std::string checkpoint, cameras, out = "render_out";
    int samples = 128;
    std::size_t workers = 1;
};

field::FieldParams<Real> load_params(const std::string& path) {
    if (!fs::exists(path)) throw std::runtime_error("checkpoint not found: " + path);
    return trainer::load_checkpoint<Real>(path).params;
}

int cmd_render(const RenderArgs& a) {
    const auto params = load_params(a.checkpoint);
    const auto cams = read_cameras(a.cameras);
    set_worker_count(a.workers);
    render::RenderConfig rc;
    rc.samples_per_ray = a.samples;
    toolkit::Dataset ds;
    for (const auto& [K, pose] : cams) {
        const auto r = render::render_image(params, K, pose, rc);
        ds.images.push_back(r.rgb);
        ds.depths.push_back(r.depth);
        ds.cameras.emplace_back(K, pose);
    }
    toolkit::save_dataset(a.out, ds);
    std::cout << "rendered " << ds.size() << " views to " << a.out << "\n";
    return 0;
}

// ---- invert ----

struct InvertArgs {
    std::vector<std::string> images;
    std::string model, vocab, out = "embedding.nrde";
    long steps = 300;
    double lr = 2e-2;
    std::uint64_t seed = 0;
};

int cmd_invert(const InvertArgs& a) {
    const auto den = prior::load_toy_denoiser<Real>(a.model);
    const auto [table, names] = prior::load_embeddings(a.vocab);
    std::vector<ad::Tensor<double>> imgs;
    for (const auto& p : a.images) {
        auto img = toolkit::load_png(p);
        const auto& k = den.config();
        if (height_of(img) != k.height || width_of(img) != k.width) img = render::resize(img, k.height, k.width);
        imgs.push_back(std::move(img));
    }
    prior::InversionConfig ic;
    ic.steps = a.steps;
    ic.lr = a.lr;
    ic.seed = a.seed;
    const auto init = ad::mean(ad::Var<double>::constant(table), 0).value().reshaped({1, table.dim(1)});
    prior::IdentityCodec<Real> codec;
    const auto res = prior::textual_inversion(imgs, den, codec, den.schedule(), init, ic);
    prior::save_embeddings(a.out, res.embedding, {"inverted"});
    std::size_t best = 0;
    double best_cos = -2;
    for (std::size_t k = 0; k < table.dim(0); ++k) {
        const double c = prior::cosine_similarity(res.embedding, ad::slice(ad::Var<double>::constant(table), 0, k, k + 1).value());
        if (c > best_cos) best_cos = c, best = k;
    }
    std::cout << "embedding " << a.out << " nearest class " << (best < names.size() ? names[best] : std::to_string(best))
              << " (cosine " << best_cos << ")\n";
    return 0;
}

// ---- eval ----

struct EvalArgs {
    std::string pred, truth, checkpoint, out;
    std::vector<std::size_t> views;
    int samples = 128;
    std::size_t workers = 1;
};

std::vector<fs::path> png_files(const fs::path& dir) {
    std::vector<fs::path> out;
    if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() == ".png") out.push_back(e.path().filename());
    }
    std::sort(out.begin(), out.end());
    return out;
}

/// Image directory, or dataset directory with an rgb/ subfolder.
fs::path image_dir(const std::string& d) {
    return fs::is_directory(fs::path(d) / "rgb") ? fs::path(d) / "rgb" : fs::path(d);
}

int cmd_eval(const EvalArgs& a) {
    toolkit::EvalReport rep;
    if (!a.checkpoint.empty()) {
        const auto params = load_params(a.checkpoint);
        const auto ds = toolkit::load_dataset(a.truth);
        set_worker_count(a.workers);
        auto views = a.views;
        if (views.empty()) {
            for (std::size_t v = 1; v < ds.size(); ++v) views.push_back(v);
        }
        render::RenderConfig rc;
        rc.samples_per_ray = a.samples;
        std::vector<Image> pred, truth;
        for (auto v : views) {
            if (v >= ds.size()) throw std::invalid_argument("view " + std::to_string(v) + " is not in the dataset");
            pred.push_back(render::render_image(params, ds.cameras[v].first, ds.cameras[v].second, rc).rgb);
            truth.push_back(ds.images[v]);
        }
        rep = toolkit::compare_images(pred, truth, views);
        if (!ds.depths.empty()) {
            const auto r0 = render::render_image(params, ds.cameras[0].first, ds.cameras[0].second, rc);
            rep.depth_pearson = toolkit::depth_correlation(r0.depth, ds.depths[0]);
        }
        const auto ini = fs::path(a.checkpoint).parent_path() / "config.ini";
        if (fs::exists(ini)) rep.config_hash = trainer::config_hash(trainer::load_config(ini.string()));
    } else {
        if (a.pred.empty()) throw UsageError("eval needs --pred or --checkpoint");
        const auto pd = image_dir(a.pred), td = image_dir(a.truth);
        const auto names = png_files(pd);
        if (names.empty()) throw std::runtime_error(pd.string() + ": no PNG images");
        std::vector<Image> pred, truth;
        for (const auto& n : names) {
            if (!fs::exists(td / n)) throw std::runtime_error((td / n).string() + ": missing reference image");
            pred.push_back(toolkit::load_png((pd / n).string()));
            truth.push_back(toolkit::load_png((td / n).string()));
        }
        rep = toolkit::compare_images(pred, truth);
    }
    const auto j = rep.to_json();
    if (!a.out.empty()) write_json(a.out, j);
    const auto p = rep.psnr_summary(), s = rep.ssim_summary();
    std::printf("PSNR %.4f +- %.4f dB  SSIM %.6f +- %.6f", p.mean, p.std, s.mean, s.std);
    if (rep.depth_pearson) std::printf("  depth rho %.6f", *rep.depth_pearson);
    std::printf("\n");
    return 0;
}

// ---- train-prior ----

struct TrainPriorArgs {
    std::string model = "toy.nrdt", vocab = "toy.nrde";
    std::size_t per_class = 48, hidden = 256;
    int size = 32;
    long steps = 3000;
    std::uint64_t seed = 0;
};

int cmd_train_prior(const TrainPriorArgs& a) {
    const auto data = toolkit::make_class_images(toolkit::oracle_classes(), a.per_class, a.size, trainer::ViewRange{}, a.seed);
    prior::ToyConfig tc;
    tc.height = tc.width = std::size_t(a.size);
    tc.hidden = a.hidden;
    prior::ToyTrainConfig tr;
    tr.steps = a.steps;
    tr.seed = a.seed;
    tr.on_step = [&](long step, double loss) {
        if (step % 500 == 0 || step + 1 == a.steps) std::cerr << "step " << step << " loss " << loss << "\n";
    };
    const auto p = prior::train_toy_denoiser<Real>(data.images, data.labels, data.class_names, prior::default_schedule(), tc, tr);
    prior::save_toy_denoiser(a.model, p.denoiser);
    prior::save_embeddings(a.vocab, p.embeddings, p.class_names);
    std::cout << "wrote " << a.model << " and " << a.vocab << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"nerdi: single-image radiance field synthesis"};
    app.require_subcommand(1);

    MakeSceneArgs ms;
    auto* c_ms = app.add_subcommand("make-scene", "render an oracle dataset");
    c_ms->add_option("--class", ms.label, "oracle class")->check(CLI::IsMember(toolkit::oracle_classes()));
    c_ms->add_option("--seed", ms.seed, "scene seed");
    c_ms->add_option("--out", ms.out, "dataset directory")->required();
    c_ms->add_option("--views", ms.views, "number of views (view 0 is the input)");
    c_ms->add_option("--size", ms.size, "image side in pixels");
    c_ms->add_option("--samples", ms.samples, "samples per ray");
    c_ms->add_option("--depth-noise", ms.depth_noise, "std of Gaussian noise added to depth");
    c_ms->add_option("--depth-scale", ms.depth_scale, "depth scale distortion");
    c_ms->add_option("--depth-shift", ms.depth_shift, "depth shift distortion");
    c_ms->add_option("--prior-mean", ms.prior_mean, "also write a class mean image (PNG) for the analytic prior");
    c_ms->add_option("--prior-mean-size", ms.mean_size, "side of the class mean image");
    c_ms->add_option("--prior-mean-members", ms.mean_members, "scenes averaged into the class mean");

    SynthArgs sy;
    auto* c_sy = app.add_subcommand("synth", "fit a radiance field to one image");
    c_sy->add_option("--image", sy.image, "input PNG")->required();
    c_sy->add_option("--config", sy.config, "INI config")->required();
    c_sy->add_option("--depth", sy.depth, "depth estimate (.pfm or .png)");
    c_sy->add_option("--caption-class", sy.caption_class, "caption / class name for guidance");
    c_sy->add_option("--prior", sy.prior, "prior backend")->check(CLI::IsMember({"analytic", "toy", "remote"}));
    c_sy->add_option("--prior-mean", sy.prior_mean, "analytic prior mean (PNG); default: resized input");
    c_sy->add_option("--embedding", sy.embedding, "inverted embedding to append to the guidance");
    c_sy->add_option("--camera", sy.camera, "camera file (one record per line)");
    c_sy->add_option("--camera-index", sy.camera_index, "record to use from --camera");
    c_sy->add_option("--set", sy.sets, "config override section.key=value")->take_all();
    c_sy->add_option("--seed", sy.seed, "seed override");
    c_sy->add_option("--out", sy.out, "output directory");
    c_sy->add_option("--turntable", sy.turntable, "turntable frames")->check(CLI::NonNegativeNumber);
    c_sy->add_option("--workers", sy.workers, "render worker threads");
    c_sy->add_flag("--resume", sy.resume, "continue from the checkpoint in --out");

    RenderArgs re;
    auto* c_re = app.add_subcommand("render", "render novel views from a checkpoint");
    c_re->add_option("--checkpoint", re.checkpoint, "checkpoint file")->required();
    c_re->add_option("--cameras", re.cameras, "camera file (one record per line)")->required();
    c_re->add_option("--out", re.out, "output dataset directory");
    c_re->add_option("--samples", re.samples, "samples per ray");
    c_re->add_option("--workers", re.workers, "render worker threads");

    InvertArgs iv;
    auto* c_iv = app.add_subcommand("invert", "textual inversion against a toy prior");
    c_iv->add_option("--image", iv.images, "input PNG (repeatable)")->required();
    c_iv->add_option("--model", iv.model, "toy denoiser weights")->required();
    c_iv->add_option("--vocab", iv.vocab, "toy class embeddings")->required();
    c_iv->add_option("--out", iv.out, "embedding file");
    c_iv->add_option("--steps", iv.steps, "optimization steps");
    c_iv->add_option("--lr", iv.lr, "learning rate");
    c_iv->add_option("--seed", iv.seed, "seed");

    EvalArgs ev;
    auto* c_ev = app.add_subcommand("eval", "PSNR / SSIM against reference images");
    c_ev->add_option("--truth", ev.truth, "reference image or dataset directory")->required();
    c_ev->add_option("--pred", ev.pred, "predicted image directory");
    c_ev->add_option("--checkpoint", ev.checkpoint, "render this checkpoint at the --truth dataset cameras");
    c_ev->add_option("--views", ev.views, "dataset views to score (default: all but view 0)");
    c_ev->add_option("--out", ev.out, "report JSON");
    c_ev->add_option("--samples", ev.samples, "samples per ray");
    c_ev->add_option("--workers", ev.workers, "render worker threads");

    TrainPriorArgs tp;
    auto* c_tp = app.add_subcommand("train-prior", "train the toy denoiser on oracle class renders");
    c_tp->add_option("--model", tp.model, "output weights");
    c_tp->add_option("--vocab", tp.vocab, "output class embeddings");
    c_tp->add_option("--per-class", tp.per_class, "renders per class");
    c_tp->add_option("--size", tp.size, "image side");
    c_tp->add_option("--hidden", tp.hidden, "hidden width");
    c_tp->add_option("--steps", tp.steps, "training steps");
    c_tp->add_option("--seed", tp.seed, "seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << app.help();
        return 1;
    }

    try {
        if (*c_ms) return cmd_make_scene(ms);
        if (*c_sy) return cmd_synth(sy);
        if (*c_re) return cmd_render(re);
        if (*c_iv) return cmd_invert(iv);
        if (*c_ev) return cmd_eval(ev);
        if (*c_tp) return cmd_train_prior(tp);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
