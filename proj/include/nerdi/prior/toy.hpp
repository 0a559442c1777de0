#pragma once

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "nerdi/autodiff.hpp"
#include "nerdi/container.hpp"
#include "nerdi/prior/denoiser.hpp"
#include "nerdi/trainer/adam.hpp"

namespace nerdi::prior {

struct ToyConfig {
    std::size_t height = 32, width = 32, channels = 3;
    std::size_t hidden = 256;
    std::size_t time_features = 16;
    std::size_t embed_dim = 16;

    std::size_t pixels() const { return height * width * channels; }
    std::size_t input_dim() const { return pixels() + time_features + embed_dim; }
};

/// Perceptron denoiser on flattened images. Input is [z_t, time features, pooled cond];
/// the conditioning rows are averaged so any number of guidance rows fits.
template <class T>
class ToyDenoiser final : public Denoiser<T> {
public:
    ToyDenoiser(ToyConfig cfg, NoiseSchedule sched, std::vector<ad::Tensor<T>> weights)
        : cfg_(cfg), sched_(std::move(sched)), weights_(std::move(weights)) {
        const auto expect = shapes(cfg_);
        if (weights_.size() != expect.size()) throw ShapeError("toy denoiser: wrong number of weight tensors");
        for (std::size_t i = 0; i < expect.size(); ++i) {
            if (weights_[i].shape() != expect[i]) throw ShapeError("toy denoiser: weight shape mismatch");
        }
    }

    static std::vector<ad::Shape> shapes(const ToyConfig& c) {
        return {{c.input_dim(), c.hidden}, {c.hidden}, {c.hidden, c.hidden}, {c.hidden}, {c.hidden, c.pixels()}, {c.pixels()}};
    }

    /// He-uniform hidden layers; zero output layer, so an untrained model predicts 0.
    static ToyDenoiser init(const ToyConfig& c, NoiseSchedule sched, std::uint64_t seed) {
        Rng rng(derive_seed(seed, 0x746f79ULL));
        std::vector<ad::Tensor<T>> w;
        for (const auto& s : shapes(c)) w.emplace_back(s);
        for (int layer : {0, 2}) {
            const double bound = std::sqrt(6.0 / double(w[layer].dim(0)));
            for (auto& v : w[layer].data()) v = T(rng.uniform(-bound, bound));
        }
        return ToyDenoiser(c, std::move(sched), std::move(w));
    }

    const ToyConfig& config() const { return cfg_; }
    const NoiseSchedule& schedule() const { return sched_; }
    const std::vector<ad::Tensor<T>>& weights() const { return weights_; }
    std::vector<ad::Tensor<T>>& weights() { return weights_; }

    ad::Tensor<T> time_features(const std::vector<int>& ts) const {
        ad::Tensor<T> f({ts.size(), cfg_.time_features});
        const std::size_t half = cfg_.time_features / 2;
        for (std::size_t b = 0; b < ts.size(); ++b) {
            for (std::size_t k = 0; k < half; ++k) {
                const double freq = std::exp(-std::log(1000.0) * double(k) / double(std::max<std::size_t>(half, 1)));
                f[b * cfg_.time_features + 2 * k] = T(std::sin(ts[b] * freq));
                f[b * cfg_.time_features + 2 * k + 1] = T(std::cos(ts[b] * freq));
            }
        }
        return f;
    }

    /// Batched forward: z [B, pixels], one timestep per row, pooled cond [B, D].
    ad::Var<T> forward(const ad::Var<T>& z, const std::vector<int>& ts, const ad::Var<T>& cond,
                       const std::vector<ad::Var<T>>& w) const {
        const auto x = ad::concat<T>({z, ad::Var<T>::constant(time_features(ts)), cond}, 1);
        auto h = ad::relu(ad::matmul(x, w[0]) + w[1]);
        h = ad::relu(ad::matmul(h, w[2]) + w[3]);
        return ad::matmul(h, w[4]) + w[5];
    }

    std::vector<ad::Var<T>> constants() const {
        std::vector<ad::Var<T>> out;
        for (const auto& t : weights_) out.push_back(ad::Var<T>::constant(t));
        return out;
    }

    ad::Var<T> predict(const ad::Var<T>& z_t, int t, const ad::Var<T>& cond) const override {
        const std::size_t n = cfg_.pixels();
        if (z_t.numel() % n != 0 || z_t.numel() == 0) {
            throw ShapeError("toy denoiser: input " + ad::shape_str(z_t.shape()) + " is not a batch of " +
                             std::to_string(cfg_.height) + "x" + std::to_string(cfg_.width) + "x" +
                             std::to_string(cfg_.channels) + " images");
        }
        if (cond.shape().size() != 2 || cond.shape()[1] != cfg_.embed_dim || cond.shape()[0] == 0) {
            throw ShapeError("toy denoiser: conditioning must be [K, " + std::to_string(cfg_.embed_dim) + "], got " +
                             ad::shape_str(cond.shape()));
        }
        sched_.alpha_bar_at(t);
        const std::size_t batch = z_t.numel() / n;
        const auto pooled = ad::broadcast(ad::reshape(ad::mean(cond, 0), {1, cfg_.embed_dim}), {batch, cfg_.embed_dim});
        const auto out = forward(ad::reshape(z_t, {batch, n}), std::vector<int>(batch, t), pooled, constants());
        return ad::reshape(out, z_t.shape());
    }
    std::string name() const override { return "toy"; }

private:
    ToyConfig cfg_;
    NoiseSchedule sched_;
    std::vector<ad::Tensor<T>> weights_;
};

/// Denoiser plus its learned class vocabulary.
template <class T>
struct ToyPrior {
    ToyDenoiser<T> denoiser;
    ad::Tensor<double> embeddings;  // [classes, D]
    std::vector<std::string> class_names;
    std::vector<double> loss_trace;

    ad::Tensor<double> class_embedding(std::size_t k) const {
        return ad::slice(ad::Var<double>::constant(embeddings), 0, k, k + 1).value();
    }
    ad::Tensor<double> vocabulary_mean() const {
        return ad::mean(ad::Var<double>::constant(embeddings), 0).value().reshaped({1, embeddings.dim(1)});
    }
};

struct ToyTrainConfig {
    long steps = 2000;
    std::size_t batch = 32;
    double lr = 1e-3;
    double label_dropout = 0.1;  // fraction of rows trained with the null (zero) embedding
    double t_lo = 0.02, t_hi = 0.98;
    std::uint64_t seed = 0;
    std::function<void(long, double)> on_step;
};

/// Trains the denoiser and one embedding per class on images [N, H, W, C] with labels.
template <class T>
ToyPrior<T> train_toy_denoiser(const ad::Tensor<double>& images, const std::vector<int>& labels,
                               std::vector<std::string> class_names, const NoiseSchedule& sched, const ToyConfig& cfg,
                               const ToyTrainConfig& tc) {
    if (images.rank() != 4 || images.dim(0) == 0) throw ShapeError("toy training: images must be a non-empty [N, H, W, C]");
    if (images.dim(1) != cfg.height || images.dim(2) != cfg.width || images.dim(3) != cfg.channels) {
        throw ShapeError("toy training: image shape " + ad::shape_str(images.shape()) + " does not match the model");
    }
    if (labels.size() != images.dim(0)) throw ShapeError("toy training: one label per image required");
    const std::size_t classes = class_names.size();
    for (int l : labels) {
        if (l < 0 || std::size_t(l) >= classes) throw std::invalid_argument("toy training: label out of range");
    }
    if (tc.steps < 0) throw std::invalid_argument("toy training: steps must be >= 0");

    auto model = ToyDenoiser<T>::init(cfg, sched, tc.seed);
    Rng init_rng(derive_seed(tc.seed, 0x656d62ULL));
    ad::Tensor<T> table({classes, cfg.embed_dim});
    for (auto& v : table.data()) v = T(init_rng.normal());

    std::vector<ad::Tensor<T>> params = model.weights();
    params.push_back(table);
    trainer::AdamState<T> opt;
    std::vector<double> trace;
    const std::size_t n = cfg.pixels();
    const std::size_t N = images.dim(0);

    for (long step = 0; step < tc.steps; ++step) {
        Rng rng(derive_seed(tc.seed, static_cast<std::uint64_t>(step) + 1));
        ad::Tensor<T> z0({tc.batch, n}), eps({tc.batch, n});
        std::vector<int> ts(tc.batch);
        auto rows = std::make_shared<std::vector<std::size_t>>(tc.batch);
        std::vector<double> ab(tc.batch);
        for (std::size_t b = 0; b < tc.batch; ++b) {
            const auto i = static_cast<std::size_t>(rng.integer(0, long(N) - 1));
            for (std::size_t k = 0; k < n; ++k) z0[b * n + k] = T(images[i * n + k]);
            for (std::size_t k = 0; k < n; ++k) eps[b * n + k] = T(rng.normal());
            ts[b] = sample_timestep(rng, sched, tc.t_lo, tc.t_hi);
            ab[b] = sched.alpha_bar_at(ts[b]);
            (*rows)[b] = rng.uniform() < tc.label_dropout ? classes : std::size_t(labels[i]);
        }
        ad::Tensor<T> sa({tc.batch, 1}), sb({tc.batch, 1});
        for (std::size_t b = 0; b < tc.batch; ++b) {
            sa[b] = T(std::sqrt(ab[b]));
            sb[b] = T(std::sqrt(1.0 - ab[b]));
        }

        ad::Graph<T> g;
        std::vector<ad::Var<T>> vars;
        for (const auto& p : params) vars.push_back(g.leaf(p));
        const auto with_null = ad::concat<T>({vars.back(), ad::Var<T>::constant(ad::Tensor<T>({1, cfg.embed_dim}))}, 0);
        const auto cond = ad::gather(with_null, std::shared_ptr<const std::vector<std::size_t>>(rows));
        const auto noise = ad::Var<T>::constant(eps);
        const auto z_t = ad::Var<T>::constant(z0) * ad::Var<T>::constant(sa) + noise * ad::Var<T>::constant(sb);
        const auto diff = noise - model.forward(z_t, ts, cond, vars);
        const auto loss = ad::mean(diff * diff);
        const double lv = double(loss.value().item());
        if (!std::isfinite(lv)) throw DivergenceError("toy denoiser training diverged (non-finite loss)", step);
        trace.push_back(lv);
        const auto grads = g.backward(loss);
        std::vector<ad::Tensor<T>> gs;
        for (const auto& v : vars) gs.push_back(grads.of(v));
        try {
            trainer::adam_step(params, gs, opt, tc.lr);
        } catch (const DomainError& e) {
            throw DivergenceError(std::string("toy denoiser training diverged: ") + e.what(), step);
        }
        if (tc.on_step) tc.on_step(step, lv);
    }

    ad::Tensor<double> emb = params.back().template cast<double>();
    params.pop_back();
    model.weights() = std::move(params);
    return ToyPrior<T>{std::move(model), std::move(emb), std::move(class_names), std::move(trace)};
}

/// Mean residual ‖eps - eps_hat‖² per image over `draws` (t, eps) samples for each image.
template <class T>
double validation_residual(const Denoiser<T>& d, const ad::Tensor<double>& images,
                           const std::vector<ad::Tensor<double>>& conds, const NoiseSchedule& sched, int draws,
                           std::uint64_t seed) {
    const std::size_t N = images.dim(0);
    const ad::Shape one{images.dim(1), images.dim(2), images.dim(3)};
    const std::size_t n = ad::shape_numel(one);
    IdentityCodec<T> codec;
    double total = 0;
    for (std::size_t i = 0; i < N; ++i) {
        ad::Tensor<T> x(one);
        for (std::size_t k = 0; k < n; ++k) x[k] = T(images[i * n + k]);
        const auto cond = ad::Var<T>::constant(conds[i].template cast<T>());
        for (int r = 0; r < draws; ++r) {
            Rng rng(derive_seed(seed, i * 1000003ULL + static_cast<std::uint64_t>(r)));
            const int t = sample_timestep(rng, sched);
            const auto eps = normal_tensor<T>(one, rng);
            total += double(diffusion_residual(d, codec, ad::Var<T>::constant(x), cond, t, eps, sched).value().item());
        }
    }
    return total / double(N * static_cast<std::size_t>(draws));
}

// ---- persistence: "NRDT" for denoiser weights, "NRDE" for the embedding vocabulary ----

template <class T>
void save_toy_denoiser(const std::string& path, const ToyDenoiser<T>& d) {
    Container c;
    c.magic = "NRDT";
    c.config["dtype"] = sizeof(T) == 4 ? "f32" : "f64";
    const auto& k = d.config();
    c.config["toy.height"] = std::to_string(k.height);
    c.config["toy.width"] = std::to_string(k.width);
    c.config["toy.channels"] = std::to_string(k.channels);
    c.config["toy.hidden"] = std::to_string(k.hidden);
    c.config["toy.time_features"] = std::to_string(k.time_features);
    c.config["toy.embed_dim"] = std::to_string(k.embed_dim);
    std::ostringstream betas;
    betas.precision(17);
    for (std::size_t i = 0; i < d.schedule().beta.size(); ++i) betas << (i ? "," : "") << d.schedule().beta[i];
    c.config["schedule.betas"] = betas.str();
    for (const auto& w : d.weights()) c.add(w);
    save_container(path, c);
}

template <class T>
ToyDenoiser<T> load_toy_denoiser(const std::string& path) {
    const auto c = load_container(path, "NRDT");
    ToyConfig k;
    std::vector<double> betas;
    try {
        k.height = std::stoul(c.get("toy.height"));
        k.width = std::stoul(c.get("toy.width"));
        k.channels = std::stoul(c.get("toy.channels"));
        k.hidden = std::stoul(c.get("toy.hidden"));
        k.time_features = std::stoul(c.get("toy.time_features"));
        k.embed_dim = std::stoul(c.get("toy.embed_dim"));
        std::stringstream ss(c.get("schedule.betas"));
        std::string item;
        while (std::getline(ss, item, ',')) betas.push_back(std::stod(item));
    } catch (const std::logic_error& e) {
        throw FormatError(path + ": malformed denoiser config (" + e.what() + ")");
    }
    std::vector<ad::Tensor<T>> w;
    for (std::size_t i = 0; i < c.shapes.size(); ++i) w.push_back(c.tensor<T>(i));
    return ToyDenoiser<T>(k, schedule_from_betas(std::move(betas)), std::move(w));
}

inline void save_embeddings(const std::string& path, const ad::Tensor<double>& table,
                            const std::vector<std::string>& names, const std::string& dtype = "f64") {
    Container c;
    c.magic = "NRDE";
    c.config["dtype"] = dtype;
    std::string joined;
    for (std::size_t i = 0; i < names.size(); ++i) joined += (i ? "," : "") + names[i];
    c.config["classes"] = joined;
    c.add(table);
    save_container(path, c);
}

inline std::pair<ad::Tensor<double>, std::vector<std::string>> load_embeddings(const std::string& path) {
    const auto c = load_container(path, "NRDE");
    if (c.shapes.size() != 1 || c.shapes[0].size() != 2) throw FormatError(path + ": expected one [K, D] table");
    std::vector<std::string> names;
    if (c.has("classes") && !c.get("classes").empty()) {
        std::stringstream ss(c.get("classes"));
        std::string item;
        while (std::getline(ss, item, ',')) names.push_back(item);
    }
    return {c.tensor<double>(0), names};
}

}  // namespace nerdi::prior
