#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "nerdi/field/field.hpp"
#include "nerdi/objective.hpp"
#include "nerdi/render/volume.hpp"

namespace nerdi::trainer {

struct ViewRange {
    double radius_min = 2.2, radius_max = 2.8;
    double elevation_min = -10.0, elevation_max = 40.0;  // degrees
    double fov = 50.0;                                   // vertical, degrees

    void validate() const {
        if (!(radius_min > 0 && radius_max >= radius_min)) throw std::invalid_argument("view: radius interval is empty");
        if (!(elevation_max >= elevation_min && elevation_min >= -90 && elevation_max <= 90)) {
            throw std::invalid_argument("view: elevation interval must lie in [-90, 90] and be non-empty");
        }
        if (!(fov > 0 && fov < 180)) throw std::invalid_argument("view: fov must be in (0, 180)");
    }
};

struct SynthesisConfig {
    long iterations = 5000;
    double lr = 1e-2, lr_final = 1e-3;  // cosine decay between the two
    std::size_t rays = 4096;            // input-view rays per step
    std::uint64_t seed = 0;
    long checkpoint_every = 0;          // 0 disables periodic checkpoints
    int max_prior_failures = 3;         // consecutive skipped steps before aborting
    bool component_norms = false;       // log per-loss gradient norms (one backward pass each)

    ViewRange view;
    int render_size = 32;  // novel-view render, pixels per side
    int prior_size = 32;   // image size the prior sees

    objective::LossWeights weights;
    objective::GradMode mode = objective::GradMode::distilled;
    objective::Weighting weighting = objective::Weighting::one_minus_alpha_bar;
    double t_lo = 0.02, t_hi = 0.98;

    std::string prior_backend = "analytic";  // analytic | toy | remote
    double prior_sigma0 = 0.1;
    std::string prior_model;  // toy denoiser weights (NRDT)
    std::string prior_vocab;  // toy class embeddings (NRDE)

    render::RenderConfig render{64, true, render::Background::white, render::DepthMode::expected, 0};
    field::FieldConfig field;

    void validate() const {
        if (iterations < 1) throw std::invalid_argument("train.iterations must be >= 1");
        if (!(lr > 0 && lr_final > 0 && std::isfinite(lr) && std::isfinite(lr_final))) {
            throw std::invalid_argument("train.lr and train.lr_final must be positive");
        }
        if (rays < 2) throw std::invalid_argument("train.rays must be >= 2");
        if (checkpoint_every < 0) throw std::invalid_argument("train.checkpoint_every must be >= 0");
        if (max_prior_failures < 0) throw std::invalid_argument("train.max_prior_failures must be >= 0");
        view.validate();
        if (render_size < 2 || prior_size < 2) throw std::invalid_argument("view.render_size and view.prior_size must be >= 2");
        weights.validate();
        if (!(0 <= t_lo && t_lo <= t_hi && t_hi <= 1)) throw std::invalid_argument("loss.t_lo/t_hi must satisfy 0 <= lo <= hi <= 1");
        if (prior_backend != "analytic" && prior_backend != "toy" && prior_backend != "remote") {
            throw std::invalid_argument("prior.backend must be analytic, toy or remote");
        }
        if (!(prior_sigma0 >= 0)) throw std::invalid_argument("prior.sigma0 must be >= 0");
        render.validate();
        field.validate();
    }

    /// Cosine decay from lr at step 0 to lr_final at the last step.
    double lr_at(long step) const {
        if (iterations <= 1) return lr;
        const double u = std::clamp(double(step) / double(iterations - 1), 0.0, 1.0);
        return lr_final + 0.5 * (lr - lr_final) * (1.0 + std::cos(M_PI * u));
    }
};

// ---- key registry: every config key with its reader and writer ----

struct ConfigKey {
    std::string name;  // section.key
    std::string help;
    std::function<std::string(const SynthesisConfig&)> get;
    std::function<void(SynthesisConfig&, const std::string&)> set;
};

namespace detail {

// shortest text that parses back to the same double
inline std::string fmt(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

template <class V>
V parse_num(const std::string& key, const std::string& s) {
    std::istringstream is(s);
    V v{};
    is >> v;
    std::string rest;
    if (is.fail() || (is >> rest)) throw std::invalid_argument("config: " + key + " = '" + s + "' is not a number");
    return v;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
    if (s == "true" || s == "1" || s == "on" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "off" || s == "no") return false;
    throw std::invalid_argument("config: " + key + " = '" + s + "' is not a boolean");
}

template <class V>
ConfigKey num_key(std::string name, std::string help, V SynthesisConfig::*member) {
    auto n = name;
    return {std::move(name), std::move(help),
            [member](const SynthesisConfig& c) {
                if constexpr (std::is_same_v<V, std::string>) {
                    return c.*member;
                } else if constexpr (std::is_floating_point_v<V>) {
                    return fmt(c.*member);
                } else {
                    return std::to_string(c.*member);
                }
            },
            [member, n](SynthesisConfig& c, const std::string& s) {
                if constexpr (std::is_same_v<V, std::string>) {
                    c.*member = s;
                } else {
                    c.*member = parse_num<V>(n, s);
                }
            }};
}

template <class Fn>
ConfigKey double_key(std::string name, std::string help, Fn ref) {
    auto n = name;
    return {std::move(name), std::move(help), [ref](const SynthesisConfig& c) { return fmt(ref(const_cast<SynthesisConfig&>(c))); },
            [ref, n](SynthesisConfig& c, const std::string& s) { ref(c) = parse_num<double>(n, s); }};
}

template <class Fn>
ConfigKey int_key(std::string name, std::string help, Fn ref) {
    auto n = name;
    return {std::move(name), std::move(help),
            [ref](const SynthesisConfig& c) { return std::to_string(ref(const_cast<SynthesisConfig&>(c))); },
            [ref, n](SynthesisConfig& c, const std::string& s) {
                ref(c) = static_cast<std::remove_reference_t<decltype(ref(c))>>(parse_num<long long>(n, s));
            }};
}

}  // namespace detail

inline const std::vector<ConfigKey>& config_keys() {
    using detail::double_key;
    using detail::int_key;
    using detail::num_key;
    using C = SynthesisConfig;
    static const std::vector<ConfigKey> keys = {
        num_key("train.iterations", "optimization steps", &C::iterations),
        num_key("train.lr", "initial learning rate", &C::lr),
        num_key("train.lr_final", "learning rate at the last step (cosine decay)", &C::lr_final),
        num_key("train.rays", "input-view rays per step", &C::rays),
        num_key("train.seed", "rng seed", &C::seed),
        num_key("train.checkpoint_every", "steps between checkpoints (0 = only at the end)", &C::checkpoint_every),
        num_key("train.max_prior_failures", "consecutive prior failures skipped before aborting", &C::max_prior_failures),
        {"train.component_norms", "log per-loss gradient norms",
         [](const C& c) { return std::string(c.component_norms ? "true" : "false"); },
         [](C& c, const std::string& s) { c.component_norms = detail::parse_bool("train.component_norms", s); }},

        double_key("view.radius_min", "camera distance lower bound", [](C& c) -> double& { return c.view.radius_min; }),
        double_key("view.radius_max", "camera distance upper bound", [](C& c) -> double& { return c.view.radius_max; }),
        double_key("view.elevation_min", "elevation lower bound, degrees", [](C& c) -> double& { return c.view.elevation_min; }),
        double_key("view.elevation_max", "elevation upper bound, degrees", [](C& c) -> double& { return c.view.elevation_max; }),
        double_key("view.fov", "vertical field of view, degrees", [](C& c) -> double& { return c.view.fov; }),
        num_key("view.render_size", "novel-view render size in pixels", &C::render_size),
        num_key("view.prior_size", "image size fed to the prior", &C::prior_size),

        double_key("loss.rec", "reconstruction weight", [](C& c) -> double& { return c.weights.rec; }),
        double_key("loss.diff", "diffusion weight", [](C& c) -> double& { return c.weights.diff; }),
        double_key("loss.depth", "depth correlation weight", [](C& c) -> double& { return c.weights.depth; }),
        {"loss.mode", "distilled | full",
         [](const C& c) { return objective::to_string(c.mode); },
         [](C& c, const std::string& s) { c.mode = objective::parse_grad_mode(s); }},
        {"loss.weighting", "one_minus_alpha_bar | constant",
         [](const C& c) { return objective::to_string(c.weighting); },
         [](C& c, const std::string& s) { c.weighting = objective::parse_weighting(s); }},
        num_key("loss.t_lo", "lowest timestep fraction", &C::t_lo),
        num_key("loss.t_hi", "highest timestep fraction", &C::t_hi),

        num_key("prior.backend", "analytic | toy | remote", &C::prior_backend),
        num_key("prior.sigma0", "analytic prior spread around its mean", &C::prior_sigma0),
        num_key("prior.model", "toy denoiser weights file", &C::prior_model),
        num_key("prior.vocab", "toy class embedding file", &C::prior_vocab),

        int_key("render.samples", "samples per ray", [](C& c) -> int& { return c.render.samples_per_ray; }),
        {"render.jitter", "stratified sample jitter",
         [](const C& c) { return std::string(c.render.stratified_jitter ? "true" : "false"); },
         [](C& c, const std::string& s) { c.render.stratified_jitter = detail::parse_bool("render.jitter", s); }},
        {"render.background", "white | black",
         [](const C& c) { return std::string(c.render.background == render::Background::white ? "white" : "black"); },
         [](C& c, const std::string& s) {
             if (s == "white") c.render.background = render::Background::white;
             else if (s == "black") c.render.background = render::Background::black;
             else throw std::invalid_argument("config: render.background must be white or black");
         }},
        {"render.depth_mode", "expected | optical",
         [](const C& c) { return std::string(c.render.depth_mode == render::DepthMode::optical ? "optical" : "expected"); },
         [](C& c, const std::string& s) {
             if (s == "expected") c.render.depth_mode = render::DepthMode::expected;
             else if (s == "optical") c.render.depth_mode = render::DepthMode::optical;
             else throw std::invalid_argument("config: render.depth_mode must be expected or optical");
         }},

        int_key("field.levels", "hash grid levels", [](C& c) -> int& { return c.field.grid.levels; }),
        int_key("field.base_resolution", "coarsest grid resolution", [](C& c) -> int& { return c.field.grid.base_resolution; }),
        double_key("field.per_level_scale", "resolution growth per level", [](C& c) -> double& { return c.field.grid.per_level_scale; }),
        int_key("field.table_size_log2", "log2 rows per hash table", [](C& c) -> int& { return c.field.grid.table_size_log2; }),
        int_key("field.features_per_level", "features per table row", [](C& c) -> int& { return c.field.grid.features_per_level; }),
        int_key("field.hidden_width", "MLP width", [](C& c) -> int& { return c.field.mlp.hidden_width; }),
        int_key("field.hidden_layers", "MLP hidden layers", [](C& c) -> int& { return c.field.mlp.hidden_layers; }),
        double_key("field.density_bias", "density logit offset", [](C& c) -> double& { return c.field.mlp.density_bias; }),
    };
    return keys;
}

inline const ConfigKey& find_key(const std::string& name) {
    for (const auto& k : config_keys()) {
        if (k.name == name) return k;
    }
    throw std::invalid_argument("config: unknown key '" + name + "'");
}

/// Applies one "section.key=value" override.
inline void apply_override(SynthesisConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config override '" + assignment + "' is not key=value");
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t");
        const auto e = s.find_last_not_of(" \t");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    find_key(trim(assignment.substr(0, eq))).set(cfg, trim(assignment.substr(eq + 1)));
}

/// Reads INI text; unknown sections or keys are errors.
inline SynthesisConfig parse_config(const std::string& text, SynthesisConfig base = {}) {
    boost::property_tree::ptree tree;
    std::istringstream is(text);
    try {
        boost::property_tree::read_ini(is, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw std::invalid_argument(std::string("config: ") + e.what());
    }
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty()) {
            throw std::invalid_argument("config: key '" + section + "' outside any section");
        }
        for (const auto& [key, value] : body) find_key(section + "." + key).set(base, value.data());
    }
    return base;
}

inline SynthesisConfig load_config(const std::string& path, SynthesisConfig base = {}) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str(), std::move(base));
}

/// The full config as INI text; parse_config(to_ini(c)) reproduces c.
inline std::string to_ini(const SynthesisConfig& cfg) {
    std::ostringstream os;
    std::string section;
    for (const auto& k : config_keys()) {
        const auto dot = k.name.find('.');
        const auto sec = k.name.substr(0, dot);
        if (sec != section) {
            if (!section.empty()) os << "\n";
            os << "[" << sec << "]\n";
            section = sec;
        }
        os << k.name.substr(dot + 1) << " = " << k.get(cfg) << "\n";
    }
    return os.str();
}

/// 64-bit FNV-1a of a string, printed as 16 hex digits.
inline std::string fnv_hex(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << h;
    return os.str();
}

inline std::string config_hash(const SynthesisConfig& cfg) { return fnv_hex(to_ini(cfg)); }

}  // namespace nerdi::trainer
