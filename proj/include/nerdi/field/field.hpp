#pragma once

#include <array>
#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "nerdi/autodiff.hpp"
#include "nerdi/container.hpp"
#include "nerdi/field/hash_grid.hpp"
#include "nerdi/rng.hpp"

namespace nerdi::field {

struct MlpConfig {
    int hidden_width = 64;
    int hidden_layers = 2;
    double density_bias = -1.0;  // added to the density logit before softplus
};

struct FieldConfig {
    HashGridConfig grid;
    MlpConfig mlp;

    void validate() const {
        grid.validate();
        if (mlp.hidden_width < 1 || mlp.hidden_layers < 0) throw std::invalid_argument("field: invalid MLP size");
        if (!std::isfinite(mlp.density_bias)) throw std::invalid_argument("field: density_bias not finite");
    }

    std::size_t layer_count() const { return static_cast<std::size_t>(mlp.hidden_layers) + 1; }
    std::size_t layer_in(std::size_t k) const { return k == 0 ? grid.feature_dim() : std::size_t(mlp.hidden_width); }
    std::size_t layer_out(std::size_t k) const { return k + 1 == layer_count() ? 4 : std::size_t(mlp.hidden_width); }
};

/// Grid tables followed by (weight, bias) per dense layer, in that fixed order.
template <class T>
struct FieldParams {
    FieldConfig config;
    std::vector<ad::Tensor<T>> tensors;

    std::size_t levels() const { return static_cast<std::size_t>(config.grid.levels); }
    const ad::Tensor<T>& table(std::size_t l) const { return tensors.at(l); }
    const ad::Tensor<T>& weight(std::size_t k) const { return tensors.at(levels() + 2 * k); }
    const ad::Tensor<T>& bias(std::size_t k) const { return tensors.at(levels() + 2 * k + 1); }

    std::size_t numel() const {
        std::size_t n = 0;
        for (const auto& t : tensors) n += t.numel();
        return n;
    }
    bool all_finite() const {
        for (const auto& t : tensors) {
            if (!t.all_finite()) return false;
        }
        return true;
    }

    static std::vector<ad::Shape> shapes(const FieldConfig& cfg) {
        std::vector<ad::Shape> out;
        for (int l = 0; l < cfg.grid.levels; ++l) {
            out.push_back({cfg.grid.table_size(), static_cast<std::size_t>(cfg.grid.features_per_level)});
        }
        for (std::size_t k = 0; k < cfg.layer_count(); ++k) {
            out.push_back({cfg.layer_in(k), cfg.layer_out(k)});
            out.push_back({cfg.layer_out(k)});
        }
        return out;
    }

    static FieldParams zeros(const FieldConfig& cfg) {
        cfg.validate();
        FieldParams p;
        p.config = cfg;
        for (auto& s : shapes(cfg)) p.tensors.emplace_back(s);
        return p;
    }

    /// Tables uniform in +-1e-4, weights uniform with He scaling, biases zero.
    static FieldParams init(const FieldConfig& cfg, std::uint64_t seed) {
        FieldParams p = zeros(cfg);
        Rng rng(derive_seed(seed, 0x6669656c64ULL));
        for (std::size_t l = 0; l < p.levels(); ++l) {
            for (auto& v : p.tensors[l].data()) v = T(rng.uniform(-1e-4, 1e-4));
        }
        for (std::size_t k = 0; k < cfg.layer_count(); ++k) {
            const double bound = std::sqrt(6.0 / static_cast<double>(cfg.layer_in(k)));
            for (auto& v : p.tensors[p.levels() + 2 * k].data()) v = T(rng.uniform(-bound, bound));
        }
        return p;
    }
};

/// Params as graph leaves (trainable) or as free constants.
template <class T>
std::vector<ad::Var<T>> bind(ad::Graph<T>& graph, const FieldParams<T>& p) {
    std::vector<ad::Var<T>> vars;
    for (const auto& t : p.tensors) vars.push_back(graph.leaf(t));
    return vars;
}

template <class T>
std::vector<ad::Var<T>> constants(const FieldParams<T>& p) {
    std::vector<ad::Var<T>> vars;
    for (const auto& t : p.tensors) vars.push_back(ad::Var<T>::constant(t));
    return vars;
}

template <class T>
struct FieldEval {
    ad::Var<T> rgb;    // [P, 3] in [0, 1]
    ad::Var<T> sigma;  // [P] >= 0
};

/// Radiance field at points [P, 3]; no view direction by construction.
template <class T>
FieldEval<T> eval(const ad::Var<T>& points, const std::vector<ad::Var<T>>& params, const FieldConfig& cfg) {
    const std::size_t levels = static_cast<std::size_t>(cfg.grid.levels);
    if (params.size() != levels + 2 * cfg.layer_count()) {
        throw ShapeError("field eval: wrong number of parameter tensors");
    }
    for (const auto& v : params) {
        if (!v.value().all_finite()) throw DomainError("field eval: non-finite parameters");
    }
    std::vector<ad::Var<T>> tables(params.begin(), params.begin() + static_cast<long>(levels));
    ad::Var<T> h = encode(points, tables, cfg.grid);
    for (std::size_t k = 0; k < cfg.layer_count(); ++k) {
        h = ad::matmul(h, params[levels + 2 * k]) + params[levels + 2 * k + 1];
        if (k + 1 < cfg.layer_count()) h = ad::relu(h);
    }
    const std::size_t np = points.shape()[0];
    FieldEval<T> out;
    out.rgb = ad::sigmoid(ad::slice(h, 1, 0, 3));
    out.sigma = ad::reshape(ad::softplus(ad::slice(h, 1, 3, 4) + T(cfg.mlp.density_bias)), {np});
    return out;
}

template <class T>
struct FieldOutput {
    std::array<T, 3> rgb;
    T sigma;
};

/// Single-point convenience evaluation outside any graph.
template <class T>
FieldOutput<T> eval_point(const FieldParams<T>& p, const std::array<T, 3>& x) {
    const auto pts = ad::Var<T>::constant(ad::Tensor<T>({1, 3}, {x[0], x[1], x[2]}));
    const auto e = eval(pts, constants(p), p.config);
    return {{e.rgb.value()[0], e.rgb.value()[1], e.rgb.value()[2]}, e.sigma.value()[0]};
}

// ---- configuration as key=value text, shared by checkpoints and config files ----

inline void put_config(std::map<std::string, std::string>& kv, const FieldConfig& c) {
    auto num = [](double v) {
        std::ostringstream os;
        os.precision(17);
        os << v;
        return os.str();
    };
    kv["grid.levels"] = std::to_string(c.grid.levels);
    kv["grid.base_resolution"] = std::to_string(c.grid.base_resolution);
    kv["grid.per_level_scale"] = num(c.grid.per_level_scale);
    kv["grid.table_size_log2"] = std::to_string(c.grid.table_size_log2);
    kv["grid.features_per_level"] = std::to_string(c.grid.features_per_level);
    kv["grid.box_min"] = num(c.grid.box_min);
    kv["grid.box_max"] = num(c.grid.box_max);
    kv["grid.primes"] = std::to_string(c.grid.primes[0]) + "," + std::to_string(c.grid.primes[1]) + "," +
                        std::to_string(c.grid.primes[2]);
    kv["mlp.hidden_width"] = std::to_string(c.mlp.hidden_width);
    kv["mlp.hidden_layers"] = std::to_string(c.mlp.hidden_layers);
    kv["mlp.density_bias"] = num(c.mlp.density_bias);
}

inline FieldConfig get_config(const Container& c) {
    FieldConfig f;
    try {
        f.grid.levels = std::stoi(c.get("grid.levels"));
        f.grid.base_resolution = std::stoi(c.get("grid.base_resolution"));
        f.grid.per_level_scale = std::stod(c.get("grid.per_level_scale"));
        f.grid.table_size_log2 = std::stoi(c.get("grid.table_size_log2"));
        f.grid.features_per_level = std::stoi(c.get("grid.features_per_level"));
        f.grid.box_min = std::stod(c.get("grid.box_min"));
        f.grid.box_max = std::stod(c.get("grid.box_max"));
        std::istringstream primes(c.get("grid.primes"));
        char comma;
        primes >> f.grid.primes[0] >> comma >> f.grid.primes[1] >> comma >> f.grid.primes[2];
        f.mlp.hidden_width = std::stoi(c.get("mlp.hidden_width"));
        f.mlp.hidden_layers = std::stoi(c.get("mlp.hidden_layers"));
        f.mlp.density_bias = std::stod(c.get("mlp.density_bias"));
    } catch (const std::logic_error& e) {
        throw FormatError(std::string("field checkpoint: malformed config value (") + e.what() + ")");
    }
    f.validate();
    return f;
}

template <class T>
constexpr const char* dtype_name() {
    return sizeof(T) == 4 ? "f32" : "f64";
}

/// Field params as an "NRDF" container; callers may append further tensors/keys.
template <class T>
Container field_container(const FieldParams<T>& p) {
    Container c;
    c.magic = "NRDF";
    c.config["dtype"] = dtype_name<T>();
    c.config["field.tensors"] = std::to_string(p.tensors.size());
    put_config(c.config, p.config);
    for (const auto& t : p.tensors) c.add(t);
    return c;
}

template <class T>
FieldParams<T> field_from_container(const Container& c) {
    FieldParams<T> p;
    p.config = get_config(c);
    const auto expect = FieldParams<T>::shapes(p.config);
    if (c.shapes.size() < expect.size()) throw FormatError("field checkpoint: missing tensors");
    for (std::size_t i = 0; i < expect.size(); ++i) {
        if (c.shapes[i] != expect[i]) {
            throw FormatError("field checkpoint: tensor " + std::to_string(i) + " has shape " +
                              ad::shape_str(c.shapes[i]) + ", config implies " + ad::shape_str(expect[i]));
        }
        p.tensors.push_back(c.tensor<T>(i));
    }
    return p;
}

template <class T>
void save_field(const std::string& path, const FieldParams<T>& p) {
    save_container(path, field_container(p));
}

template <class T>
FieldParams<T> load_field(const std::string& path) {
    return field_from_container<T>(load_container(path, "NRDF"));
}

}  // namespace nerdi::field
