#pragma once

#include <string>

#include "nerdi/container.hpp"
#include "nerdi/field/field.hpp"
#include "nerdi/trainer/adam.hpp"

namespace nerdi::trainer {

template <class T>
struct TrainState {
    field::FieldParams<T> params;
    AdamState<T> adam;
    long step = 0;  // completed optimization steps
};

/// NRDF container: the field tensors, then Adam first moments, then second moments.
/// A checkpoint without optimizer state loads with an empty AdamState.
template <class T>
Container checkpoint_container(const TrainState<T>& s) {
    Container c = field::field_container(s.params);
    c.config["train.step"] = std::to_string(s.step);
    c.config["adam.step"] = std::to_string(s.adam.step);
    c.config["adam.tensors"] = std::to_string(s.adam.m.size());
    for (const auto& m : s.adam.m) c.add(m);
    for (const auto& v : s.adam.v) c.add(v);
    return c;
}

template <class T>
TrainState<T> state_from_container(const Container& c) {
    if (c.has("dtype") && c.get("dtype") != field::dtype_name<T>()) {
        throw FormatError("checkpoint: stored as " + c.get("dtype") + ", requested " + field::dtype_name<T>());
    }
    TrainState<T> s;
    s.params = field::field_from_container<T>(c);
    const std::size_t n = s.params.tensors.size();
    auto num = [&](const char* key) -> long {
        if (!c.has(key)) return 0;
        try {
            return std::stol(c.get(key));
        } catch (const std::logic_error&) {
            throw FormatError(std::string("checkpoint: malformed ") + key);
        }
    };
    s.step = num("train.step");
    s.adam.step = num("adam.step");
    const long k = num("adam.tensors");
    if (k != 0 && std::size_t(k) != n) throw FormatError("checkpoint: optimizer state does not match the field");
    if (c.shapes.size() != n + 2 * std::size_t(k)) throw FormatError("checkpoint: unexpected tensor count");
    for (long i = 0; i < k; ++i) {
        s.adam.m.push_back(c.tensor<T>(n + std::size_t(i)));
        s.adam.v.push_back(c.tensor<T>(n + std::size_t(k + i)));
        if (s.adam.m.back().shape() != s.params.tensors[i].shape() ||
            s.adam.v.back().shape() != s.params.tensors[i].shape()) {
            throw FormatError("checkpoint: optimizer moment " + std::to_string(i) + " does not match its parameter");
        }
    }
    return s;
}

template <class T>
void save_checkpoint(const std::string& path, const TrainState<T>& s) {
    save_container(path, checkpoint_container(s));
}

template <class T>
TrainState<T> load_checkpoint(const std::string& path) {
    return state_from_container<T>(load_container(path, "NRDF"));
}

}  // namespace nerdi::trainer
