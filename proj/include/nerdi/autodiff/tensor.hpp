#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "nerdi/error.hpp"

namespace nerdi::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

/// Dense row-major array of scalars. Value type; copies are deep.
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0))
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_numel(shape_)) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
        }
    }

    static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T item() const {
        if (data_.size() != 1) {
            throw ShapeError("item() on tensor of shape " + shape_str(shape_));
        }
        return data_[0];
    }

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool on) { requires_grad_ = on; }

    /// Same data, new shape of equal element count.
    Tensor reshaped(Shape shape) const {
        if (shape_numel(shape) != numel()) {
            throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        }
        Tensor out(std::move(shape), data_);
        out.requires_grad_ = requires_grad_;
        return out;
    }

    template <class U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        Tensor<U> t(shape_, std::move(out));
        t.set_requires_grad(requires_grad_);
        return t;
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<T> data_;
    bool requires_grad_ = false;
};

namespace detail {

/// Numpy-style broadcast of two shapes, aligned at the trailing dimension.
inline Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
    const std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1) {
            throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                             " are not broadcast-compatible");
        }
        out[i] = da == 1 ? db : da;
    }
    return out;
}

/// Element strides of `in` when read through broadcast shape `out` (0 on broadcast axes).
inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
    std::vector<std::size_t> strides(out.size(), 0);
    std::size_t stride = 1;
    for (std::size_t k = 0; k < in.size(); ++k) {
        const std::size_t i = in.size() - 1 - k;
        const std::size_t o = out.size() - 1 - k;
        strides[o] = in[i] == 1 ? 0 : stride;
        stride *= in[i];
    }
    return strides;
}

/// Iteration plan over a broadcast output with adjacent compatible axes merged.
struct BroadcastPlan {
    std::vector<std::size_t> extent;
    std::vector<std::vector<std::size_t>> strides;  // per operand
};

inline BroadcastPlan make_plan(const Shape& out, const std::vector<Shape>& inputs) {
    BroadcastPlan plan;
    std::vector<std::vector<std::size_t>> raw;
    for (const auto& in : inputs) raw.push_back(broadcast_strides(in, out));
    for (std::size_t d = 0; d < out.size(); ++d) {
        if (out[d] == 1) continue;
        bool merge = !plan.extent.empty();
        if (merge) {
            for (std::size_t k = 0; k < raw.size(); ++k) {
                const std::size_t prev = plan.strides[k].back();
                const std::size_t cur = raw[k][d];
                if (!((prev == 0 && cur == 0) || (prev != 0 && cur != 0 && prev == cur * out[d]))) {
                    merge = false;
                    break;
                }
            }
        }
        if (merge) {
            plan.extent.back() *= out[d];
            for (std::size_t k = 0; k < raw.size(); ++k) plan.strides[k].back() = raw[k][d];
        } else {
            plan.extent.push_back(out[d]);
            if (plan.strides.empty()) plan.strides.resize(raw.size());
            for (std::size_t k = 0; k < raw.size(); ++k) plan.strides[k].push_back(raw[k][d]);
        }
    }
    if (plan.extent.empty()) {
        plan.extent.push_back(1);
        plan.strides.assign(raw.size(), std::vector<std::size_t>{0});
    }
    return plan;
}

/// Calls fn(out_index, offsets...) for every output element in row-major order.
template <std::size_t N, class Fn>
void for_each_broadcast(const BroadcastPlan& plan, Fn&& fn) {
    const std::size_t rank = plan.extent.size();
    const std::size_t inner = plan.extent.back();
    std::array<std::size_t, N> inner_stride{};
    for (std::size_t k = 0; k < N; ++k) inner_stride[k] = plan.strides[k].back();

    std::vector<std::size_t> counter(rank, 0);
    std::array<std::size_t, N> base{};
    std::size_t outer = 1;
    for (std::size_t d = 0; d + 1 < rank; ++d) outer *= plan.extent[d];

    std::size_t out_index = 0;
    for (std::size_t o = 0; o < outer; ++o) {
        std::array<std::size_t, N> off = base;
        for (std::size_t i = 0; i < inner; ++i) {
            fn(out_index++, off);
            for (std::size_t k = 0; k < N; ++k) off[k] += inner_stride[k];
        }
        for (std::size_t d = rank - 1; d-- > 0;) {
            ++counter[d];
            for (std::size_t k = 0; k < N; ++k) base[k] += plan.strides[k][d];
            if (counter[d] < plan.extent[d]) break;
            for (std::size_t k = 0; k < N; ++k) base[k] -= plan.strides[k][d] * counter[d];
            counter[d] = 0;
        }
    }
}

/// Sum `grad` (of broadcast shape) down to `target` shape.
template <class T>
Tensor<T> reduce_to_shape(const Tensor<T>& grad, const Shape& target) {
    if (grad.shape() == target) return grad;
    Tensor<T> out(target);
    const auto plan = make_plan(grad.shape(), {grad.shape(), target});
    auto src = grad.data();
    auto dst = out.data();
    for_each_broadcast<2>(plan, [&](std::size_t, const std::array<std::size_t, 2>& off) {
        dst[off[1]] += src[off[0]];
    });
    return out;
}

/// Materialize `in` broadcast to `shape`.
template <class T>
Tensor<T> expand(const Tensor<T>& in, const Shape& shape) {
    if (in.shape() == shape) return in;
    const Shape check = broadcast_shapes(in.shape(), shape, "broadcast");
    if (check != shape) {
        throw ShapeError("broadcast: cannot expand " + shape_str(in.shape()) + " to " + shape_str(shape));
    }
    Tensor<T> out(shape);
    const auto plan = make_plan(shape, {shape, in.shape()});
    auto src = in.data();
    auto dst = out.data();
    for_each_broadcast<2>(plan, [&](std::size_t, const std::array<std::size_t, 2>& off) {
        dst[off[0]] = src[off[1]];
    });
    return out;
}

}  // namespace detail
}  // namespace nerdi::ad
