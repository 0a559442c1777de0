#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "nerdi/autodiff/graph.hpp"
#include "nerdi/autodiff/parallel.hpp"

namespace nerdi::ad {

namespace detail {

template <class T>
using Grads = std::vector<std::optional<Tensor<T>>>;

template <class T, class F>
Tensor<T> binary_forward(const Tensor<T>& a, const Tensor<T>& b, const Shape& out_shape, F&& f) {
    Tensor<T> out(out_shape);
    auto pa = a.data();
    auto pb = b.data();
    auto po = out.data();
    if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < po.size(); ++i) po[i] = f(pa[i], pb[i]);
        return out;
    }
    const auto plan = make_plan(out_shape, {a.shape(), b.shape()});
    for_each_broadcast<2>(plan, [&](std::size_t o, const std::array<std::size_t, 2>& off) {
        po[o] = f(pa[off[0]], pb[off[1]]);
    });
    return out;
}

/// Accumulates da(a, b, g) into the a-gradient and db(a, b, g) into the b-gradient,
/// reducing over broadcast axes.
template <class T, class DA, class DB>
Grads<T> binary_backward(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& g,
                         const std::vector<bool>& needed, DA&& da, DB&& db) {
    Grads<T> grads(2);
    if (needed[0]) grads[0] = Tensor<T>(a.shape());
    if (needed[1]) grads[1] = Tensor<T>(b.shape());
    auto pa = a.data();
    auto pb = b.data();
    auto pg = g.data();
    T* ga = needed[0] ? grads[0]->data().data() : nullptr;
    T* gb = needed[1] ? grads[1]->data().data() : nullptr;
    if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < pg.size(); ++i) {
            if (ga) ga[i] += da(pa[i], pb[i], pg[i]);
            if (gb) gb[i] += db(pa[i], pb[i], pg[i]);
        }
        return grads;
    }
    const auto plan = make_plan(g.shape(), {a.shape(), b.shape()});
    for_each_broadcast<2>(plan, [&](std::size_t o, const std::array<std::size_t, 2>& off) {
        if (ga) ga[off[0]] += da(pa[off[0]], pb[off[1]], pg[o]);
        if (gb) gb[off[1]] += db(pa[off[0]], pb[off[1]], pg[o]);
    });
    return grads;
}

template <class T, class F, class DF>
Var<T> unary(OpKind op, const Var<T>& x, F f, DF df) {
    return Graph<T>::apply(
        op, {x},
        [f](const auto& in) {
            Tensor<T> out(in[0]->shape());
            auto src = in[0]->data();
            auto dst = out.data();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = f(src[i]);
            return out;
        },
        [df](const auto& in, const Tensor<T>& out, const Tensor<T>& g, const std::vector<bool>&) {
            Grads<T> grads(1);
            grads[0] = Tensor<T>(in[0]->shape());
            auto x = in[0]->data();
            auto y = out.data();
            auto pg = g.data();
            auto dst = grads[0]->data();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = pg[i] * df(x[i], y[i]);
            return grads;
        });
}

/// (outer, length, inner) factorization of a shape around `axis`.
inline std::array<std::size_t, 3> split_axis(const Shape& shape, std::size_t axis) {
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= shape[d];
    for (std::size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];
    return {outer, shape[axis], inner};
}

inline std::size_t normalize_axis(long axis, std::size_t rank, const char* op) {
    const long r = static_cast<long>(rank);
    if (axis < -r || axis >= r) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
    }
    return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

template <class T>
T stable_sigmoid(T x) {
    if (x >= 0) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <class T>
T stable_softplus(T x) {
    return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops with broadcasting

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    const Shape out = detail::broadcast_shapes(a.shape(), b.shape(), "add");
    return Graph<T>::apply(
        OpKind::add, {a, b},
        [out](const auto& in) { return detail::binary_forward(*in[0], *in[1], out, [](T x, T y) { return x + y; }); },
        [](const auto& in, const Tensor<T>&, const Tensor<T>& g, const std::vector<bool>& needed) {
            return detail::binary_backward(
                *in[0], *in[1], g, needed, [](T, T, T gv) { return gv; }, [](T, T, T gv) { return gv; });
        });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    const Shape out = detail::broadcast_shapes(a.shape(), b.shape(), "sub");
    return Graph<T>::apply(
        OpKind::sub, {a, b},
        [out](const auto& in) { return detail::binary_forward(*in[0], *in[1], out, [](T x, T y) { return x - y; }); },
        [](const auto& in, const Tensor<T>&, const Tensor<T>& g, const std::vector<bool>& needed) {
            return detail::binary_backward(
                *in[0], *in[1], g, needed, [](T, T, T gv) { return gv; }, [](T, T, T gv) { return -gv; });
        });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    const Shape out = detail::broadcast_shapes(a.shape(), b.shape(), "mul");
    return Graph<T>::apply(
        OpKind::mul, {a, b},
        [out](const auto& in) { return detail::binary_forward(*in[0], *in[1], out, [](T x, T y) { return x * y; }); },
        [](const auto& in, const Tensor<T>&, const Tensor<T>& g, const std::vector<bool>& needed) {
            return detail::binary_backward(
                *in[0], *in[1], g, needed, [](T, T y, T gv) { return gv * y; }, [](T x, T, T gv) { return gv * x; });
        });
}

/// a / b. With `guard` > 0 the denominator is clamped to max(b, guard) and the
/// gradient w.r.t. b vanishes where clamped; without it a zero denominator throws.
template <class T>
Var<T> div(const Var<T>& a, const Var<T>& b, std::type_identity_t<T> guard = T(0)) {
    const Shape out = detail::broadcast_shapes(a.shape(), b.shape(), "div");
    if (guard <= T(0)) {
        for (T v : b.value().data()) {
            if (v == T(0)) throw DomainError("div: zero denominator (shape " + shape_str(b.shape()) + ")");
        }
    }
    auto denom = [guard](T y) { return guard > T(0) ? std::max(y, guard) : y; };
    return Graph<T>::apply(
        OpKind::div, {a, b},
        [out, denom](const auto& in) {
            return detail::binary_forward(*in[0], *in[1], out, [denom](T x, T y) { return x / denom(y); });
        },
        [guard, denom](const auto& in, const Tensor<T>&, const Tensor<T>& g, const std::vector<bool>& needed) {
            return detail::binary_backward(
                *in[0], *in[1], g, needed, [denom](T, T y, T gv) { return gv / denom(y); },
                [guard, denom](T x, T y, T gv) {
                    if (guard > T(0) && y < guard) return T(0);
                    const T d = denom(y);
                    return -gv * x / (d * d);
                });
        });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops

template <class T>
Var<T> exp(const Var<T>& x) {
    return detail::unary(
        OpKind::exp, x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

/// Natural log. With `guard` > 0 inputs are clamped to max(x, guard); otherwise
/// non-positive inputs throw.
template <class T>
Var<T> log(const Var<T>& x, std::type_identity_t<T> guard = T(0)) {
    if (guard <= T(0)) {
        for (T v : x.value().data()) {
            if (!(v > T(0))) throw DomainError("log: non-positive input (shape " + shape_str(x.shape()) + ")");
        }
    }
    return detail::unary(
        OpKind::log, x, [guard](T v) { return std::log(guard > T(0) ? std::max(v, guard) : v); },
        [guard](T v, T) { return (guard > T(0) && v < guard) ? T(0) : T(1) / v; });
}

template <class T>
Var<T> softplus(const Var<T>& x) {
    return detail::unary(
        OpKind::softplus, x, [](T v) { return detail::stable_softplus(v); },
        [](T v, T) { return detail::stable_sigmoid(v); });
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
    return detail::unary(
        OpKind::sigmoid, x, [](T v) { return detail::stable_sigmoid(v); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var<T> relu(const Var<T>& x) {
    return detail::unary(
        OpKind::relu, x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

/// max(x, lo); the gradient is zero where clamped.
template <class T>
Var<T> clamp_min(const Var<T>& x, std::type_identity_t<T> lo) {
    return detail::unary(
        OpKind::clamp_min, x, [lo](T v) { return v < lo ? lo : v; }, [lo](T v, T) { return v < lo ? T(0) : T(1); });
}

/// x^p for a scalar exponent. Negative bases need an integral exponent.
template <class T>
Var<T> power(const Var<T>& x, std::type_identity_t<T> p) {
    if (p != std::floor(p)) {
        for (T v : x.value().data()) {
            if (v < T(0)) throw DomainError("power: negative base with non-integral exponent");
        }
    }
    return detail::unary(
        OpKind::power, x, [p](T v) { return std::pow(v, p); },
        [p](T v, T) { return p == T(0) ? T(0) : p * std::pow(v, p - T(1)); });
}

// ---------------------------------------------------------------------------
// Contractions and reductions

/// [m, k] x [k, n] -> [m, n].
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    return Graph<T>::apply(
        OpKind::matmul, {a, b},
        [](const auto& in) {
            const std::size_t m = in[0]->dim(0), k = in[0]->dim(1), n = in[1]->dim(1);
            Tensor<T> out({m, n});
            const T* pa = in[0]->data().data();
            const T* pb = in[1]->data().data();
            T* pc = out.data().data();
            parallel_for(m, 256, [&](std::size_t r0, std::size_t r1) {
                for (std::size_t i = r0; i < r1; ++i) {
                    T* crow = pc + i * n;
                    for (std::size_t p = 0; p < k; ++p) {
                        const T av = pa[i * k + p];
                        const T* brow = pb + p * n;
                        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
                    }
                }
            });
            return out;
        },
        [](const auto& in, const Tensor<T>&, const Tensor<T>& g, const std::vector<bool>& needed) {
            const std::size_t m = in[0]->dim(0), k = in[0]->dim(1), n = in[1]->dim(1);
            const T* pa = in[0]->data().data();
            const T* pb = in[1]->data().data();
            const T* pg = g.data().data();
            detail::Grads<T> grads(2);
            if (needed[0]) {
                grads[0] = Tensor<T>({m, k});
                T* ga = grads[0]->data().data();
                parallel_for(m, 256, [&](std::size_t r0, std::size_t r1) {
                    for (std::size_t i = r0; i < r1; ++i) {
                        for (std::size_t p = 0; p < k; ++p) {
                            T acc = 0;
                            const T* grow = pg + i * n;
                            const T* brow = pb + p * n;
                            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                            ga[i * k + p] = acc;
                        }
                    }
                });
            }
            if (needed[1]) {
                grads[1] = Tensor<T>({k, n});
                T* gb = grads[1]->data().data();
                parallel_for(k, 1, [&](std::size_t p0, std::size_t p1) {
                    for (std::size_t i = 0; i < m; ++i) {
                        const T* grow = pg + i * n;
                        for (std::size_t p = p0; p < p1; ++p) {
                            const T av = pa[i * k + p];
                            T* brow = gb + p * n;
                            for (std::size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
                        }
                    }
                });
            }
            return grads;
        });
}

namespace detail {

template <class T>
Var<T> reduce_axis(OpKind op, const Var<T>& x, std::size_t ax, bool average) {
    Shape out_shape = x.shape();
    out_shape.erase(out_shape.begin() + static_cast<long>(ax));
    const auto [outer, len, inner] = split_axis(x.shape(), ax);
    return Graph<T>::apply(
        op, {x},
        [=](const auto& in) {
            Tensor<T> out(out_shape);
            auto src = in[0]->data();
            auto dst = out.data();
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t l = 0; l < len; ++l) {
                    const T* s = src.data() + (o * len + l) * inner;
                    T* d = dst.data() + o * inner;
                    for (std::size_t i = 0; i < inner; ++i) d[i] += s[i];
                }
            }
            if (average && len > 0) {
                for (auto& v : dst) v /= static_cast<T>(len);
            }
            return out;
        },
        [=](const auto& in, const Tensor<T>&, const Tensor<T>& g, const std::vector<bool>&) {
            Grads<T> grads(1);
            grads[0] = Tensor<T>(in[0]->shape());
            auto dst = grads[0]->data();
            auto pg = g.data();
            const T scale = average && len > 0 ? T(1) / static_cast<T>(len) : T(1);
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t l = 0; l < len; ++l) {
                    T* d = dst.data() + (o * len + l) * inner;
                    const T* s = pg.data() + o * inner;
                    for (std::size_t i = 0; i < inner; ++i) d[i] = s[i] * scale;
                }
            }
            return grads;
        });
}

template <class T>
Var<T> reduce_all(OpKind op, const Var<T>& x, bool average) {
    return Graph<T>::apply(
        op, {x},
        [average](const auto& in) {
            T acc = 0;
            for (T v : in[0]->data()) acc += v;
            if (average && in[0]->numel() > 0) acc /= static_cast<T>(in[0]->numel());
            return Tensor<T>::scalar(acc);
        },
        [average](const auto& in, const Tensor<T>&, const Tensor<T>& g, const std::vector<bool>&) {
            Grads<T> grads(1);
            const T n = static_cast<T>(in[0]->numel());
            grads[0] = Tensor<T>(in[0]->shape(), average ? g[0] / n : g[0]);
            return grads;
        });
}

}  // namespace detail

/// Sum of all elements -> scalar.
template <class T>
Var<T> sum(const Var<T>& x) {
    return detail::reduce_all(OpKind::sum, x, false);
}

/// Sum along one axis; the axis is removed.
template <class T>
Var<T> sum(const Var<T>& x, long axis) {
    return detail::reduce_axis(OpKind::sum, x, detail::normalize_axis(axis, x.shape().size(), "sum"), false);
}

template <class T>
Var<T> mean(const Var<T>& x) {
    return detail::reduce_all(OpKind::mean, x, true);
}

template <class T>
Var<T> mean(const Var<T>& x, long axis) {
    return detail::reduce_axis(OpKind::mean, x, detail::normalize_axis(axis, x.shape().size(), "mean"), true);
}

// ---------------------------------------------------------------------------
// Structural ops

template <class T>
Var<T> concat(const std::vector<Var<T>>& parts, long axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const std::size_t rank = parts[0].shape().size();
    const std::size_t ax = detail::normalize_axis(axis, rank, "concat");
    Shape out_shape = parts[0].shape();
    out_shape[ax] = 0;
    std::vector<std::size_t> lens;
    for (const auto& p : parts) {
        if (p.shape().size() != rank) throw ShapeError("concat: rank mismatch " + shape_str(p.shape()));
        for (std::size_t d = 0; d < rank; ++d) {
            if (d != ax && p.shape()[d] != parts[0].shape()[d]) {
                throw ShapeError("concat: shapes " + shape_str(parts[0].shape()) + " and " + shape_str(p.shape()) +
                                 " differ off the concat axis");
            }
        }
        lens.push_back(p.shape()[ax]);
        out_shape[ax] += p.shape()[ax];
    }
    const auto [outer, total, inner] = detail::split_axis(out_shape, ax);
    return Graph<T>::apply(
        OpKind::concat, parts,
        [=](const auto& in) {
            Tensor<T> out(out_shape);
            auto dst = out.data();
            for (std::size_t o = 0; o < outer; ++o) {
                std::size_t at = 0;
                for (std::size_t p = 0; p < in.size(); ++p) {
                    const std::size_t n = lens[p] * inner;
                    const T* s = in[p]->data().data() + o * n;
                    std::copy(s, s + n, dst.data() + (o * total * inner) + at);
                    at += n;
                }
            }
            return out;
        },
        [=](const auto& in, const Tensor<T>&, const Tensor<T>& g, const std::vector<bool>& needed) {
            detail::Grads<T> grads(in.size());
            auto src = g.data();
            std::size_t at = 0;
            for (std::size_t p = 0; p < in.size(); ++p) {
                const std::size_t n = lens[p] * inner;
                if (needed[p]) {
                    grads[p] = Tensor<T>(in[p]->shape());
                    auto dst = grads[p]->data();
                    for (std::size_t o = 0; o < outer; ++o) {
                        const T* s = src.data() + o * total * inner + at;
                        std::copy(s, s + n, dst.data() + o * n);
                    }
                }
                at += n;
            }
            return grads;
        });
}

/// Elements [begin, end) along `axis`.
template <class T>
Var<T> slice(const Var<T>& x, long axis, std::size_t begin, std::size_t end) {
    const std::size_t ax = detail::normalize_axis(axis, x.shape().size(), "slice");
    if (begin > end || end > x.shape()[ax]) {
        throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of bounds for shape " + shape_str(x.shape()));
    }
    Shape out_shape = x.shape();
    out_shape[ax] = end - begin;
    const auto [outer, len, inner] = detail::split_axis(x.shape(), ax);
    const std::size_t n = (end - begin) * inner;
    return Graph<T>::apply(
        OpKind::slice, {x},
        [=](const auto& in) {
            Tensor<T> out(out_shape);
            auto src = in[0]->data();
            auto dst = out.data();
            for (std::size_t o = 0; o < outer; ++o) {
                const T* s = src.data() + (o * len + begin) * inner;
                std::copy(s, s + n, dst.data() + o * n);
            }
            return out;
        },
        [=](const auto& in, const Tensor<T>&, const Tensor<T>& g, const std::vector<bool>&) {
            detail::Grads<T> grads(1);
            grads[0] = Tensor<T>(in[0]->shape());
            auto dst = grads[0]->data();
            auto src = g.data();
            for (std::size_t o = 0; o < outer; ++o) {
                std::copy(src.data() + o * n, src.data() + (o + 1) * n, dst.data() + (o * len + begin) * inner);
            }
            return grads;
        });
}

/// Rows of `table` ([V, ...]) selected by `indices` -> [N, ...]. Backward scatter-adds
/// into the table gradient in index order.
template <class T>
Var<T> gather(const Var<T>& table, std::shared_ptr<const std::vector<std::size_t>> indices) {
    if (table.shape().empty()) throw ShapeError("gather: table must have rank >= 1");
    const std::size_t rows = table.shape()[0];
    for (std::size_t idx : *indices) {
        if (idx >= rows) {
            throw ShapeError("gather: index " + std::to_string(idx) + " out of range for table " +
                             shape_str(table.shape()));
        }
    }
    Shape out_shape = table.shape();
    out_shape[0] = indices->size();
    const std::size_t width = rows ? table.numel() / rows : 0;
    return Graph<T>::apply(
        OpKind::gather, {table},
        [=](const auto& in) {
            Tensor<T> out(out_shape);
            const T* src = in[0]->data().data();
            T* dst = out.data().data();
            const auto& idx = *indices;
            for (std::size_t r = 0; r < idx.size(); ++r) {
                const T* s = src + idx[r] * width;
                for (std::size_t c = 0; c < width; ++c) dst[r * width + c] = s[c];
            }
            return out;
        },
        [=](const auto& in, const Tensor<T>&, const Tensor<T>& g, const std::vector<bool>&) {
            detail::Grads<T> grads(1);
            grads[0] = Tensor<T>(in[0]->shape());
            T* dst = grads[0]->data().data();
            const T* src = g.data().data();
            const auto& idx = *indices;
            for (std::size_t r = 0; r < idx.size(); ++r) {
                T* d = dst + idx[r] * width;
                for (std::size_t c = 0; c < width; ++c) d[c] += src[r * width + c];
            }
            return grads;
        });
}

template <class T>
Var<T> gather(const Var<T>& table, std::vector<std::size_t> indices) {
    return gather(table, std::make_shared<const std::vector<std::size_t>>(std::move(indices)));
}

/// Exclusive cumulative product along the last axis: [a, b, c] -> [1, a, ab].
template <class T>
Var<T> cumprod_exclusive(const Var<T>& x) {
    if (x.shape().empty()) throw ShapeError("cumprod_exclusive: input must have rank >= 1");
    const std::size_t len = x.shape().back();
    const std::size_t rows = len ? x.numel() / len : 0;
    return Graph<T>::apply(
        OpKind::cumprod_exclusive, {x},
        [=](const auto& in) {
            Tensor<T> out(in[0]->shape());
            const T* src = in[0]->data().data();
            T* dst = out.data().data();
            for (std::size_t r = 0; r < rows; ++r) {
                T acc = 1;
                for (std::size_t i = 0; i < len; ++i) {
                    dst[r * len + i] = acc;
                    acc *= src[r * len + i];
                }
            }
            return out;
        },
        // d out_i / d x_k = prod_{j<i, j!=k} x_j for i > k. Using the suffix recurrence
        // s_k = g_{k+1} + x_{k+1} s_{k+1}, the gradient is out_k * s_k with no division.
        [=](const auto& in, const Tensor<T>& out, const Tensor<T>& g, const std::vector<bool>&) {
            detail::Grads<T> grads(1);
            grads[0] = Tensor<T>(in[0]->shape());
            const T* xs = in[0]->data().data();
            const T* ys = out.data().data();
            const T* gs = g.data().data();
            T* dst = grads[0]->data().data();
            for (std::size_t r = 0; r < rows; ++r) {
                const std::size_t base = r * len;
                T s = 0;
                for (std::size_t k = len; k-- > 0;) {
                    dst[base + k] = ys[base + k] * s;
                    s = gs[base + k] + xs[base + k] * s;
                }
            }
            return grads;
        });
}

template <class T>
Var<T> broadcast(const Var<T>& x, const Shape& shape) {
    const Shape in_shape = x.shape();
    return Graph<T>::apply(
        OpKind::broadcast, {x}, [shape](const auto& in) { return detail::expand(*in[0], shape); },
        [in_shape](const auto&, const Tensor<T>&, const Tensor<T>& g, const std::vector<bool>&) {
            detail::Grads<T> grads(1);
            grads[0] = detail::reduce_to_shape(g, in_shape);
            return grads;
        });
}

template <class T>
Var<T> reshape(const Var<T>& x, const Shape& shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    const Shape in_shape = x.shape();
    return Graph<T>::apply(
        OpKind::reshape, {x}, [shape](const auto& in) { return in[0]->reshaped(shape); },
        [in_shape](const auto&, const Tensor<T>&, const Tensor<T>& g, const std::vector<bool>&) {
            detail::Grads<T> grads(1);
            grads[0] = g.reshaped(in_shape);
            return grads;
        });
}

// ---------------------------------------------------------------------------
// Operator sugar

template <class T> Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <class T> Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }
template <class T> Var<T> operator*(const Var<T>& a, const Var<T>& b) { return mul(a, b); }
template <class T> Var<T> operator/(const Var<T>& a, const Var<T>& b) { return div(a, b); }
template <class T> Var<T> operator+(const Var<T>& a, std::type_identity_t<T> b) { return add(a, Var<T>::scalar(b)); }
template <class T> Var<T> operator-(const Var<T>& a, std::type_identity_t<T> b) { return sub(a, Var<T>::scalar(b)); }
template <class T> Var<T> operator*(const Var<T>& a, std::type_identity_t<T> b) { return mul(a, Var<T>::scalar(b)); }
template <class T> Var<T> operator/(const Var<T>& a, std::type_identity_t<T> b) { return div(a, Var<T>::scalar(b)); }
template <class T> Var<T> operator+(std::type_identity_t<T> a, const Var<T>& b) { return add(Var<T>::scalar(a), b); }
template <class T> Var<T> operator-(std::type_identity_t<T> a, const Var<T>& b) { return sub(Var<T>::scalar(a), b); }
template <class T> Var<T> operator*(std::type_identity_t<T> a, const Var<T>& b) { return mul(Var<T>::scalar(a), b); }
template <class T> Var<T> operator-(const Var<T>& a) { return mul(a, Var<T>::scalar(T(-1))); }

}  // namespace nerdi::ad
