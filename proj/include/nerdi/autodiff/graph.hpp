#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nerdi/autodiff/tensor.hpp"

namespace nerdi::ad {

enum class OpKind {
    leaf,
    add,
    sub,
    mul,
    div,
    matmul,
    sum,
    mean,
    exp,
    log,
    softplus,
    sigmoid,
    relu,
    clamp_min,
    power,
    concat,
    slice,
    gather,
    cumprod_exclusive,
    broadcast,
    reshape,
    hash_encode,
};

inline const char* op_name(OpKind op) {
    switch (op) {
        case OpKind::leaf: return "leaf";
        case OpKind::add: return "add";
        case OpKind::sub: return "sub";
        case OpKind::mul: return "mul";
        case OpKind::div: return "div";
        case OpKind::matmul: return "matmul";
        case OpKind::sum: return "sum";
        case OpKind::mean: return "mean";
        case OpKind::exp: return "exp";
        case OpKind::log: return "log";
        case OpKind::softplus: return "softplus";
        case OpKind::sigmoid: return "sigmoid";
        case OpKind::relu: return "relu";
        case OpKind::clamp_min: return "clamp_min";
        case OpKind::power: return "power";
        case OpKind::concat: return "concat";
        case OpKind::slice: return "slice";
        case OpKind::gather: return "gather";
        case OpKind::cumprod_exclusive: return "cumprod_exclusive";
        case OpKind::broadcast: return "broadcast";
        case OpKind::reshape: return "reshape";
        case OpKind::hash_encode: return "hash_encode";
    }
    return "?";
}

template <class T>
class Graph;

/// Handle to a value produced during a forward pass. Values that depend on a
/// requires-grad leaf live on a Graph; everything else is a free constant.
template <class T>
class Var {
public:
    Var() = default;

    static Var constant(Tensor<T> value) {
        Var v;
        v.value_ = std::make_shared<const Tensor<T>>(std::move(value));
        return v;
    }
    static Var scalar(T value) { return constant(Tensor<T>::scalar(value)); }

    const Tensor<T>& value() const { return *value_; }
    const Shape& shape() const { return value_->shape(); }
    std::size_t numel() const { return value_->numel(); }
    bool requires_grad() const { return graph_ != nullptr; }
    bool valid() const { return value_ != nullptr; }
    Graph<T>* graph() const { return graph_; }
    std::size_t id() const { return id_; }
    std::uint64_t generation() const { return generation_; }

    /// The same value cut off from the graph.
    Var detach() const {
        Var v;
        v.value_ = value_;
        return v;
    }

private:
    std::shared_ptr<const Tensor<T>> value_;
    Graph<T>* graph_ = nullptr;
    std::size_t id_ = 0;
    std::uint64_t generation_ = 0;

    friend class Graph<T>;
};

/// Gradients keyed by leaf id; leaves the loss does not reach map to zeros.
template <class T>
class Gradients {
public:
    const Tensor<T>& of(const Var<T>& leaf) const {
        auto it = grads_.find(leaf.id());
        if (!leaf.requires_grad() || it == grads_.end()) {
            throw std::invalid_argument("gradient requested for a value that is not a leaf of this graph");
        }
        return it->second;
    }
    const std::unordered_map<std::size_t, Tensor<T>>& all() const { return grads_; }

private:
    std::unordered_map<std::size_t, Tensor<T>> grads_;
    friend class Graph<T>;
};

/// Append-only tape. Node inputs always precede the node, so the record is a
/// topological order and backward is a single reverse sweep.
template <class T>
class Graph {
public:
    using TensorRefs = std::vector<const Tensor<T>*>;
    using ForwardFn = std::function<Tensor<T>(const TensorRefs&)>;
    /// Returns one optional gradient per operand; only entries flagged in `needed` are read.
    using BackwardFn = std::function<std::vector<std::optional<Tensor<T>>>(
        const TensorRefs& in, const Tensor<T>& out, const Tensor<T>& grad_out, const std::vector<bool>& needed)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var<T> leaf(Tensor<T> value) {
        Node node;
        node.op = OpKind::leaf;
        node.value = std::make_shared<const Tensor<T>>(std::move(value));
        return push(std::move(node));
    }

    /// Leaf when the tensor is flagged requires_grad, free constant otherwise.
    Var<T> input(const Tensor<T>& value) {
        return value.requires_grad() ? leaf(value) : Var<T>::constant(value);
    }

    std::size_t size() const { return nodes_.size(); }
    OpKind op_at(std::size_t id) const { return nodes_.at(id).op; }
    const Tensor<T>& value_at(std::size_t id) const { return *nodes_.at(id).value; }

    /// Drops every node; Vars issued before the reset become detached.
    void clear() {
        nodes_.clear();
        ++generation_;
    }

    /// Applies an op: computes its value and records it when any operand requires grad.
    static Var<T> apply(OpKind op, const std::vector<Var<T>>& operands, ForwardFn forward, BackwardFn backward) {
        Graph* graph = nullptr;
        TensorRefs refs;
        refs.reserve(operands.size());
        for (const auto& v : operands) {
            if (!v.valid()) throw std::invalid_argument(std::string(op_name(op)) + ": empty operand");
            refs.push_back(&v.value());
            if (v.graph_) {
                v.graph_->check_attached(v);
                if (graph && graph != v.graph_) {
                    throw std::invalid_argument(std::string(op_name(op)) + ": operands come from different graphs");
                }
                graph = v.graph_;
            }
        }
        Tensor<T> value = forward(refs);
        if (!graph) return Var<T>::constant(std::move(value));

        Node node;
        node.op = op;
        node.value = std::make_shared<const Tensor<T>>(std::move(value));
        for (const auto& v : operands) {
            node.operands.push_back(Operand{v.graph_ ? std::optional<std::size_t>(v.id_) : std::nullopt, v.value_});
        }
        node.forward = std::move(forward);
        node.backward = std::move(backward);
        return graph->push(std::move(node));
    }

    /// Reverse sweep from a scalar loss.
    Gradients<T> backward(const Var<T>& loss) const {
        if (!loss.valid() || loss.numel() != 1) {
            throw ShapeError("backward: loss must be a scalar, got shape " +
                             (loss.valid() ? shape_str(loss.shape()) : std::string("<empty>")));
        }
        if (loss.graph_ != this) {
            throw std::invalid_argument("backward: loss is not recorded on this graph (detached graph)");
        }
        check_attached(loss);

        std::vector<std::optional<Tensor<T>>> grads(loss.id_ + 1);
        grads[loss.id_] = Tensor<T>(loss.shape(), T(1));
        for (std::size_t i = loss.id_ + 1; i-- > 0;) {
            if (!grads[i]) continue;
            const Node& node = nodes_[i];
            if (node.op == OpKind::leaf) continue;
            std::vector<bool> needed(node.operands.size());
            bool any = false;
            for (std::size_t k = 0; k < node.operands.size(); ++k) {
                needed[k] = node.operands[k].node.has_value();
                any = any || needed[k];
            }
            if (!any) continue;
            TensorRefs refs;
            for (const auto& opnd : node.operands) refs.push_back(opnd.value.get());
            auto in_grads = node.backward(refs, *node.value, *grads[i], needed);
            for (std::size_t k = 0; k < node.operands.size(); ++k) {
                if (!needed[k] || !in_grads[k]) continue;
                const std::size_t j = *node.operands[k].node;
                if (!grads[j]) {
                    grads[j] = std::move(in_grads[k]);
                } else {
                    auto dst = grads[j]->data();
                    auto src = in_grads[k]->data();
                    for (std::size_t e = 0; e < dst.size(); ++e) dst[e] += src[e];
                }
            }
            if (i != loss.id_) grads[i].reset();
        }

        Gradients<T> out;
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            if (nodes_[i].op != OpKind::leaf) continue;
            if (i < grads.size() && grads[i]) {
                out.grads_.emplace(i, std::move(*grads[i]));
            } else {
                out.grads_.emplace(i, Tensor<T>(nodes_[i].value->shape()));
            }
        }
        return out;
    }

    /// Recomputes every recorded node from the leaves and constants and reports
    /// whether each recomputed value is bit-identical to the stored one.
    bool replay_matches() const {
        std::vector<std::shared_ptr<const Tensor<T>>> fresh(nodes_.size());
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            const Node& node = nodes_[i];
            if (node.op == OpKind::leaf) {
                fresh[i] = node.value;
                continue;
            }
            TensorRefs refs;
            for (const auto& opnd : node.operands) {
                refs.push_back(opnd.node ? fresh[*opnd.node].get() : opnd.value.get());
            }
            fresh[i] = std::make_shared<const Tensor<T>>(node.forward(refs));
            if (!(*fresh[i] == *node.value)) return false;
        }
        return true;
    }

private:
    struct Operand {
        std::optional<std::size_t> node;
        std::shared_ptr<const Tensor<T>> value;
    };
    struct Node {
        OpKind op = OpKind::leaf;
        std::vector<Operand> operands;
        std::shared_ptr<const Tensor<T>> value;
        ForwardFn forward;
        BackwardFn backward;
    };

    Var<T> push(Node node) {
        Var<T> v;
        v.value_ = node.value;
        v.graph_ = this;
        v.id_ = nodes_.size();
        v.generation_ = generation_;
        nodes_.push_back(std::move(node));
        return v;
    }

    void check_attached(const Var<T>& v) const {
        if (v.generation_ != generation_ || v.id_ >= nodes_.size()) {
            throw std::invalid_argument("value belongs to a cleared graph (detached graph)");
        }
    }

    std::vector<Node> nodes_;
    std::uint64_t generation_ = 0;
};

template <class T>
Gradients<T> backward(const Var<T>& loss) {
    if (!loss.valid() || !loss.graph()) {
        throw std::invalid_argument("backward: loss does not depend on any requires-grad leaf (detached graph)");
    }
    return loss.graph()->backward(loss);
}

}  // namespace nerdi::ad
