#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "textseg/error.hpp"

namespace textseg {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& dims) {
    std::int64_t n = 1;
    for (int d : dims) n *= d;
    return n;
}

inline std::string shape_str(const Shape& dims) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) os << ',';
        os << dims[i];
    }
    os << ')';
    return os.str();
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

// Dense row-major tensor. Image tensors use NCHW order. The scalar type is
// float in production; double instantiations exist for finite-difference
// gradient checking, where float rounding would swamp the comparison.
template <typename S>
struct TensorT {
    Shape dims;
    std::vector<S> data;

    TensorT() = default;
    explicit TensorT(Shape d) : dims(std::move(d)), data(static_cast<std::size_t>(numel(dims)), S(0)) {
        check_dims();
    }
    TensorT(Shape d, std::vector<S> v) : dims(std::move(d)), data(std::move(v)) {
        check_dims();
        if (static_cast<std::int64_t>(data.size()) != numel(dims))
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match dims " + shape_str(dims));
    }

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }

    // NCHW accessors.
    int n() const { return dims.at(0); }
    int c() const { return dims.at(1); }
    int h() const { return dims.at(2); }
    int w() const { return dims.at(3); }

    S& at4(int in, int ic, int ih, int iw) {
        return data[static_cast<std::size_t>(((static_cast<std::int64_t>(in) * dims[1] + ic) * dims[2] + ih) * dims[3] + iw)];
    }
    S at4(int in, int ic, int ih, int iw) const {
        return data[static_cast<std::size_t>(((static_cast<std::int64_t>(in) * dims[1] + ic) * dims[2] + ih) * dims[3] + iw)];
    }

    bool all_finite() const {
        for (S v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

private:
    void check_dims() const {
        for (int d : dims)
            if (d < 0) throw ShapeError("negative extent in " + shape_str(dims));
    }
};

template <typename S>
class NodeT;

// A value in the autodiff graph. Ops return shared nodes; backward() walks
// the recorded trace from a scalar root.
template <typename S>
using VarT = std::shared_ptr<NodeT<S>>;

template <typename S>
class NodeT : public std::enable_shared_from_this<NodeT<S>> {
public:
    TensorT<S> value;
    std::vector<S> grad;  // empty until touched; same numel as value once allocated
    bool requires_grad = false;
    std::string name;     // set for parameters, empty for intermediates
    const char* op = "";  // op tag; lets check tooling find kinked ops in a trace

    std::vector<VarT<S>> parents;
    std::function<void(NodeT<S>&)> backprop;  // reads this->grad, accumulates into parents

    bool is_leaf() const { return parents.empty(); }

    void ensure_grad() {
        if (grad.size() != value.data.size()) grad.assign(value.data.size(), S(0));
    }

    void zero_grad() {
        if (!grad.empty()) grad.assign(grad.size(), S(0));
    }

    // Gradient accumulation helper used by backprop closures.
    void add_grad(std::size_t i, S g) {
        ensure_grad();
        grad[i] += g;
    }
};

template <typename S>
VarT<S> make_leaf(TensorT<S> value, bool requires_grad = false, std::string name = "") {
    auto node = std::make_shared<NodeT<S>>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    node->name = std::move(name);
    return node;
}

template <typename S>
VarT<S> make_node(TensorT<S> value, std::vector<VarT<S>> parents,
                  std::function<void(NodeT<S>&)> backprop) {
    auto node = std::make_shared<NodeT<S>>();
    node->value = std::move(value);
    node->parents = std::move(parents);
    node->backprop = std::move(backprop);
    for (const auto& p : node->parents)
        if (p->requires_grad) {
            node->requires_grad = true;
            break;
        }
    return node;
}

namespace detail {

template <typename S>
void topo_collect(const VarT<S>& node, std::unordered_set<const NodeT<S>*>& seen,
                  std::vector<VarT<S>>& order) {
    // Iterative post-order DFS; recursion would overflow on deep traces.
    struct Frame {
        VarT<S> node;
        std::size_t next_parent;
    };
    std::vector<Frame> stack;
    if (seen.insert(node.get()).second) stack.push_back({node, 0});
    while (!stack.empty()) {
        Frame& top = stack.back();
        if (top.next_parent < top.node->parents.size()) {
            VarT<S> parent = top.node->parents[top.next_parent++];
            if (seen.insert(parent.get()).second) stack.push_back({parent, 0});
        } else {
            order.push_back(top.node);
            stack.pop_back();
        }
    }
}

}  // namespace detail

// Reverse-mode sweep from a scalar root. Gradients of leaves accumulate
// across calls; intermediate gradients are reset per call so each sweep
// contributes exactly one unit of the root's gradient.
template <typename S>
void backward(const VarT<S>& root) {
    if (!root) throw UsageError("backward on null node");
    if (root->value.size() != 1)
        throw UsageError("backward root must be scalar, got " + shape_str(root->value.dims));

    std::unordered_set<const NodeT<S>*> seen;
    std::vector<VarT<S>> order;
    detail::topo_collect(root, seen, order);

    for (const auto& node : order)
        if (!node->is_leaf() && node->requires_grad) {
            node->ensure_grad();
            node->zero_grad();
        }

    root->ensure_grad();
    root->grad[0] += S(1);

    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backprop && (*it)->requires_grad) (*it)->backprop(**it);
}

// Clears accumulated gradients on the given parameters.
template <typename S>
void zero_grads(const std::vector<VarT<S>>& params) {
    for (const auto& p : params) p->zero_grad();
}

using Tensor = TensorT<float>;
using Var = VarT<float>;

}  // namespace textseg
