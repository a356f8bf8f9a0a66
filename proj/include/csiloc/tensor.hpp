#ifndef CSILOC_TENSOR_HPP
#define CSILOC_TENSOR_HPP

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "csiloc/errors.hpp"

namespace csiloc {

enum class Mode { kTrain, kEval };

namespace detail {

template <typename R> struct TensorNode {
    std::vector<int> shape;
    std::vector<R> values;
    std::vector<R> grad; // allocated on first use, same length as values
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode &)> backward_fn;

    std::size_t size() const { return values.size(); }
    std::vector<R> &grad_buffer() {
        if (grad.size() != values.size()) grad.assign(values.size(), R(0));
        return grad;
    }
};

inline std::size_t shape_numel(const std::vector<int> &shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw DimensionError("tensor dimensions must be positive");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

} // namespace detail

// Thread-local switch: while disabled, ops compute values but never record
// backward closures. Used for evaluation and for finite-difference probes.
class GradMode {
  public:
    static bool enabled() { return flag(); }
    static void set(bool on) { flag() = on; }

  private:
    static bool &flag() {
        thread_local bool f = true;
        return f;
    }
};

class NoGradGuard {
  public:
    NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set(false); }
    ~NoGradGuard() { GradMode::set(prev_); }
    NoGradGuard(const NoGradGuard &) = delete;
    NoGradGuard &operator=(const NoGradGuard &) = delete;

  private:
    bool prev_;
};

// Dense row-major real tensor. Copying a Tensor copies a handle; two copies
// refer to the same storage and gradient. Graph construction and backward are
// single-threaded per training context.
template <typename R> class Tensor {
  public:
    using Node = detail::TensorNode<R>;

    Tensor() = default;

    static Tensor zeros(std::vector<int> shape) {
        return filled(std::move(shape), R(0));
    }

    static Tensor filled(std::vector<int> shape, R value) {
        auto node = std::make_shared<Node>();
        const std::size_t n = detail::shape_numel(shape);
        node->shape = std::move(shape);
        node->values.assign(n, value);
        return Tensor(std::move(node));
    }

    static Tensor from(std::vector<int> shape, std::vector<R> values) {
        auto node = std::make_shared<Node>();
        if (detail::shape_numel(shape) != values.size())
            throw DimensionError("value count does not match tensor shape");
        node->shape = std::move(shape);
        node->values = std::move(values);
        return Tensor(std::move(node));
    }

    static Tensor scalar_of(R v) { return from({1}, {v}); }

    // Trainable leaf.
    static Tensor param(std::vector<int> shape, std::vector<R> values) {
        Tensor t = from(std::move(shape), std::move(values));
        t.node_->requires_grad = true;
        return t;
    }

    // Internal: wrap an already-built node (ops layer).
    static Tensor adopt(std::shared_ptr<Node> node) { return Tensor(std::move(node)); }

    bool defined() const { return node_ != nullptr; }
    const std::vector<int> &shape() const { return node_->shape; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    int dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i)); }
    std::size_t size() const { return node_->values.size(); }

    std::vector<R> &values() { return node_->values; }
    const std::vector<R> &values() const { return node_->values; }
    std::vector<R> &grad() { return node_->grad_buffer(); }
    bool has_grad() const { return node_->grad.size() == node_->values.size(); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), R(0));
    }

    R scalar() const {
        if (size() != 1) throw ContractError("tensor is not a scalar");
        return node_->values[0];
    }

    std::shared_ptr<Node> node() const { return node_; }
    Node *raw() const { return node_.get(); }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(";
        for (std::size_t i = 0; i < node_->shape.size(); ++i)
            os << node_->shape[i] << (i + 1 < node_->shape.size() ? "x" : "");
        os << ")";
        return os.str();
    }

  private:
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
    std::shared_ptr<Node> node_;
};

namespace detail {

// Op-construction helper: builds the result node and, when recording is
// active and any parent needs gradients, attaches the backward closure.
template <typename R>
Tensor<R> make_op(std::vector<int> shape, std::vector<R> values,
                  const std::vector<Tensor<R>> &parents,
                  std::function<void(TensorNode<R> &)> bw) {
    auto node = std::make_shared<TensorNode<R>>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    bool need = false;
    if (GradMode::enabled())
        for (const auto &p : parents)
            if (p.requires_grad()) { need = true; break; }
    if (need) {
        node->requires_grad = true;
        node->parents.reserve(parents.size());
        for (const auto &p : parents) node->parents.push_back(p.node());
        node->backward_fn = std::move(bw);
    }
    return Tensor<R>::adopt(std::move(node));
}

} // namespace detail

// Reverse-mode accumulation from a scalar loss. Gradients sum into each
// reachable tensor that requires them; callers zero parameter gradients
// between optimizer steps.
template <typename R> void backward(const Tensor<R> &loss) {
    if (loss.size() != 1)
        throw ContractError("backward requires a scalar loss, got shape " + loss.shape_str());
    using Node = detail::TensorNode<R>;
    if (!loss.requires_grad()) return; // nothing reachable is trainable

    // Iterative post-order DFS; recurrent unrolls can make chains long.
    std::vector<Node *> order;
    std::unordered_set<Node *> visited;
    std::vector<std::pair<Node *, std::size_t>> stack;
    stack.emplace_back(loss.raw(), 0);
    visited.insert(loss.raw());
    while (!stack.empty()) {
        auto &[node, next_child] = stack.back();
        if (next_child < node->parents.size()) {
            Node *child = node->parents[next_child++].get();
            if (child->requires_grad && visited.insert(child).second)
                stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.raw()->grad_buffer()[0] += R(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node *node = *it;
        if (node->backward_fn) {
            node->grad_buffer(); // a node may get zero flow; closures read o.grad
            node->backward_fn(*node);
        }
    }
}

} // namespace csiloc

#endif
