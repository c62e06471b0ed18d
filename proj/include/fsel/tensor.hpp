#pragma once

#include <functional>
#include <memory>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fsel/common.hpp"

namespace fsel {

template <typename Real>
class Tensor;

// One recorded operation: the inputs it read and how to push the output
// gradient back into them. Nodes never reference their own output; the
// tape passes it in, which keeps the graph an acyclic shared_ptr DAG.
template <typename Real>
struct Node {
    std::vector<Tensor<Real>> parents;
    std::function<void(const Tensor<Real>& out)> backward;
};

// Autograd toggle for inference paths. Ops skip graph recording while a
// NoGradScope is alive.
inline bool& autograd_enabled_flag() {
    thread_local bool enabled = true;
    return enabled;
}

inline bool autograd_enabled() { return autograd_enabled_flag(); }

class NoGradScope {
public:
    NoGradScope() : prev_(autograd_enabled_flag()) { autograd_enabled_flag() = false; }
    ~NoGradScope() { autograd_enabled_flag() = prev_; }
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    bool prev_;
};

// Dense row-major tensor handle. Copies share the payload, so gradients
// accumulated through one handle are visible through all of them. Forward
// ops never mutate their inputs.
template <typename Real>
class Tensor {
public:
    using value_type = Real;

    Tensor() = default;

    static Tensor zeros(std::vector<int> shape) {
        Tensor t;
        t.p_ = std::make_shared<Payload>();
        t.p_->shape = std::move(shape);
        t.p_->data.assign(numel(t.p_->shape), Real(0));
        return t;
    }

    static Tensor full(std::vector<int> shape, Real v) {
        Tensor t = zeros(std::move(shape));
        for (auto& x : t.p_->data) x = v;
        return t;
    }

    static Tensor from_data(std::vector<int> shape, std::vector<Real> data) {
        if (numel(shape) != data.size()) {
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        }
        Tensor t;
        t.p_ = std::make_shared<Payload>();
        t.p_->shape = std::move(shape);
        t.p_->data = std::move(data);
        return t;
    }

    static Tensor scalar(Real v) { return from_data({1}, {v}); }

    bool defined() const { return static_cast<bool>(p_); }

    const std::vector<int>& shape() const { return p_->shape; }
    int ndim() const { return static_cast<int>(p_->shape.size()); }
    int extent(int axis) const { return p_->shape[static_cast<std::size_t>(axis)]; }
    std::size_t size() const { return p_->data.size(); }

    std::span<Real> values() { return p_->data; }
    std::span<const Real> values() const { return p_->data; }

    Real value() const {
        if (size() != 1) {
            throw ShapeError("scalar access on tensor of shape " + shape_str(p_->shape));
        }
        return p_->data[0];
    }

    bool requires_grad() const { return p_->requires_grad; }
    Tensor& set_requires_grad(bool on) {
        p_->requires_grad = on;
        return *this;
    }

    bool has_grad() const { return !p_->grad.empty(); }

    // Gradient buffer, allocated (zeroed) on first access. Tensors are
    // handles onto shared payloads, so gradient accumulation is reachable
    // through const handles, mirroring shared_ptr semantics.
    std::span<Real> grad() const {
        if (p_->grad.empty()) p_->grad.assign(p_->data.size(), Real(0));
        return p_->grad;
    }

    void zero_grad() const {
        for (auto& g : p_->grad) g = Real(0);
    }

    const std::shared_ptr<Node<Real>>& node() const { return p_->node; }

    void set_node(std::vector<Tensor> parents, std::function<void(const Tensor&)> backward) {
        p_->node = std::make_shared<Node<Real>>();
        p_->node->parents = std::move(parents);
        p_->node->backward = std::move(backward);
        p_->requires_grad = true;
    }

    // Value copy outside the graph.
    Tensor detached() const {
        return from_data(p_->shape, p_->data);
    }

    // Payload identity (used for graph deduplication).
    const void* id() const { return p_.get(); }

private:
    struct Payload {
        std::vector<int> shape;
        std::vector<Real> data;
        std::vector<Real> grad;  // empty until requested
        bool requires_grad = false;
        std::shared_ptr<Node<Real>> node;
    };

    static std::size_t numel(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int e : shape) {
            if (e < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
            n *= static_cast<std::size_t>(e);
        }
        return n;
    }

    std::shared_ptr<Payload> p_;
};

// Reverse pass over the graph reachable from one scalar loss. Construction
// topologically orders the recorded operations; backward() seeds d(loss)=1
// and accumulates into every tensor on a requires-grad path, parameters
// included. Parameter gradients are not cleared here — callers zero them
// between steps.
template <typename Real>
class GradientTape {
public:
    explicit GradientTape(const Tensor<Real>& loss) : loss_(loss) {
        if (loss.size() != 1) {
            throw ShapeError("backward pass needs a scalar loss, got shape " + shape_str(loss.shape()));
        }
        std::unordered_set<const void*> visited;
        visit(loss, visited);
    }

    void backward() {
        loss_.grad()[0] += Real(1);
        for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
            const auto& n = it->node();
            for (auto& parent : n->parents) {
                if (parent.requires_grad()) parent.grad();  // ensure allocated
            }
            n->backward(*it);
        }
    }

    std::size_t recorded_ops() const { return order_.size(); }

private:
    void visit(const Tensor<Real>& t, std::unordered_set<const void*>& visited) {
        if (!t.node() || visited.count(t.id())) return;
        visited.insert(t.id());
        // Iterative DFS; graphs can be a few thousand nodes deep over a batch.
        struct Frame {
            Tensor<Real> t;
            std::size_t next_parent = 0;
        };
        std::vector<Frame> stack;
        stack.push_back({t, 0});
        while (!stack.empty()) {
            Frame& f = stack.back();
            const auto& n = f.t.node();
            if (f.next_parent < n->parents.size()) {
                Tensor<Real> p = n->parents[f.next_parent++];
                if (p.node() && !visited.count(p.id())) {
                    visited.insert(p.id());
                    stack.push_back({std::move(p), 0});
                }
            } else {
                order_.push_back(f.t);
                stack.pop_back();
            }
        }
    }

    Tensor<Real> loss_;
    std::vector<Tensor<Real>> order_;
};

}  // namespace fsel
