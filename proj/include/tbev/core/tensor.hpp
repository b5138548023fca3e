#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "tbev/core/error.hpp"
#include "tbev/core/rng.hpp"

namespace tbev {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= std::size_t(d);
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string r = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) r += ",";
        r += std::to_string(s[i]);
    }
    return r + ")";
}

namespace detail {

template <typename T>
struct OpNode;

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    bool trainable = false;  // leaf parameter that collects gradients
    std::shared_ptr<OpNode<T>> producer;
};

// Gives an op's backward access to the gradient buffers of its inputs.
// at(i) returns nullptr when input i does not require a gradient.
template <typename T>
struct GradTargets {
    std::function<T*(int)> at;
};

template <typename T>
struct OpNode {
    std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
    std::function<void(const T* gout, const GradTargets<T>&)> backward;
};

inline thread_local bool g_grad_enabled = true;

}  // namespace detail

// Disables graph recording within the current thread and scope.
struct NoGradGuard {
    NoGradGuard() : prev_(detail::g_grad_enabled) { detail::g_grad_enabled = false; }
    ~NoGradGuard() { detail::g_grad_enabled = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

inline bool grad_enabled() { return detail::g_grad_enabled; }

// Dense row-major tensor with optional reverse-mode autograd tracking.
// Data is treated as immutable once produced by an op; in-place mutation is
// reserved for leaf parameters (optimizer updates) between graph builds.
template <typename T>
class Tensor {
  public:
    using Impl = detail::TensorImpl<T>;

    Tensor() = default;

    static Tensor zeros(Shape shape) {
        Tensor t;
        t.impl_ = std::make_shared<Impl>();
        t.impl_->data.assign(shape_numel(shape), T(0));
        t.impl_->shape = std::move(shape);
        return t;
    }

    static Tensor full(Shape shape, T value) {
        Tensor t = zeros(std::move(shape));
        for (auto& v : t.impl_->data) v = value;
        return t;
    }

    static Tensor from(Shape shape, std::vector<T> values) {
        if (shape_numel(shape) != values.size())
            throw ArgumentError("tensor data size " + std::to_string(values.size()) +
                                " does not match shape " + shape_str(shape));
        Tensor t;
        t.impl_ = std::make_shared<Impl>();
        t.impl_->shape = std::move(shape);
        t.impl_->data = std::move(values);
        return t;
    }

    static Tensor uniform(Shape shape, Rng& rng, T lo, T hi) {
        Tensor t = zeros(std::move(shape));
        for (auto& v : t.impl_->data) v = T(rng.uniform(double(lo), double(hi)));
        return t;
    }

    static Tensor normal(Shape shape, Rng& rng, T mean, T stddev) {
        Tensor t = zeros(std::move(shape));
        for (auto& v : t.impl_->data) v = T(rng.normal(double(mean), double(stddev)));
        return t;
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int dim(int i) const { return impl_->shape[std::size_t(i)]; }
    int ndim() const { return int(impl_->shape.size()); }
    std::size_t numel() const { return impl_->data.size(); }

    T* data() { return impl_->data.data(); }
    const T* data() const { return impl_->data.data(); }
    std::vector<T>& vec() { return impl_->data; }
    const std::vector<T>& vec() const { return impl_->data; }

    T item() const {
        if (numel() != 1) throw ArgumentError("item() on tensor with numel " + std::to_string(numel()));
        return impl_->data[0];
    }

    T& at(std::size_t i) { return impl_->data[i]; }
    T at(std::size_t i) const { return impl_->data[i]; }

    // Row-major accessors for 2-d / 3-d tensors (tests and glue code).
    T& at2(int i, int j) { return impl_->data[std::size_t(i) * dim(1) + j]; }
    T at2(int i, int j) const { return impl_->data[std::size_t(i) * dim(1) + j]; }
    T& at3(int c, int i, int j) {
        return impl_->data[(std::size_t(c) * dim(1) + i) * dim(2) + j];
    }
    T at3(int c, int i, int j) const {
        return impl_->data[(std::size_t(c) * dim(1) + i) * dim(2) + j];
    }

    void set_trainable(bool v) { impl_->trainable = v; }
    bool trainable() const { return impl_ && impl_->trainable; }
    bool needs_grad() const { return impl_ && (impl_->trainable || impl_->producer != nullptr); }

    // Deep copy without graph history.
    Tensor clone() const {
        Tensor t;
        t.impl_ = std::make_shared<Impl>();
        t.impl_->shape = impl_->shape;
        t.impl_->data = impl_->data;
        return t;
    }

    // Same data viewed through a graph-free constant (shares nothing mutable
    // with the original graph; used to cut history at protocol boundaries).
    Tensor detach() const { return clone(); }

    std::shared_ptr<Impl> impl() const { return impl_; }

    static Tensor wrap(std::shared_ptr<Impl> impl) {
        Tensor t;
        t.impl_ = std::move(impl);
        return t;
    }

  private:
    std::shared_ptr<Impl> impl_;
};

// Gradients of one backward pass, keyed by parameter identity.
template <typename T>
class GradStore {
  public:
    std::vector<T>* find(const Tensor<T>& t) {
        auto it = grads_.find(t.impl().get());
        return it == grads_.end() ? nullptr : &it->second;
    }
    const std::vector<T>* find(const Tensor<T>& t) const {
        auto it = grads_.find(t.impl().get());
        return it == grads_.end() ? nullptr : &it->second;
    }
    std::unordered_map<const void*, std::vector<T>>& raw() { return grads_; }

    // Accumulates other into this store (fixed call order keeps results
    // deterministic when merging per-item stores).
    void add(const GradStore& other) {
        for (const auto& [k, v] : other.grads_) {
            auto& dst = grads_[k];
            if (dst.empty()) {
                dst = v;
            } else {
                for (std::size_t i = 0; i < v.size(); ++i) dst[i] += v[i];
            }
        }
    }

    void scale(T s) {
        for (auto& [k, v] : grads_) {
            (void)k;
            for (auto& x : v) x *= s;
        }
    }

    bool empty() const { return grads_.empty(); }

  private:
    std::unordered_map<const void*, std::vector<T>> grads_;
};

namespace detail {

// Records the op node on `out` when gradients are enabled and any input is
// tracked. Called after the output tensor exists, so backward lambdas may
// capture raw pointers into the output's storage without creating ownership
// cycles (node lifetime == output impl lifetime; data is never resized).
template <typename T, typename Fn>
void attach_node(Tensor<T>& out, std::vector<Tensor<T>> inputs, Fn&& backward) {
    if (!g_grad_enabled) return;
    bool any = false;
    for (const auto& in : inputs)
        if (in.needs_grad()) {
            any = true;
            break;
        }
    if (!any) return;
    auto node = std::make_shared<OpNode<T>>();
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.impl());
    node->backward = std::forward<Fn>(backward);
    out.impl()->producer = std::move(node);
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss. Returns gradients for every
// trainable leaf reachable from `loss`. Intermediate buffers are released as
// soon as their node has been processed.
template <typename T>
GradStore<T> backward(const Tensor<T>& loss) {
    using Impl = detail::TensorImpl<T>;
    if (loss.numel() != 1) throw ArgumentError("backward expects a scalar loss");

    GradStore<T> result;
    if (!loss.impl()->producer && !loss.impl()->trainable) return result;

    // Topological order over the producer graph (iterative DFS). Raw
    // pointers stay valid: every impl is reachable from `loss` through
    // shared_ptr links for the duration of this call.
    std::vector<Impl*> topo;
    std::unordered_set<Impl*> seen;
    std::vector<std::pair<Impl*, std::size_t>> stack;
    stack.emplace_back(loss.impl().get(), 0);
    seen.insert(loss.impl().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (!node->producer || idx >= node->producer->inputs.size()) {
            topo.push_back(node);
            stack.pop_back();
            continue;
        }
        Impl* child = node->producer->inputs[idx].get();
        ++idx;
        if (!seen.count(child)) {
            seen.insert(child);
            stack.emplace_back(child, 0);
        }
    }

    std::unordered_map<Impl*, std::vector<T>> grads;
    grads[loss.impl().get()] = {T(1)};

    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Impl* node = *it;
        auto git = grads.find(node);
        if (git == grads.end()) continue;  // unreachable branch
        if (node->trainable) {
            auto& dst = result.raw()[node];
            if (dst.empty()) dst.assign(node->data.size(), T(0));
            for (std::size_t i = 0; i < git->second.size(); ++i) dst[i] += git->second[i];
        }
        if (node->producer) {
            auto& op = *node->producer;
            detail::GradTargets<T> targets;
            targets.at = [&](int i) -> T* {
                Impl* in = op.inputs[std::size_t(i)].get();
                if (!in->trainable && !in->producer) return nullptr;
                auto& buf = grads[in];
                if (buf.empty()) buf.assign(in->data.size(), T(0));
                return buf.data();
            };
            op.backward(git->second.data(), targets);
        }
        grads.erase(git);
    }
    return result;
}

}  // namespace tbev
