#pragma once

#include <cmath>
#include <unordered_map>
#include <vector>

#include "tbev/core/param.hpp"

namespace tbev {

// Cosine annealing from lr_max (epoch 0) to lr_min (last epoch).
inline double cosine_lr(int epoch, int total_epochs, double lr_max, double lr_min) {
    if (total_epochs <= 1) return lr_max;
    const double t = double(epoch) / double(total_epochs - 1);
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(3.141592653589793 * t));
}

template <typename T>
class Adam {
  public:
    Adam(T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    // Applies one update to every parameter that received a gradient.
    // Iteration follows the parameter list, so the update order is fixed.
    void step(ParamList<T>& params, GradStore<T>& grads, T lr) {
        ++t_;
        const T bc1 = T(1) - std::pow(beta1_, T(t_));
        const T bc2 = T(1) - std::pow(beta2_, T(t_));
        for (auto& p : params) {
            const std::vector<T>* g = grads.find(p.tensor);
            if (!g) continue;
            State& s = state_[p.tensor.impl().get()];
            if (s.m.empty()) {
                s.m.assign(p.tensor.numel(), T(0));
                s.v.assign(p.tensor.numel(), T(0));
            }
            T* w = p.tensor.data();
            for (std::size_t i = 0; i < g->size(); ++i) {
                const T gi = (*g)[i];
                s.m[i] = beta1_ * s.m[i] + (T(1) - beta1_) * gi;
                s.v[i] = beta2_ * s.v[i] + (T(1) - beta2_) * gi * gi;
                const T mhat = s.m[i] / bc1;
                const T vhat = s.v[i] / bc2;
                w[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    int steps() const { return t_; }

  private:
    struct State {
        std::vector<T> m, v;
    };
    std::unordered_map<const void*, State> state_;
    T beta1_, beta2_, eps_;
    int t_ = 0;
};

}  // namespace tbev
