#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "tbev/core/tensor.hpp"

// Shared helpers for the test suites: central finite differences against the
// analytic gradients of the autograd tape, in double precision.

namespace tbev::testing {

struct FdReport {
    double max_rel_err = 0.0;
    int checked = 0;
};

// Relative error with an absolute floor: differences below 1e-6 count as
// noise (finite differences of near-zero gradients measure rounding junk).
inline double rel_err(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    return std::abs(analytic - numeric) / denom;
}

// Compares the analytic gradient of `loss_fn` w.r.t. `param` against central
// finite differences at the given indices. `loss_fn` must rebuild the graph
// on every call (it is invoked after in-place perturbations of `param`).
inline FdReport fd_check(Tensor<double>& param, const std::function<Tensor<double>()>& loss_fn,
                         const std::vector<std::size_t>& indices, double eps) {
    Tensor<double> loss = loss_fn();
    GradStore<double> grads = backward(loss);
    const std::vector<double>* g = grads.find(param);

    FdReport rep;
    for (std::size_t idx : indices) {
        const double analytic = g ? (*g)[idx] : 0.0;
        const double orig = param.at(idx);
        param.at(idx) = orig + eps;
        const double up = loss_fn().item();
        param.at(idx) = orig - eps;
        const double dn = loss_fn().item();
        param.at(idx) = orig;
        const double numeric = (up - dn) / (2.0 * eps);
        rep.max_rel_err = std::max(rep.max_rel_err, rel_err(analytic, numeric));
        ++rep.checked;
    }
    return rep;
}

inline std::vector<std::size_t> all_indices(const Tensor<double>& t) {
    std::vector<std::size_t> v(t.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
    return v;
}

inline std::vector<std::size_t> sample_indices(const Tensor<double>& t, int count, Rng& rng) {
    std::vector<std::size_t> v;
    for (int i = 0; i < count; ++i) v.push_back(std::size_t(rng.below(t.numel())));
    return v;
}

}  // namespace tbev::testing
