#pragma once

#include <cmath>

#include "tbev/core/ops.hpp"

// Training objectives and the evaluation metric for binary BEV segmentation.
// Logits are pre-sigmoid scores; ground truth grids hold exactly 0 or 1.

namespace tbev {

template <typename T>
void validate_ground_truth(const Tensor<T>& gt) {
    for (std::size_t i = 0; i < gt.numel(); ++i)
        if (gt.at(i) != T(0) && gt.at(i) != T(1))
            throw ArgumentError("ground truth entries must be exactly 0 or 1");
}

// Smoothed differentiable IoU loss:
//   p = sigmoid(logits)
//   loss = 1 - (1 + sum p*g) / (1 + sum (p + g - p*g))
template <typename T>
Tensor<T> iou_loss(const Tensor<T>& logits, const Tensor<T>& gt) {
    detail::check_same_shape(logits, gt, "iou_loss");
    Tensor<T> p = sigmoid(logits);
    Tensor<T> inter = sum_all(mul(p, gt));
    Tensor<T> uni = sub(add(sum_all(p), sum_all(gt)), inter);
    Tensor<T> ratio = div_el(add_scalar(inter, T(1)), add_scalar(uni, T(1)));
    return add_scalar(scale(ratio, T(-1)), T(1));
}

// Mean pixel-wise weighted binary cross-entropy in stable softplus form:
//   loss_i = pw * g * softplus(-l) + (1 - g) * softplus(l)
template <typename T>
Tensor<T> weighted_cross_entropy(const Tensor<T>& logits, const Tensor<T>& gt, T pos_weight) {
    detail::check_same_shape(logits, gt, "weighted_cross_entropy");
    if (!(pos_weight > T(0))) throw ArgumentError("weighted_cross_entropy: pos_weight must be > 0");
    const std::size_t n = logits.numel();
    auto softplus = [](T x) -> T {
        return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
    };
    const T* pl = logits.data();
    const T* pg = gt.data();
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i)
        acc += pos_weight * pg[i] * softplus(-pl[i]) + (T(1) - pg[i]) * softplus(pl[i]);
    Tensor<T> out = Tensor<T>::from({1}, {acc / T(n)});
    detail::attach_node(out, {logits, gt},
                        [n, pos_weight, logits, gt](const T* g, const detail::GradTargets<T>& t) {
                            if (T* dl = t.at(0)) {
                                const T* pl2 = logits.data();
                                const T* pg2 = gt.data();
                                const T s = g[0] / T(n);
                                for (std::size_t i = 0; i < n; ++i) {
                                    const T sig = T(1) / (T(1) + std::exp(-pl2[i]));
                                    dl[i] += s * (pos_weight * pg2[i] * (sig - T(1)) +
                                                  (T(1) - pg2[i]) * sig);
                                }
                            }
                        });
    return out;
}

// Thresholded intersection-over-union; 1.0 when both masks are empty.
template <typename T>
double iou_metric(const Tensor<T>& logits, const Tensor<T>& gt, double threshold = 0.5) {
    detail::check_same_shape(logits, gt, "iou_metric");
    const T* pl = logits.data();
    const T* pg = gt.data();
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < logits.numel(); ++i) {
        const bool pred = 1.0 / (1.0 + std::exp(-double(pl[i]))) >= threshold;
        const bool truth = pg[i] != T(0);
        inter += std::size_t(pred && truth);
        uni += std::size_t(pred || truth);
    }
    return uni == 0 ? 1.0 : double(inter) / double(uni);
}

}  // namespace tbev
