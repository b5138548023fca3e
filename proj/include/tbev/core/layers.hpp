#pragma once

#include <cmath>
#include <string>

#include "tbev/core/ops.hpp"
#include "tbev/core/ops_spatial.hpp"
#include "tbev/core/param.hpp"

namespace tbev {

template <typename T>
struct LinearLayer {
    Tensor<T> weight;  // [out, in]
    Tensor<T> bias;    // [out], optional

    static LinearLayer make(int in, int out, Rng& rng, bool with_bias = true) {
        LinearLayer l;
        const T a = T(std::sqrt(6.0 / double(in + out)));
        l.weight = Tensor<T>::uniform({out, in}, rng, -a, a);
        if (with_bias) l.bias = Tensor<T>::zeros({out});
        return l;
    }

    static LinearLayer make_zero(int in, int out, bool with_bias = true) {
        LinearLayer l;
        l.weight = Tensor<T>::zeros({out, in});
        if (with_bias) l.bias = Tensor<T>::zeros({out});
        return l;
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        return bias.defined() ? linear(x, weight, bias) : linear(x, weight);
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".weight", weight});
        if (bias.defined()) out.push_back({prefix + ".bias", bias});
    }
};

template <typename T>
struct Conv2dLayer {
    Tensor<T> weight;  // [out, in, k, k]
    Tensor<T> bias;    // [out], optional
    int stride = 1;
    int pad = 1;

    static Conv2dLayer make(int in, int out, int k, int stride, int pad, Rng& rng,
                            bool with_bias = true) {
        Conv2dLayer l;
        const T s = T(std::sqrt(2.0 / double(in * k * k)));
        l.weight = Tensor<T>::normal({out, in, k, k}, rng, T(0), s);
        if (with_bias) l.bias = Tensor<T>::zeros({out});
        l.stride = stride;
        l.pad = pad;
        return l;
    }

    Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, pad); }

    void collect(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".weight", weight});
        if (bias.defined()) out.push_back({prefix + ".bias", bias});
    }
};

// Affine parameters for layer/instance normalization.
template <typename T>
struct NormLayer {
    Tensor<T> gamma;
    Tensor<T> beta;

    static NormLayer make(int dim) {
        NormLayer n;
        n.gamma = Tensor<T>::full({dim}, T(1));
        n.beta = Tensor<T>::zeros({dim});
        return n;
    }

    Tensor<T> norm_tokens(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }
    Tensor<T> norm_chw(const Tensor<T>& x) const { return instance_norm_chw(x, gamma, beta); }

    void collect(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".gamma", gamma});
        out.push_back({prefix + ".beta", beta});
    }
};

}  // namespace tbev
