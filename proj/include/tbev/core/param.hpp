#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tbev/core/tensor.hpp"

namespace tbev {

template <typename T>
struct Param {
    std::string name;
    Tensor<T> tensor;
};

template <typename T>
using ParamList = std::vector<Param<T>>;

template <typename T>
void set_trainable(ParamList<T>& params, bool v) {
    for (auto& p : params) p.tensor.set_trainable(v);
}

inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

template <typename T>
std::vector<std::vector<T>> snapshot_params(const ParamList<T>& params) {
    std::vector<std::vector<T>> out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back(p.tensor.vec());
    return out;
}

template <typename T>
void restore_params(ParamList<T>& params, const std::vector<std::vector<T>>& snap) {
    if (snap.size() != params.size()) throw ArgumentError("parameter snapshot arity mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (snap[i].size() != params[i].tensor.numel())
            throw ArgumentError("parameter snapshot size mismatch for " + params[i].name);
        std::copy(snap[i].begin(), snap[i].end(), params[i].tensor.data());
    }
}

// Order- and name-sensitive digest over the float32 representation of the
// parameters; the pipeline's frozen-weights checks compare these.
template <typename T>
std::uint64_t param_digest(const ParamList<T>& params) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& p : params) {
        h = fnv1a64(p.name.data(), p.name.size(), h);
        for (std::size_t i = 0; i < p.tensor.numel(); ++i) {
            const float v = float(p.tensor.at(i));
            h = fnv1a64(&v, sizeof(float), h);
        }
    }
    return h;
}

}  // namespace tbev
