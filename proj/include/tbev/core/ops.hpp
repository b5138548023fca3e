#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "tbev/core/tensor.hpp"

// Differentiable primitives. All tensors are dense row-major; 2-d tensors
// are treated as row-major matrices for the Eigen-backed ops.

namespace tbev {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<MatRM<T>>;
template <typename T>
using MapCM = Eigen::Map<const MatRM<T>>;

namespace detail {

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ArgumentError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                            shape_str(b.shape()));
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<T> y(a.numel());
    const T* pa = a.data();
    const T* pb = b.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = pa[i] + pb[i];
    Tensor<T> out = Tensor<T>::from(a.shape(), std::move(y));
    std::size_t n = a.numel();
    detail::attach_node(out, {a, b}, [n](const T* g, const detail::GradTargets<T>& t) {
        for (int k = 0; k < 2; ++k)
            if (T* dst = t.at(k))
                for (std::size_t i = 0; i < n; ++i) dst[i] += g[i];
    });
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<T> y(a.numel());
    const T* pa = a.data();
    const T* pb = b.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = pa[i] - pb[i];
    Tensor<T> out = Tensor<T>::from(a.shape(), std::move(y));
    std::size_t n = a.numel();
    detail::attach_node(out, {a, b}, [n](const T* g, const detail::GradTargets<T>& t) {
        if (T* da = t.at(0))
            for (std::size_t i = 0; i < n; ++i) da[i] += g[i];
        if (T* db = t.at(1))
            for (std::size_t i = 0; i < n; ++i) db[i] -= g[i];
    });
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<T> y(a.numel());
    const T* pa = a.data();
    const T* pb = b.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = pa[i] * pb[i];
    Tensor<T> out = Tensor<T>::from(a.shape(), std::move(y));
    std::size_t n = a.numel();
    detail::attach_node(out, {a, b}, [n, a, b](const T* g, const detail::GradTargets<T>& t) {
        if (T* da = t.at(0)) {
            const T* pb2 = b.data();
            for (std::size_t i = 0; i < n; ++i) da[i] += g[i] * pb2[i];
        }
        if (T* db = t.at(1)) {
            const T* pa2 = a.data();
            for (std::size_t i = 0; i < n; ++i) db[i] += g[i] * pa2[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> div_el(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "div");
    std::vector<T> y(a.numel());
    const T* pa = a.data();
    const T* pb = b.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = pa[i] / pb[i];
    Tensor<T> out = Tensor<T>::from(a.shape(), std::move(y));
    std::size_t n = a.numel();
    detail::attach_node(out, {a, b}, [n, a, b](const T* g, const detail::GradTargets<T>& t) {
        const T* pa2 = a.data();
        const T* pb2 = b.data();
        if (T* da = t.at(0))
            for (std::size_t i = 0; i < n; ++i) da[i] += g[i] / pb2[i];
        if (T* db = t.at(1))
            for (std::size_t i = 0; i < n; ++i) db[i] -= g[i] * pa2[i] / (pb2[i] * pb2[i]);
    });
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    std::vector<T> y(a.numel());
    const T* pa = a.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = pa[i] * s;
    Tensor<T> out = Tensor<T>::from(a.shape(), std::move(y));
    std::size_t n = a.numel();
    detail::attach_node(out, {a}, [n, s](const T* g, const detail::GradTargets<T>& t) {
        if (T* da = t.at(0))
            for (std::size_t i = 0; i < n; ++i) da[i] += g[i] * s;
    });
    return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
    std::vector<T> y(a.numel());
    const T* pa = a.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = pa[i] + s;
    Tensor<T> out = Tensor<T>::from(a.shape(), std::move(y));
    std::size_t n = a.numel();
    detail::attach_node(out, {a}, [n](const T* g, const detail::GradTargets<T>& t) {
        if (T* da = t.at(0))
            for (std::size_t i = 0; i < n; ++i) da[i] += g[i];
    });
    return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
    T acc = 0;
    const T* pa = a.data();
    for (std::size_t i = 0; i < a.numel(); ++i) acc += pa[i];
    Tensor<T> out = Tensor<T>::from({1}, {acc});
    std::size_t n = a.numel();
    detail::attach_node(out, {a}, [n](const T* g, const detail::GradTargets<T>& t) {
        if (T* da = t.at(0))
            for (std::size_t i = 0; i < n; ++i) da[i] += g[0];
    });
    return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
    return scale(sum_all(a), T(1) / T(a.numel()));
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    std::vector<T> y(a.numel());
    const T* pa = a.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = pa[i] > T(0) ? pa[i] : T(0);
    Tensor<T> out = Tensor<T>::from(a.shape(), std::move(y));
    std::size_t n = a.numel();
    detail::attach_node(out, {a}, [n, a](const T* g, const detail::GradTargets<T>& t) {
        if (T* da = t.at(0)) {
            const T* pa2 = a.data();
            for (std::size_t i = 0; i < n; ++i)
                if (pa2[i] > T(0)) da[i] += g[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    std::vector<T> y(a.numel());
    const T* pa = a.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = T(1) / (T(1) + std::exp(-pa[i]));
    Tensor<T> out = Tensor<T>::from(a.shape(), std::move(y));
    std::size_t n = a.numel();
    const T* yp = out.data();
    detail::attach_node(out, {a}, [n, yp](const T* g, const detail::GradTargets<T>& t) {
        if (T* da = t.at(0))
            for (std::size_t i = 0; i < n; ++i) da[i] += g[i] * yp[i] * (T(1) - yp[i]);
    });
    return out;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
    static constexpr double kInvSqrt2 = 0.7071067811865476;
    static constexpr double kInvSqrt2Pi = 0.3989422804014327;
    std::vector<T> y(a.numel());
    const T* pa = a.data();
    for (std::size_t i = 0; i < y.size(); ++i)
        y[i] = T(0.5) * pa[i] * T(1.0 + std::erf(double(pa[i]) * kInvSqrt2));
    Tensor<T> out = Tensor<T>::from(a.shape(), std::move(y));
    std::size_t n = a.numel();
    detail::attach_node(out, {a}, [n, a](const T* g, const detail::GradTargets<T>& t) {
        if (T* da = t.at(0)) {
            const T* pa2 = a.data();
            for (std::size_t i = 0; i < n; ++i) {
                const double x = double(pa2[i]);
                const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                da[i] += g[i] * T(cdf + x * pdf);
            }
        }
    });
    return out;
}

// y[m x n] = a[m x k] . b[k x n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw ArgumentError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                            shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> y(std::size_t(m) * n);
    MapM<T>(y.data(), m, n).noalias() = MapCM<T>(a.data(), m, k) * MapCM<T>(b.data(), k, n);
    Tensor<T> out = Tensor<T>::from({m, n}, std::move(y));
    detail::attach_node(out, {a, b}, [m, k, n, a, b](const T* g, const detail::GradTargets<T>& t) {
        MapCM<T> G(g, m, n);
        if (T* da = t.at(0)) MapM<T>(da, m, k).noalias() += G * MapCM<T>(b.data(), k, n).transpose();
        if (T* db = t.at(1)) MapM<T>(db, k, n).noalias() += MapCM<T>(a.data(), m, k).transpose() * G;
    });
    return out;
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
    if (a.ndim() != 2) throw ArgumentError("transpose2d: expects 2-d tensor");
    const int m = a.dim(0), n = a.dim(1);
    std::vector<T> y(a.numel());
    MapM<T>(y.data(), n, m) = MapCM<T>(a.data(), m, n).transpose();
    Tensor<T> out = Tensor<T>::from({n, m}, std::move(y));
    detail::attach_node(out, {a}, [m, n](const T* g, const detail::GradTargets<T>& t) {
        if (T* da = t.at(0)) MapM<T>(da, m, n) += MapCM<T>(g, n, m).transpose();
    });
    return out;
}

// y[n x o] = x[n x k] . w[o x k]^T (+ b[o])
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b = {}) {
    if (x.ndim() != 2 || w.ndim() != 2 || x.dim(1) != w.dim(1))
        throw ArgumentError("linear: incompatible shapes " + shape_str(x.shape()) + " , " +
                            shape_str(w.shape()));
    const int n = x.dim(0), k = x.dim(1), o = w.dim(0);
    if (b.defined() && (b.ndim() != 1 || b.dim(0) != o))
        throw ArgumentError("linear: bad bias shape");
    std::vector<T> y(std::size_t(n) * o);
    MapM<T>(y.data(), n, o).noalias() = MapCM<T>(x.data(), n, k) * MapCM<T>(w.data(), o, k).transpose();
    if (b.defined()) {
        const T* pb = b.data();
        for (int i = 0; i < n; ++i) {
            T* row = y.data() + std::size_t(i) * o;
            for (int j = 0; j < o; ++j) row[j] += pb[j];
        }
    }
    Tensor<T> out = Tensor<T>::from({n, o}, std::move(y));
    const bool has_bias = b.defined();
    std::vector<Tensor<T>> ins = has_bias ? std::vector<Tensor<T>>{x, w, b} : std::vector<Tensor<T>>{x, w};
    detail::attach_node(out, std::move(ins),
                        [n, k, o, x, w, has_bias](const T* g, const detail::GradTargets<T>& t) {
                            MapCM<T> G(g, n, o);
                            if (T* dx = t.at(0)) MapM<T>(dx, n, k).noalias() += G * MapCM<T>(w.data(), o, k);
                            if (T* dw = t.at(1))
                                MapM<T>(dw, o, k).noalias() += G.transpose() * MapCM<T>(x.data(), n, k);
                            if (has_bias)
                                if (T* db = t.at(2))
                                    for (int i = 0; i < n; ++i)
                                        for (int j = 0; j < o; ++j) db[j] += g[std::size_t(i) * o + j];
                        });
    return out;
}

// Row-wise softmax of a 2-d tensor (max-subtracted for stability).
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    if (x.ndim() != 2) throw ArgumentError("softmax_rows: expects 2-d tensor");
    const int n = x.dim(0), k = x.dim(1);
    std::vector<T> y(x.numel());
    const T* px = x.data();
    for (int i = 0; i < n; ++i) {
        const T* r = px + std::size_t(i) * k;
        T* o = y.data() + std::size_t(i) * k;
        T mx = r[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, r[j]);
        T s = 0;
        for (int j = 0; j < k; ++j) {
            o[j] = std::exp(r[j] - mx);
            s += o[j];
        }
        const T inv = T(1) / s;
        for (int j = 0; j < k; ++j) o[j] *= inv;
    }
    Tensor<T> out = Tensor<T>::from({n, k}, std::move(y));
    const T* yp = out.data();
    detail::attach_node(out, {x}, [n, k, yp](const T* g, const detail::GradTargets<T>& t) {
        if (T* dx = t.at(0)) {
            for (int i = 0; i < n; ++i) {
                const T* gi = g + std::size_t(i) * k;
                const T* yi = yp + std::size_t(i) * k;
                T dot = 0;
                for (int j = 0; j < k; ++j) dot += gi[j] * yi[j];
                T* di = dx + std::size_t(i) * k;
                for (int j = 0; j < k; ++j) di[j] += yi[j] * (gi[j] - dot);
            }
        }
    });
    return out;
}

// Per-row maximum of a 2-d tensor -> [n]. Gradient routes to the first
// maximal column of each row.
template <typename T>
Tensor<T> rowwise_max(const Tensor<T>& x) {
    if (x.ndim() != 2) throw ArgumentError("rowwise_max: expects 2-d tensor");
    const int n = x.dim(0), k = x.dim(1);
    std::vector<T> y(static_cast<std::size_t>(n));
    auto argmax = std::make_shared<std::vector<int>>(static_cast<std::size_t>(n));
    const T* px = x.data();
    for (int i = 0; i < n; ++i) {
        const T* r = px + std::size_t(i) * k;
        int best = 0;
        for (int j = 1; j < k; ++j)
            if (r[j] > r[best]) best = j;
        (*argmax)[std::size_t(i)] = best;
        y[std::size_t(i)] = r[best];
    }
    Tensor<T> out = Tensor<T>::from({n}, std::move(y));
    detail::attach_node(out, {x}, [n, k, argmax](const T* g, const detail::GradTargets<T>& t) {
        if (T* dx = t.at(0))
            for (int i = 0; i < n; ++i) dx[std::size_t(i) * k + (*argmax)[std::size_t(i)]] += g[i];
    });
    return out;
}

// Stacks K vectors of length n into an [n x K] matrix.
template <typename T>
Tensor<T> stack_cols(const std::vector<Tensor<T>>& xs) {
    if (xs.empty()) throw ArgumentError("stack_cols: empty input list");
    const int n = int(xs[0].numel());
    const int kk = int(xs.size());
    for (const auto& x : xs)
        if (int(x.numel()) != n) throw ArgumentError("stack_cols: length mismatch");
    std::vector<T> y(std::size_t(n) * kk);
    for (int c = 0; c < kk; ++c) {
        const T* p = xs[std::size_t(c)].data();
        for (int i = 0; i < n; ++i) y[std::size_t(i) * kk + c] = p[i];
    }
    Tensor<T> out = Tensor<T>::from({n, kk}, std::move(y));
    detail::attach_node(out, xs, [n, kk](const T* g, const detail::GradTargets<T>& t) {
        for (int c = 0; c < kk; ++c)
            if (T* d = t.at(c))
                for (int i = 0; i < n; ++i) d[i] += g[std::size_t(i) * kk + c];
    });
    return out;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, int c0, int c1) {
    if (x.ndim() != 2 || c0 < 0 || c1 > x.dim(1) || c0 >= c1)
        throw ArgumentError("slice_cols: bad column range");
    const int n = x.dim(0), k = x.dim(1), w = c1 - c0;
    std::vector<T> y(std::size_t(n) * w);
    const T* px = x.data();
    for (int i = 0; i < n; ++i)
        std::copy_n(px + std::size_t(i) * k + c0, w, y.data() + std::size_t(i) * w);
    Tensor<T> out = Tensor<T>::from({n, w}, std::move(y));
    detail::attach_node(out, {x}, [n, k, w, c0](const T* g, const detail::GradTargets<T>& t) {
        if (T* dx = t.at(0))
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < w; ++j) dx[std::size_t(i) * k + c0 + j] += g[std::size_t(i) * w + j];
    });
    return out;
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& xs) {
    if (xs.empty()) throw ArgumentError("concat_cols: empty input list");
    const int n = xs[0].dim(0);
    int total = 0;
    for (const auto& x : xs) {
        if (x.ndim() != 2 || x.dim(0) != n) throw ArgumentError("concat_cols: row mismatch");
        total += x.dim(1);
    }
    std::vector<T> y(std::size_t(n) * total);
    int off = 0;
    std::vector<int> widths;
    for (const auto& x : xs) {
        const int w = x.dim(1);
        const T* p = x.data();
        for (int i = 0; i < n; ++i)
            std::copy_n(p + std::size_t(i) * w, w, y.data() + std::size_t(i) * total + off);
        off += w;
        widths.push_back(w);
    }
    Tensor<T> out = Tensor<T>::from({n, total}, std::move(y));
    detail::attach_node(out, xs, [n, total, widths](const T* g, const detail::GradTargets<T>& t) {
        int o = 0;
        for (std::size_t c = 0; c < widths.size(); ++c) {
            const int w = widths[c];
            if (T* d = t.at(int(c)))
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < w; ++j) d[std::size_t(i) * w + j] += g[std::size_t(i) * total + o + j];
            o += w;
        }
    });
    return out;
}

// y[i,j] = x[i,j] * s[i]
template <typename T>
Tensor<T> scale_rows(const Tensor<T>& x, const Tensor<T>& s) {
    if (x.ndim() != 2 || int(s.numel()) != x.dim(0))
        throw ArgumentError("scale_rows: shape mismatch");
    const int n = x.dim(0), k = x.dim(1);
    std::vector<T> y(x.numel());
    const T* px = x.data();
    const T* ps = s.data();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j) y[std::size_t(i) * k + j] = px[std::size_t(i) * k + j] * ps[i];
    Tensor<T> out = Tensor<T>::from({n, k}, std::move(y));
    detail::attach_node(out, {x, s}, [n, k, x, s](const T* g, const detail::GradTargets<T>& t) {
        if (T* dx = t.at(0)) {
            const T* ps2 = s.data();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < k; ++j) dx[std::size_t(i) * k + j] += g[std::size_t(i) * k + j] * ps2[i];
        }
        if (T* ds = t.at(1)) {
            const T* px2 = x.data();
            for (int i = 0; i < n; ++i) {
                T acc = 0;
                for (int j = 0; j < k; ++j) acc += g[std::size_t(i) * k + j] * px2[std::size_t(i) * k + j];
                ds[i] += acc;
            }
        }
    });
    return out;
}

// Elementwise maximum; gradient routes to the larger input (ties to a).
template <typename T>
Tensor<T> maximum(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "maximum");
    std::vector<T> y(a.numel());
    const T* pa = a.data();
    const T* pb = b.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = pa[i] >= pb[i] ? pa[i] : pb[i];
    Tensor<T> out = Tensor<T>::from(a.shape(), std::move(y));
    std::size_t n = a.numel();
    detail::attach_node(out, {a, b}, [n, a, b](const T* g, const detail::GradTargets<T>& t) {
        const T* pa2 = a.data();
        const T* pb2 = b.data();
        T* da = t.at(0);
        T* db = t.at(1);
        for (std::size_t i = 0; i < n; ++i) {
            if (pa2[i] >= pb2[i]) {
                if (da) da[i] += g[i];
            } else if (db) {
                db[i] += g[i];
            }
        }
    });
    return out;
}

// Per-row sum of a 2-d tensor -> [n].
template <typename T>
Tensor<T> rowwise_sum(const Tensor<T>& x) {
    if (x.ndim() != 2) throw ArgumentError("rowwise_sum: expects 2-d tensor");
    const int n = x.dim(0), k = x.dim(1);
    std::vector<T> y(static_cast<std::size_t>(n), T(0));
    const T* px = x.data();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j) y[std::size_t(i)] += px[std::size_t(i) * k + j];
    Tensor<T> out = Tensor<T>::from({n}, std::move(y));
    detail::attach_node(out, {x}, [n, k](const T* g, const detail::GradTargets<T>& t) {
        if (T* dx = t.at(0))
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < k; ++j) dx[std::size_t(i) * k + j] += g[i];
    });
    return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw ArgumentError("reshape: numel mismatch " + shape_str(x.shape()) + " -> " + shape_str(shape));
    Tensor<T> out = Tensor<T>::from(std::move(shape), std::vector<T>(x.vec()));
    std::size_t n = x.numel();
    detail::attach_node(out, {x}, [n](const T* g, const detail::GradTargets<T>& t) {
        if (T* dx = t.at(0))
            for (std::size_t i = 0; i < n; ++i) dx[i] += g[i];
    });
    return out;
}

// Per-row normalization with learnable affine: rows of x are normalized to
// zero mean / unit variance, then scaled by gamma and shifted by beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
    if (x.ndim() != 2 || int(gamma.numel()) != x.dim(1) || int(beta.numel()) != x.dim(1))
        throw ArgumentError("layer_norm: shape mismatch");
    const int n = x.dim(0), d = x.dim(1);
    std::vector<T> y(x.numel());
    auto xhat = std::make_shared<std::vector<T>>(x.numel());
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n));
    const T* px = x.data();
    const T* pg = gamma.data();
    const T* pb = beta.data();
    for (int i = 0; i < n; ++i) {
        const T* r = px + std::size_t(i) * d;
        T mu = 0;
        for (int j = 0; j < d; ++j) mu += r[j];
        mu /= T(d);
        T var = 0;
        for (int j = 0; j < d; ++j) {
            const T c = r[j] - mu;
            var += c * c;
        }
        var /= T(d);
        const T is = T(1) / std::sqrt(var + eps);
        (*inv_std)[std::size_t(i)] = is;
        T* xh = xhat->data() + std::size_t(i) * d;
        T* o = y.data() + std::size_t(i) * d;
        for (int j = 0; j < d; ++j) {
            xh[j] = (r[j] - mu) * is;
            o[j] = xh[j] * pg[j] + pb[j];
        }
    }
    Tensor<T> out = Tensor<T>::from({n, d}, std::move(y));
    detail::attach_node(out, {x, gamma, beta},
                        [n, d, xhat, inv_std, gamma](const T* g, const detail::GradTargets<T>& t) {
                            const T* pg2 = gamma.data();
                            if (T* dx = t.at(0)) {
                                for (int i = 0; i < n; ++i) {
                                    const T* gi = g + std::size_t(i) * d;
                                    const T* xh = xhat->data() + std::size_t(i) * d;
                                    T m1 = 0, m2 = 0;
                                    for (int j = 0; j < d; ++j) {
                                        const T h = gi[j] * pg2[j];
                                        m1 += h;
                                        m2 += h * xh[j];
                                    }
                                    m1 /= T(d);
                                    m2 /= T(d);
                                    const T is = (*inv_std)[std::size_t(i)];
                                    T* di = dx + std::size_t(i) * d;
                                    for (int j = 0; j < d; ++j)
                                        di[j] += is * (gi[j] * pg2[j] - m1 - xh[j] * m2);
                                }
                            }
                            if (T* dg = t.at(1)) {
                                for (int i = 0; i < n; ++i) {
                                    const T* gi = g + std::size_t(i) * d;
                                    const T* xh = xhat->data() + std::size_t(i) * d;
                                    for (int j = 0; j < d; ++j) dg[j] += gi[j] * xh[j];
                                }
                            }
                            if (T* db = t.at(2)) {
                                for (int i = 0; i < n; ++i) {
                                    const T* gi = g + std::size_t(i) * d;
                                    for (int j = 0; j < d; ++j) db[j] += gi[j];
                                }
                            }
                        });
    return out;
}

// Stacks N same-shape tensors along a new leading axis.
template <typename T>
Tensor<T> stack0(const std::vector<Tensor<T>>& xs) {
    if (xs.empty()) throw ArgumentError("stack0: empty input list");
    const Shape inner = xs[0].shape();
    const std::size_t step = xs[0].numel();
    for (const auto& x : xs)
        if (x.shape() != inner) throw ArgumentError("stack0: shape mismatch");
    Shape shape;
    shape.push_back(int(xs.size()));
    shape.insert(shape.end(), inner.begin(), inner.end());
    std::vector<T> y(step * xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i)
        std::copy_n(xs[i].data(), step, y.data() + i * step);
    Tensor<T> out = Tensor<T>::from(std::move(shape), std::move(y));
    detail::attach_node(out, xs, [step, cnt = xs.size()](const T* g, const detail::GradTargets<T>& t) {
        for (std::size_t i = 0; i < cnt; ++i)
            if (T* d = t.at(int(i)))
                for (std::size_t j = 0; j < step; ++j) d[j] += g[i * step + j];
    });
    return out;
}

// [C,H,W] -> [H*W, C] token layout used by the attention stack.
template <typename T>
Tensor<T> chw_to_tokens(const Tensor<T>& x) {
    if (x.ndim() != 3) throw ArgumentError("chw_to_tokens: expects 3-d tensor");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int p = h * w;
    std::vector<T> y(x.numel());
    const T* px = x.data();
    for (int cc = 0; cc < c; ++cc)
        for (int i = 0; i < p; ++i) y[std::size_t(i) * c + cc] = px[std::size_t(cc) * p + i];
    Tensor<T> out = Tensor<T>::from({p, c}, std::move(y));
    detail::attach_node(out, {x}, [c, p](const T* g, const detail::GradTargets<T>& t) {
        if (T* dx = t.at(0))
            for (int cc = 0; cc < c; ++cc)
                for (int i = 0; i < p; ++i) dx[std::size_t(cc) * p + i] += g[std::size_t(i) * c + cc];
    });
    return out;
}

// [H*W, C] -> [C,H,W]
template <typename T>
Tensor<T> tokens_to_chw(const Tensor<T>& x, int h, int w) {
    if (x.ndim() != 2 || x.dim(0) != h * w) throw ArgumentError("tokens_to_chw: shape mismatch");
    const int c = x.dim(1);
    const int p = h * w;
    std::vector<T> y(x.numel());
    const T* px = x.data();
    for (int i = 0; i < p; ++i)
        for (int cc = 0; cc < c; ++cc) y[std::size_t(cc) * p + i] = px[std::size_t(i) * c + cc];
    Tensor<T> out = Tensor<T>::from({c, h, w}, std::move(y));
    detail::attach_node(out, {x}, [c, p](const T* g, const detail::GradTargets<T>& t) {
        if (T* dx = t.at(0))
            for (int i = 0; i < p; ++i)
                for (int cc = 0; cc < c; ++cc) dx[std::size_t(i) * c + cc] += g[std::size_t(cc) * p + i];
    });
    return out;
}

}  // namespace tbev
