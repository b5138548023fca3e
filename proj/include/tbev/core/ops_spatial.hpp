#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "tbev/core/ops.hpp"

// Spatial primitives on [C,H,W] grids: convolution, per-channel
// normalization, bilinear upsampling, fractional-coordinate sampling and the
// fused sample-and-aggregate step of deformable attention.

namespace tbev {

// 2-d convolution over a single [Cin,H,W] image via im2col + GEMM.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int pad) {
    if (x.ndim() != 3 || w.ndim() != 4 || x.dim(0) != w.dim(1))
        throw ArgumentError("conv2d: incompatible shapes " + shape_str(x.shape()) + " , " +
                            shape_str(w.shape()));
    const int cin = x.dim(0), h = x.dim(1), ww = x.dim(2);
    const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int ho = (h + 2 * pad - kh) / stride + 1;
    const int wo = (ww + 2 * pad - kw) / stride + 1;
    if (ho <= 0 || wo <= 0) throw ArgumentError("conv2d: output collapses to zero size");
    if (b.defined() && int(b.numel()) != cout) throw ArgumentError("conv2d: bad bias shape");

    const int krows = cin * kh * kw;
    const int ocols = ho * wo;
    auto cols = std::make_shared<std::vector<T>>(std::size_t(krows) * ocols, T(0));
    const T* px = x.data();
    for (int c = 0; c < cin; ++c)
        for (int ki = 0; ki < kh; ++ki)
            for (int kj = 0; kj < kw; ++kj) {
                T* dst = cols->data() + std::size_t((c * kh + ki) * kw + kj) * ocols;
                for (int oi = 0; oi < ho; ++oi) {
                    const int yi = oi * stride - pad + ki;
                    if (yi < 0 || yi >= h) continue;
                    const T* src = px + (std::size_t(c) * h + yi) * ww;
                    for (int oj = 0; oj < wo; ++oj) {
                        const int xj = oj * stride - pad + kj;
                        if (xj >= 0 && xj < ww) dst[oi * wo + oj] = src[xj];
                    }
                }
            }

    std::vector<T> y(std::size_t(cout) * ocols);
    MapM<T>(y.data(), cout, ocols).noalias() =
        MapCM<T>(w.data(), cout, krows) * MapCM<T>(cols->data(), krows, ocols);
    if (b.defined()) {
        const T* pb = b.data();
        for (int c = 0; c < cout; ++c) {
            T* row = y.data() + std::size_t(c) * ocols;
            for (int i = 0; i < ocols; ++i) row[i] += pb[c];
        }
    }
    Tensor<T> out = Tensor<T>::from({cout, ho, wo}, std::move(y));
    const bool has_bias = b.defined();
    std::vector<Tensor<T>> ins = has_bias ? std::vector<Tensor<T>>{x, w, b} : std::vector<Tensor<T>>{x, w};
    detail::attach_node(
        out, std::move(ins),
        [=](const T* g, const detail::GradTargets<T>& t) {
            MapCM<T> G(g, cout, ocols);
            if (T* dw = t.at(1))
                MapM<T>(dw, cout, krows).noalias() += G * MapCM<T>(cols->data(), krows, ocols).transpose();
            if (has_bias)
                if (T* db = t.at(2))
                    for (int c = 0; c < cout; ++c)
                        for (int i = 0; i < ocols; ++i) db[c] += g[std::size_t(c) * ocols + i];
            if (T* dx = t.at(0)) {
                std::vector<T> gcols(std::size_t(krows) * ocols);
                MapM<T>(gcols.data(), krows, ocols).noalias() =
                    MapCM<T>(w.data(), cout, krows).transpose() * G;
                for (int c = 0; c < cin; ++c)
                    for (int ki = 0; ki < kh; ++ki)
                        for (int kj = 0; kj < kw; ++kj) {
                            const T* src = gcols.data() + std::size_t((c * kh + ki) * kw + kj) * ocols;
                            for (int oi = 0; oi < ho; ++oi) {
                                const int yi = oi * stride - pad + ki;
                                if (yi < 0 || yi >= h) continue;
                                T* dst = dx + (std::size_t(c) * h + yi) * ww;
                                for (int oj = 0; oj < wo; ++oj) {
                                    const int xj = oj * stride - pad + kj;
                                    if (xj >= 0 && xj < ww) dst[xj] += src[oi * wo + oj];
                                }
                            }
                        }
            }
        });
    return out;
}

// v[k] replicated over n rows -> [n x k]
template <typename T>
Tensor<T> broadcast_rows(const Tensor<T>& v, int n) {
    const int k = int(v.numel());
    std::vector<T> y(std::size_t(n) * k);
    const T* pv = v.data();
    for (int i = 0; i < n; ++i) std::copy_n(pv, k, y.data() + std::size_t(i) * k);
    Tensor<T> out = Tensor<T>::from({n, k}, std::move(y));
    detail::attach_node(out, {v}, [n, k](const T* g, const detail::GradTargets<T>& t) {
        if (T* dv = t.at(0))
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < k; ++j) dv[j] += g[std::size_t(i) * k + j];
    });
    return out;
}

// Per-channel normalization over the spatial extent with learnable affine
// (gamma/beta indexed by channel).
template <typename T>
Tensor<T> instance_norm_chw(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                            T eps = T(1e-5)) {
    if (x.ndim() != 3 || int(gamma.numel()) != x.dim(0) || int(beta.numel()) != x.dim(0))
        throw ArgumentError("instance_norm_chw: shape mismatch");
    const int c = x.dim(0), p = x.dim(1) * x.dim(2);
    // Rows of the [C, H*W] view are per-channel spatial vectors.
    Tensor<T> flat = reshape(x, {c, p});
    Tensor<T> normed = layer_norm(flat, Tensor<T>::full({p}, T(1)), Tensor<T>::zeros({p}), eps);
    Tensor<T> scaled = scale_rows(normed, gamma);
    Tensor<T> shifted = add(scaled, transpose2d(broadcast_rows(beta, p)));
    return reshape(shifted, x.shape());
}

// Doubles the spatial resolution with bilinear interpolation (half-pixel
// centers, border-clamped).
template <typename T>
Tensor<T> upsample_bilinear2x(const Tensor<T>& x) {
    if (x.ndim() != 3) throw ArgumentError("upsample_bilinear2x: expects 3-d tensor");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int h2 = h * 2, w2 = w * 2;
    // Precompute per-axis taps: source index pair and weight.
    auto taps = [](int out_n, int in_n) {
        std::vector<std::tuple<int, int, T>> v(static_cast<std::size_t>(out_n));
        for (int o = 0; o < out_n; ++o) {
            double s = (o + 0.5) / 2.0 - 0.5;
            s = std::min(std::max(s, 0.0), double(in_n - 1));
            const int i0 = int(std::floor(s));
            const int i1 = std::min(i0 + 1, in_n - 1);
            v[std::size_t(o)] = {i0, i1, T(s - i0)};
        }
        return v;
    };
    const auto ty = taps(h2, h);
    const auto tx = taps(w2, w);
    std::vector<T> y(std::size_t(c) * h2 * w2);
    const T* px = x.data();
    for (int cc = 0; cc < c; ++cc) {
        const T* plane = px + std::size_t(cc) * h * w;
        T* oplane = y.data() + std::size_t(cc) * h2 * w2;
        for (int oi = 0; oi < h2; ++oi) {
            const auto [y0, y1, fy] = ty[std::size_t(oi)];
            for (int oj = 0; oj < w2; ++oj) {
                const auto [x0, x1, fx] = tx[std::size_t(oj)];
                const T v00 = plane[y0 * w + x0], v01 = plane[y0 * w + x1];
                const T v10 = plane[y1 * w + x0], v11 = plane[y1 * w + x1];
                oplane[oi * w2 + oj] = (T(1) - fy) * ((T(1) - fx) * v00 + fx * v01) +
                                       fy * ((T(1) - fx) * v10 + fx * v11);
            }
        }
    }
    Tensor<T> out = Tensor<T>::from({c, h2, w2}, std::move(y));
    detail::attach_node(out, {x}, [c, h, w, h2, w2, ty, tx](const T* g, const detail::GradTargets<T>& t) {
        if (T* dx = t.at(0)) {
            for (int cc = 0; cc < c; ++cc) {
                T* dplane = dx + std::size_t(cc) * h * w;
                const T* gplane = g + std::size_t(cc) * h2 * w2;
                for (int oi = 0; oi < h2; ++oi) {
                    const auto [y0, y1, fy] = ty[std::size_t(oi)];
                    for (int oj = 0; oj < w2; ++oj) {
                        const auto [x0, x1, fx] = tx[std::size_t(oj)];
                        const T gv = gplane[oi * w2 + oj];
                        dplane[y0 * w + x0] += (T(1) - fy) * (T(1) - fx) * gv;
                        dplane[y0 * w + x1] += (T(1) - fy) * fx * gv;
                        dplane[y1 * w + x0] += fy * (T(1) - fx) * gv;
                        dplane[y1 * w + x1] += fy * fx * gv;
                    }
                }
            }
        }
    });
    return out;
}

// Scalar bilinear read of one channel plane with zero padding outside
// [0,W-1] x [0,H-1]. Shared by grid sampling and its oracle-facing wrapper.
template <typename T>
T bilinear_at(const T* plane, int h, int w, T xx, T yy) {
    const int x0 = int(std::floor(double(xx)));
    const int y0 = int(std::floor(double(yy)));
    const T fx = xx - T(x0);
    const T fy = yy - T(y0);
    auto tap = [&](int yi, int xi) -> T {
        return (xi >= 0 && xi < w && yi >= 0 && yi < h) ? plane[yi * w + xi] : T(0);
    };
    return (T(1) - fy) * ((T(1) - fx) * tap(y0, x0) + fx * tap(y0, x0 + 1)) +
           fy * ((T(1) - fx) * tap(y0 + 1, x0) + fx * tap(y0 + 1, x0 + 1));
}

// Samples value[C,H,W] at P fractional (x, y) positions -> [P, C], with
// gradients to both the value grid and the positions.
template <typename T>
Tensor<T> grid_sample_points(const Tensor<T>& value, const Tensor<T>& pts) {
    if (value.ndim() != 3 || pts.ndim() != 2 || pts.dim(1) != 2)
        throw ArgumentError("grid_sample_points: bad shapes");
    const int c = value.dim(0), h = value.dim(1), w = value.dim(2);
    const int p = pts.dim(0);
    std::vector<T> y(std::size_t(p) * c);
    const T* pv = value.data();
    const T* pp = pts.data();
    for (int i = 0; i < p; ++i) {
        const T xx = pp[2 * i], yy = pp[2 * i + 1];
        for (int cc = 0; cc < c; ++cc)
            y[std::size_t(i) * c + cc] = bilinear_at(pv + std::size_t(cc) * h * w, h, w, xx, yy);
    }
    Tensor<T> out = Tensor<T>::from({p, c}, std::move(y));
    detail::attach_node(out, {value, pts}, [c, h, w, p, value, pts](const T* g,
                                                                    const detail::GradTargets<T>& t) {
        T* dv = t.at(0);
        T* dp = t.at(1);
        const T* pv2 = value.data();
        const T* pp2 = pts.data();
        for (int i = 0; i < p; ++i) {
            const T xx = pp2[2 * i], yy = pp2[2 * i + 1];
            const int x0 = int(std::floor(double(xx)));
            const int y0 = int(std::floor(double(yy)));
            const T fx = xx - T(x0);
            const T fy = yy - T(y0);
            const bool in00 = x0 >= 0 && x0 < w && y0 >= 0 && y0 < h;
            const bool in01 = x0 + 1 >= 0 && x0 + 1 < w && y0 >= 0 && y0 < h;
            const bool in10 = x0 >= 0 && x0 < w && y0 + 1 >= 0 && y0 + 1 < h;
            const bool in11 = x0 + 1 >= 0 && x0 + 1 < w && y0 + 1 >= 0 && y0 + 1 < h;
            T gx = 0, gy = 0;
            for (int cc = 0; cc < c; ++cc) {
                const T gv = g[std::size_t(i) * c + cc];
                const T* plane = pv2 + std::size_t(cc) * h * w;
                const T v00 = in00 ? plane[y0 * w + x0] : T(0);
                const T v01 = in01 ? plane[y0 * w + x0 + 1] : T(0);
                const T v10 = in10 ? plane[(y0 + 1) * w + x0] : T(0);
                const T v11 = in11 ? plane[(y0 + 1) * w + x0 + 1] : T(0);
                if (dv) {
                    T* dplane = dv + std::size_t(cc) * h * w;
                    if (in00) dplane[y0 * w + x0] += (T(1) - fy) * (T(1) - fx) * gv;
                    if (in01) dplane[y0 * w + x0 + 1] += (T(1) - fy) * fx * gv;
                    if (in10) dplane[(y0 + 1) * w + x0] += fy * (T(1) - fx) * gv;
                    if (in11) dplane[(y0 + 1) * w + x0 + 1] += fy * fx * gv;
                }
                gx += gv * ((T(1) - fy) * (v01 - v00) + fy * (v11 - v10));
                gy += gv * ((T(1) - fx) * (v10 - v00) + fx * (v11 - v01));
            }
            if (dp) {
                dp[2 * i] += gx;
                dp[2 * i + 1] += gy;
            }
        }
    });
    return out;
}

// Fused sampling/aggregation core of deformable attention.
//   values   [F, C, H, W]  per-frame value projections, C = heads * head_dim
//   pos      [Q*A*F*M, 2]  sample positions, row index ((q*A+a)*F+f)*M+m
//   weights  [Q*A, F*M]    attention weights (softmaxed over F*M per row)
// Output [Q, C]: head a of query q aggregates its weighted samples from the
// head's channel slice; heads sit in consecutive column blocks.
template <typename T>
Tensor<T> deformable_aggregate(const Tensor<T>& values, const Tensor<T>& pos, const Tensor<T>& weights,
                               int heads, int keypoints) {
    if (values.ndim() != 4 || pos.ndim() != 2 || pos.dim(1) != 2 || weights.ndim() != 2)
        throw ArgumentError("deformable_aggregate: bad shapes");
    const int f = values.dim(0), c = values.dim(1), h = values.dim(2), w = values.dim(3);
    const int a = heads, m = keypoints;
    if (c % a != 0) throw ArgumentError("deformable_aggregate: channels not divisible by heads");
    const int hd = c / a;
    if (weights.dim(1) != f * m) throw ArgumentError("deformable_aggregate: weight columns != F*M");
    const int q = weights.dim(0) / a;
    if (weights.dim(0) != q * a || pos.dim(0) != q * a * f * m)
        throw ArgumentError("deformable_aggregate: row counts inconsistent");

    const std::size_t plane = std::size_t(h) * w;
    const std::size_t frame_sz = std::size_t(c) * plane;
    std::vector<T> y(std::size_t(q) * c, T(0));
    const T* pv = values.data();
    const T* pp = pos.data();
    const T* pw = weights.data();
    for (int qi = 0; qi < q; ++qi)
        for (int ai = 0; ai < a; ++ai) {
            const std::size_t row = std::size_t(qi) * a + ai;
            T* dst = y.data() + std::size_t(qi) * c + std::size_t(ai) * hd;
            for (int fi = 0; fi < f; ++fi)
                for (int mi = 0; mi < m; ++mi) {
                    const std::size_t pidx = (row * f + fi) * m + mi;
                    const T wgt = pw[row * std::size_t(f * m) + fi * m + mi];
                    const T xx = pp[2 * pidx], yy = pp[2 * pidx + 1];
                    const T* base = pv + std::size_t(fi) * frame_sz + std::size_t(ai) * hd * plane;
                    for (int d = 0; d < hd; ++d)
                        dst[d] += wgt * bilinear_at(base + std::size_t(d) * plane, h, w, xx, yy);
                }
        }
    Tensor<T> out = Tensor<T>::from({q, c}, std::move(y));
    detail::attach_node(out, {values, pos, weights}, [=](const T* g, const detail::GradTargets<T>& t) {
        T* dval = t.at(0);
        T* dpos = t.at(1);
        T* dw = t.at(2);
        const T* pv2 = values.data();
        const T* pp2 = pos.data();
        const T* pw2 = weights.data();
        for (int qi = 0; qi < q; ++qi)
            for (int ai = 0; ai < a; ++ai) {
                const std::size_t row = std::size_t(qi) * a + ai;
                const T* gvec = g + std::size_t(qi) * c + std::size_t(ai) * hd;
                for (int fi = 0; fi < f; ++fi)
                    for (int mi = 0; mi < m; ++mi) {
                        const std::size_t pidx = (row * f + fi) * m + mi;
                        const T wgt = pw2[row * std::size_t(f * m) + fi * m + mi];
                        const T xx = pp2[2 * pidx], yy = pp2[2 * pidx + 1];
                        const int x0 = int(std::floor(double(xx)));
                        const int y0 = int(std::floor(double(yy)));
                        const T fx = xx - T(x0);
                        const T fy = yy - T(y0);
                        const bool in00 = x0 >= 0 && x0 < w && y0 >= 0 && y0 < h;
                        const bool in01 = x0 + 1 >= 0 && x0 + 1 < w && y0 >= 0 && y0 < h;
                        const bool in10 = x0 >= 0 && x0 < w && y0 + 1 >= 0 && y0 + 1 < h;
                        const bool in11 = x0 + 1 >= 0 && x0 + 1 < w && y0 + 1 >= 0 && y0 + 1 < h;
                        const T* base = pv2 + std::size_t(fi) * frame_sz + std::size_t(ai) * hd * plane;
                        T* dbase = dval ? dval + std::size_t(fi) * frame_sz + std::size_t(ai) * hd * plane
                                        : nullptr;
                        T wsum = 0, gx = 0, gy = 0;
                        for (int d = 0; d < hd; ++d) {
                            const T* pl = base + std::size_t(d) * plane;
                            const T v00 = in00 ? pl[y0 * w + x0] : T(0);
                            const T v01 = in01 ? pl[y0 * w + x0 + 1] : T(0);
                            const T v10 = in10 ? pl[(y0 + 1) * w + x0] : T(0);
                            const T v11 = in11 ? pl[(y0 + 1) * w + x0 + 1] : T(0);
                            const T sampled = (T(1) - fy) * ((T(1) - fx) * v00 + fx * v01) +
                                              fy * ((T(1) - fx) * v10 + fx * v11);
                            const T gv = gvec[d];
                            wsum += gv * sampled;
                            gx += gv * ((T(1) - fy) * (v01 - v00) + fy * (v11 - v10));
                            gy += gv * ((T(1) - fx) * (v10 - v00) + fx * (v11 - v01));
                            if (dbase) {
                                T* dpl = dbase + std::size_t(d) * plane;
                                const T wg = wgt * gv;
                                if (in00) dpl[y0 * w + x0] += (T(1) - fy) * (T(1) - fx) * wg;
                                if (in01) dpl[y0 * w + x0 + 1] += (T(1) - fy) * fx * wg;
                                if (in10) dpl[(y0 + 1) * w + x0] += fy * (T(1) - fx) * wg;
                                if (in11) dpl[(y0 + 1) * w + x0 + 1] += fy * fx * wg;
                            }
                        }
                        if (dw) dw[row * std::size_t(f * m) + fi * m + mi] += wsum;
                        if (dpos) {
                            dpos[2 * pidx] += wgt * gx;
                            dpos[2 * pidx + 1] += wgt * gy;
                        }
                    }
            }
    });
    return out;
}

}  // namespace tbev
