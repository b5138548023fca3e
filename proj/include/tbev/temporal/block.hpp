#pragma once

#include <cmath>
#include <vector>

#include "tbev/core/layers.hpp"
#include "tbev/temporal/deformable.hpp"

namespace tbev {

// Full multi-head self-attention over the flattened H*W token grid.
template <typename T>
struct SelfAttention {
    LinearLayer<T> q_proj, k_proj, v_proj, out_proj;
    int channels = 0;
    int heads = 0;

    static SelfAttention make(int channels, int heads, Rng& rng) {
        SelfAttention s;
        s.channels = channels;
        s.heads = heads;
        s.q_proj = LinearLayer<T>::make(channels, channels, rng);
        // Key bias is a no-op direction under softmax attention; leave it out.
        s.k_proj = LinearLayer<T>::make(channels, channels, rng, false);
        s.v_proj = LinearLayer<T>::make(channels, channels, rng);
        s.out_proj = LinearLayer<T>::make(channels, channels, rng);
        return s;
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        const int hd = channels / heads;
        Tensor<T> q = q_proj.forward(x);
        Tensor<T> k = k_proj.forward(x);
        Tensor<T> v = v_proj.forward(x);
        const T inv_scale = T(1) / T(std::sqrt(double(hd)));
        std::vector<Tensor<T>> ctx;
        ctx.reserve(std::size_t(heads));
        for (int a = 0; a < heads; ++a) {
            Tensor<T> qa = scale(slice_cols(q, a * hd, (a + 1) * hd), inv_scale);
            Tensor<T> ka = slice_cols(k, a * hd, (a + 1) * hd);
            Tensor<T> va = slice_cols(v, a * hd, (a + 1) * hd);
            Tensor<T> att = softmax_rows(matmul(qa, transpose2d(ka)));
            ctx.push_back(matmul(att, va));
        }
        return out_proj.forward(concat_cols(ctx));
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        q_proj.collect(prefix + ".q_proj", out);
        k_proj.collect(prefix + ".k_proj", out);
        v_proj.collect(prefix + ".v_proj", out);
        out_proj.collect(prefix + ".out_proj", out);
    }
};

template <typename T>
struct FeedForward {
    LinearLayer<T> lin1, lin2;

    static FeedForward make(int channels, int hidden, Rng& rng) {
        FeedForward f;
        f.lin1 = LinearLayer<T>::make(channels, hidden, rng);
        f.lin2 = LinearLayer<T>::make(hidden, channels, rng);
        return f;
    }

    Tensor<T> forward(const Tensor<T>& x) const { return lin2.forward(gelu(lin1.forward(x))); }

    void collect(const std::string& prefix, ParamList<T>& out) {
        lin1.collect(prefix + ".lin1", out);
        lin2.collect(prefix + ".lin2", out);
    }
};

// One temporal-fusion block: self-attention, deformable cross-attention over
// the frame set, and a feed-forward layer, each with residual-then-normalize.
template <typename T>
struct AttentionBlock {
    SelfAttention<T> self_attn;
    DeformableCrossAttention<T> cross_attn;
    FeedForward<T> ffn;
    NormLayer<T> norm1, norm2, norm3;

    static AttentionBlock make(int channels, const TemporalConfig& cfg, Rng& rng) {
        AttentionBlock b;
        b.self_attn = SelfAttention<T>::make(channels, cfg.num_heads, rng);
        b.cross_attn = DeformableCrossAttention<T>::make(channels, cfg.num_heads, cfg.num_keypoints,
                                                         cfg.history_len + 1, rng);
        b.ffn = FeedForward<T>::make(channels, cfg.resolved_ffn_dim(channels), rng);
        b.norm1 = NormLayer<T>::make(channels);
        b.norm2 = NormLayer<T>::make(channels);
        b.norm3 = NormLayer<T>::make(channels);
        return b;
    }

    Tensor<T> forward(const Tensor<T>& x0, const std::vector<Tensor<T>>& frame_grids, int h,
                      int w) const {
        Tensor<T> x = norm1.norm_tokens(add(x0, self_attn.forward(x0)));
        x = norm2.norm_tokens(add(x, cross_attn.forward(x, frame_grids, h, w)));
        x = norm3.norm_tokens(add(x, ffn.forward(x)));
        return x;
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        self_attn.collect(prefix + ".self_attn", out);
        cross_attn.collect(prefix + ".cross_attn", out);
        ffn.collect(prefix + ".ffn", out);
        norm1.collect(prefix + ".norm1", out);
        norm2.collect(prefix + ".norm2", out);
        norm3.collect(prefix + ".norm3", out);
    }
};

}  // namespace tbev
