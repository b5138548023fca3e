#pragma once

#include <vector>

#include "tbev/bev/embedding.hpp"
#include "tbev/core/layers.hpp"
#include "tbev/temporal/config.hpp"

namespace tbev {

// Bilinear read of an embedding at a fractional pixel position; coordinates
// outside [0,W-1] x [0,H-1] fall back to zero padding. Total function.
template <typename T>
std::vector<T> bilinear_sample(const BEVEmbedding<T>& emb, T x, T y) {
    const int c = emb.channels(), h = emb.height(), w = emb.width();
    std::vector<T> out(static_cast<std::size_t>(c));
    const T* p = emb.data.data();
    for (int cc = 0; cc < c; ++cc)
        out[std::size_t(cc)] = bilinear_at(p + std::size_t(cc) * h * w, h, w, x, y);
    return out;
}

// Single-scale deformable cross-attention over F = H+1 frames. Every query
// pixel uses its own coordinates as the reference point; per head and frame,
// M offset keypoints are predicted from the query feature. Offset
// projections start at exactly zero so the first forward pass samples at the
// reference points.
template <typename T>
struct DeformableCrossAttention {
    LinearLayer<T> value_proj;   // C -> C
    LinearLayer<T> out_proj;     // W_a: C -> C
    LinearLayer<T> weight_proj;  // W_b: C -> A*F*M
    LinearLayer<T> offset_proj;  // C -> A*F*M*2, zero-initialized
    int channels = 0;
    int heads = 0;
    int keypoints = 0;
    int frames = 0;  // H + 1

    static DeformableCrossAttention make(int channels, int heads, int keypoints, int frames, Rng& rng) {
        DeformableCrossAttention d;
        d.channels = channels;
        d.heads = heads;
        d.keypoints = keypoints;
        d.frames = frames;
        d.value_proj = LinearLayer<T>::make(channels, channels, rng);
        d.out_proj = LinearLayer<T>::make(channels, channels, rng);
        d.weight_proj = LinearLayer<T>::make(channels, heads * frames * keypoints, rng);
        d.offset_proj = LinearLayer<T>::make_zero(channels, heads * frames * keypoints * 2);
        return d;
    }

    // Constant per-query reference points replicated over (head, frame,
    // keypoint): row ((p*A+a)*F+f)*M+m holds (x=p%W, y=p/W).
    static Tensor<T> reference_points(int h, int w, int afm) {
        const int p = h * w;
        std::vector<T> r(std::size_t(p) * afm * 2);
        std::size_t k = 0;
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                for (int rep = 0; rep < afm; ++rep) {
                    r[k++] = T(j);
                    r[k++] = T(i);
                }
        return Tensor<T>::from({p * afm, 2}, std::move(r));
    }

    // query: [P, C] tokens; frame_grids: F embeddings [C,H,W], ordered
    // oldest ... current. Residual connections are the caller's business.
    Tensor<T> forward(const Tensor<T>& query, const std::vector<Tensor<T>>& frame_grids, int h,
                      int w) const {
        if (int(frame_grids.size()) != frames)
            throw ArgumentError("deformable_cross_attention: expected " + std::to_string(frames) +
                                " frames, got " + std::to_string(frame_grids.size()));
        const int p = h * w;
        if (query.ndim() != 2 || query.dim(0) != p || query.dim(1) != channels)
            throw ArgumentError("deformable_cross_attention: bad query shape " +
                                shape_str(query.shape()));
        for (const auto& f : frame_grids)
            if (f.ndim() != 3 || f.dim(0) != channels || f.dim(1) != h || f.dim(2) != w)
                throw ArgumentError("deformable_cross_attention: bad frame shape " +
                                    shape_str(f.shape()));
        const int afm = heads * frames * keypoints;

        Tensor<T> offsets = reshape(offset_proj.forward(query), {p * afm, 2});
        Tensor<T> pos = add(offsets, reference_points(h, w, afm));
        Tensor<T> logits = reshape(weight_proj.forward(query), {p * heads, frames * keypoints});
        Tensor<T> weights = softmax_rows(logits);

        std::vector<Tensor<T>> values;
        values.reserve(frame_grids.size());
        for (const auto& f : frame_grids)
            values.push_back(tokens_to_chw(value_proj.forward(chw_to_tokens(f)), h, w));
        Tensor<T> agg = deformable_aggregate(stack0(values), pos, weights, heads, keypoints);
        return out_proj.forward(agg);
    }

    // Raw predicted offsets for one query token matrix, [P*A*F*M, 2].
    Tensor<T> predict_offsets(const Tensor<T>& query) const {
        const int afm = heads * frames * keypoints;
        return reshape(offset_proj.forward(query), {query.dim(0) * afm, 2});
    }

    // Softmaxed attention weights, [P*A, F*M] (rows sum to one).
    Tensor<T> predict_weights(const Tensor<T>& query) const {
        return softmax_rows(
            reshape(weight_proj.forward(query), {query.dim(0) * heads, frames * keypoints}));
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        value_proj.collect(prefix + ".value_proj", out);
        out_proj.collect(prefix + ".out_proj", out);
        weight_proj.collect(prefix + ".weight_proj", out);
        offset_proj.collect(prefix + ".offset_proj", out);
    }
};

}  // namespace tbev
