#pragma once

#include <string>
#include <vector>

#include "tbev/bev/embedding.hpp"
#include "tbev/core/layers.hpp"

// Importance-guided fusion of a set of BEV embeddings:
//   map_n    = sigmoid(max over O generator channels of gen(E_n))
//   weights  = per-pixel softmax over the N maps
//   fused    = sum_n weights_n (broadcast over channels) * E_n

namespace tbev {

// Per-pixel linear generator C -> O with bias, shared across the member set.
template <typename T>
struct ImportanceEstimator {
    LinearLayer<T> generator;
    int in_channels = 0;
    int out_channels = 0;

    static ImportanceEstimator make(int channels, int out_channels, Rng& rng) {
        if (out_channels < 1) throw ConfigError("importance estimator needs out_channels >= 1");
        ImportanceEstimator e;
        e.generator = LinearLayer<T>::make(channels, out_channels, rng);
        e.in_channels = channels;
        e.out_channels = out_channels;
        return e;
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        generator.collect(prefix + ".generator", out);
    }
};

// Importance map of one embedding: [H,W] with entries in (0,1).
template <typename T>
Tensor<T> importance_map(const BEVEmbedding<T>& emb, const ImportanceEstimator<T>& est) {
    if (emb.channels() != est.in_channels)
        throw ConfigError("importance_map: estimator expects " + std::to_string(est.in_channels) +
                          " channels, embedding has " + std::to_string(emb.channels()));
    Tensor<T> tokens = chw_to_tokens(emb.data);                 // [P,C]
    Tensor<T> gen = est.generator.forward(tokens);              // [P,O]
    Tensor<T> mx = rowwise_max(gen);                            // [P]
    Tensor<T> sig = sigmoid(mx);                                // [P]
    return reshape(sig, {emb.height(), emb.width()});
}

// Per-pixel softmax across N importance maps. Output n sums to one with the
// others at every pixel.
template <typename T>
std::vector<Tensor<T>> relative_importance(const std::vector<Tensor<T>>& maps) {
    if (maps.empty()) throw ArgumentError("relative_importance: empty map list");
    const Shape s = maps[0].shape();
    for (const auto& m : maps)
        if (m.shape() != s)
            throw ArgumentError("relative_importance: map shape mismatch " + shape_str(m.shape()) +
                                " vs " + shape_str(s));
    const int p = int(maps[0].numel());
    std::vector<Tensor<T>> flat;
    flat.reserve(maps.size());
    for (const auto& m : maps) flat.push_back(reshape(m, {p}));
    Tensor<T> stacked = stack_cols(flat);     // [P,N]
    Tensor<T> weights = softmax_rows(stacked);  // [P,N]
    std::vector<Tensor<T>> out;
    out.reserve(maps.size());
    for (std::size_t n = 0; n < maps.size(); ++n)
        out.push_back(reshape(slice_cols(weights, int(n), int(n) + 1), s));
    return out;
}

// Importance-fused embedding over the member set (shared estimator).
template <typename T>
BEVEmbedding<T> importance_fuse(const std::vector<BEVEmbedding<T>>& embs,
                                const ImportanceEstimator<T>& est) {
    if (embs.empty()) throw ArgumentError("importance_fuse: empty embedding list");
    for (const auto& e : embs) check_embedding_shapes_match(embs[0], e, "importance_fuse");
    const int h = embs[0].height(), w = embs[0].width();
    const int p = h * w;

    std::vector<Tensor<T>> maps;
    maps.reserve(embs.size());
    for (const auto& e : embs) maps.push_back(importance_map(e, est));
    std::vector<Tensor<T>> weights = relative_importance(maps);

    Tensor<T> acc;
    for (std::size_t n = 0; n < embs.size(); ++n) {
        Tensor<T> tokens = chw_to_tokens(embs[n].data);                    // [P,C]
        Tensor<T> weighted = scale_rows(tokens, reshape(weights[n], {p}));  // [P,C]
        acc = acc.defined() ? add(acc, weighted) : weighted;
    }
    BEVEmbedding<T> out;
    out.data = tokens_to_chw(acc, h, w);
    out.frame_index = embs.back().frame_index;
    out.source = embs.back().source;
    return out;
}

}  // namespace tbev
