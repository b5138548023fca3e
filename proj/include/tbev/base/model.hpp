#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tbev/bev/embedding.hpp"
#include "tbev/core/layers.hpp"
#include "tbev/world/observe.hpp"

// Toy cooperative base model: per-agent convolutional encoder, parameter-free
// multi-agent fusion (mean / max / dot-product attention), and a decoder of
// three upsampling stages ending in a one-channel logit map.

namespace tbev {

enum class FusionKind { mean, max, attn };

inline const char* to_string(FusionKind k) {
    switch (k) {
        case FusionKind::mean: return "mean";
        case FusionKind::max: return "max";
        default: return "attn";
    }
}

inline FusionKind fusion_from_string(const std::string& s) {
    if (s == "mean") return FusionKind::mean;
    if (s == "max") return FusionKind::max;
    if (s == "attn") return FusionKind::attn;
    throw ConfigError("unknown fusion kind '" + s + "' (expected mean|max|attn)");
}

struct BaseConfig {
    int channels = 64;   // C
    int obs_cells = 64;  // H_out = W_out
    int downsample = 4;  // embedding grid = obs_cells / downsample (1 or 4)
    FusionKind fusion = FusionKind::attn;

    int embed_cells() const { return obs_cells / downsample; }

    void validate() const {
        if (channels < 4 || channels % 4 != 0) throw ConfigError("channels must be a multiple of 4");
        if (downsample != 1 && downsample != 4) throw ConfigError("downsample must be 1 or 4");
        if (obs_cells % downsample != 0) throw ConfigError("obs_cells must be divisible by downsample");
    }
};

template <typename T>
struct CoopBaseModel {
    BaseConfig cfg;
    Conv2dLayer<T> enc1, enc2, enc3;
    Conv2dLayer<T> dec1, dec2, dec3, dec_out;
    NormLayer<T> dn1, dn2, dn3;

    static CoopBaseModel make(const BaseConfig& cfg, Rng& rng) {
        cfg.validate();
        const int c = cfg.channels;
        const int s = cfg.downsample == 4 ? 2 : 1;
        CoopBaseModel m;
        m.cfg = cfg;
        m.enc1 = Conv2dLayer<T>::make(1, c / 2, 3, s, 1, rng);
        m.enc2 = Conv2dLayer<T>::make(c / 2, c, 3, s, 1, rng);
        m.enc3 = Conv2dLayer<T>::make(c, c, 3, 1, 1, rng);
        m.dec1 = Conv2dLayer<T>::make(c, c / 2, 3, 1, 1, rng);
        m.dec2 = Conv2dLayer<T>::make(c / 2, c / 4, 3, 1, 1, rng);
        m.dec3 = Conv2dLayer<T>::make(c / 4, c / 4, 3, 1, 1, rng);
        m.dec_out = Conv2dLayer<T>::make(c / 4, 1, 3, 1, 1, rng);
        m.dn1 = NormLayer<T>::make(c / 2);
        m.dn2 = NormLayer<T>::make(c / 4);
        m.dn3 = NormLayer<T>::make(c / 4);
        return m;
    }

    // One observation plane [1,G,G] -> embedding grid [C,G/ds,G/ds].
    Tensor<T> encode_plane(const Tensor<T>& obs) const {
        if (obs.ndim() != 3 || obs.dim(0) != 1 || obs.dim(1) != cfg.obs_cells ||
            obs.dim(2) != cfg.obs_cells)
            throw ArgumentError("encode: observation shape " + shape_str(obs.shape()) +
                                " does not match configured grid " + std::to_string(cfg.obs_cells));
        Tensor<T> h = relu(enc1.forward(obs));
        h = relu(enc2.forward(h));
        return enc3.forward(h);
    }

    BEVEmbedding<T> encode(const BinaryGrid& obs, int frame_index, EmbeddingSource source) const {
        return BEVEmbedding<T>{encode_plane(grid_to_obs_tensor<T>(obs)), frame_index, source};
    }

    // Fuses per-agent embeddings into one grid. All kinds return the single
    // input unchanged for a one-agent list.
    BEVEmbedding<T> fuse_agents(const std::vector<BEVEmbedding<T>>& embs) const {
        if (embs.empty()) throw ArgumentError("fuse_agents: empty embedding list");
        for (const auto& e : embs) check_embedding_shapes_match(embs[0], e, "fuse_agents");
        BEVEmbedding<T> out;
        out.frame_index = embs[0].frame_index;
        out.source = embs.size() == 1 ? embs[0].source : EmbeddingSource::fused_multi_cav;
        switch (cfg.fusion) {
            case FusionKind::mean: {
                Tensor<T> acc = embs[0].data;
                for (std::size_t i = 1; i < embs.size(); ++i) acc = add(acc, embs[i].data);
                out.data = scale(acc, T(1) / T(embs.size()));
                return out;
            }
            case FusionKind::max: {
                Tensor<T> acc = embs[0].data;
                for (std::size_t i = 1; i < embs.size(); ++i) acc = maximum(acc, embs[i].data);
                out.data = acc;
                return out;
            }
            case FusionKind::attn:
            default: {
                // Scaled dot-product across the agent axis per location with
                // a pooled (mean) query; permutation-invariant.
                const int h = embs[0].height(), w = embs[0].width();
                const int p = h * w;
                std::vector<Tensor<T>> toks;
                toks.reserve(embs.size());
                for (const auto& e : embs) toks.push_back(chw_to_tokens(e.data));
                Tensor<T> q = toks[0];
                for (std::size_t i = 1; i < toks.size(); ++i) q = add(q, toks[i]);
                q = scale(q, T(1) / T(toks.size()));
                std::vector<Tensor<T>> scores;
                const T inv = T(1) / T(std::sqrt(double(embs[0].channels())));
                for (auto& tk : toks) scores.push_back(scale(rowwise_sum(mul(q, tk)), inv));
                Tensor<T> wts = softmax_rows(stack_cols(scores));  // [P,N]
                Tensor<T> acc;
                for (std::size_t n = 0; n < toks.size(); ++n) {
                    Tensor<T> part =
                        scale_rows(toks[n], reshape(slice_cols(wts, int(n), int(n) + 1), {p}));
                    acc = acc.defined() ? add(acc, part) : part;
                }
                out.data = tokens_to_chw(acc, h, w);
                return out;
            }
        }
    }

    // Embedding [C,h,w] -> segmentation logits [G,G].
    Tensor<T> decode(const Tensor<T>& emb) const {
        const int e = cfg.embed_cells();
        if (emb.ndim() != 3 || emb.dim(0) != cfg.channels || emb.dim(1) != e || emb.dim(2) != e)
            throw ArgumentError("decode: embedding shape " + shape_str(emb.shape()) +
                                " does not match decoder contract");
        const bool up = cfg.downsample == 4;
        Tensor<T> h = emb;
        if (up) h = upsample_bilinear2x(h);
        h = relu(dn1.norm_chw(dec1.forward(h)));
        if (up) h = upsample_bilinear2x(h);
        h = relu(dn2.norm_chw(dec2.forward(h)));
        h = relu(dn3.norm_chw(dec3.forward(h)));  // refinement stage, no upsampling
        Tensor<T> logits = dec_out.forward(h);
        return reshape(logits, {cfg.obs_cells, cfg.obs_cells});
    }

    void collect_encoder(ParamList<T>& out) {
        enc1.collect("base.enc1", out);
        enc2.collect("base.enc2", out);
        enc3.collect("base.enc3", out);
    }

    void collect_decoder(ParamList<T>& out) {
        dec1.collect("base.dec1", out);
        dec2.collect("base.dec2", out);
        dec3.collect("base.dec3", out);
        dec_out.collect("base.dec_out", out);
        dn1.collect("base.dn1", out);
        dn2.collect("base.dn2", out);
        dn3.collect("base.dn3", out);
    }

    ParamList<T> params() {
        ParamList<T> out;
        collect_encoder(out);
        collect_decoder(out);
        return out;
    }

    ParamList<T> decoder_params() {
        ParamList<T> out;
        collect_decoder(out);
        return out;
    }

    ParamList<T> encoder_params() {
        ParamList<T> out;
        collect_encoder(out);
        return out;
    }
};

}  // namespace tbev
