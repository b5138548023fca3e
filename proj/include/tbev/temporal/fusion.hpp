#pragma once

#include <vector>

#include "tbev/bev/importance.hpp"
#include "tbev/temporal/block.hpp"
#include "tbev/temporal/history.hpp"

namespace tbev {

// The initial fused query: joint importance fusion over the (H+1)-member set
// {history..., current}.
template <typename T>
BEVEmbedding<T> initial_query(const BEVEmbedding<T>& current, const HistoryBuffer<T>& history,
                              const ImportanceEstimator<T>& est) {
    if (history.empty()) throw ArgumentError("initial_query: history is empty (bypass applies)");
    std::vector<BEVEmbedding<T>> members;
    members.reserve(std::size_t(history.size()) + 1);
    for (int i = 0; i < history.size(); ++i) {
        check_embedding_shapes_match(current, history.at(i), "initial_query");
        members.push_back(history.at(i));
    }
    members.push_back(current);
    return importance_fuse(members, est);
}

// Importance-weighted blend of the current embedding with the temporal
// output (pairwise relative importance).
template <typename T>
BEVEmbedding<T> feature_aggregate(const BEVEmbedding<T>& current, const BEVEmbedding<T>& temporal_out,
                                  const ImportanceEstimator<T>& est) {
    check_embedding_shapes_match(current, temporal_out, "feature_aggregate");
    return importance_fuse(std::vector<BEVEmbedding<T>>{current, temporal_out}, est);
}

// The temporal module: initial fused query, N recurrent attention blocks
// cross-attending over [history..., current], then feature aggregation.
// An empty history bypasses the module and returns the input untouched.
template <typename T>
struct TemporalFusion {
    TemporalConfig cfg;
    int channels = 0;
    ImportanceEstimator<T> query_importance;
    ImportanceEstimator<T> agg_importance;
    std::vector<AttentionBlock<T>> blocks;

    static TemporalFusion make(int channels, const TemporalConfig& cfg, Rng& rng) {
        cfg.validate(channels);
        TemporalFusion t;
        t.cfg = cfg;
        t.channels = channels;
        t.query_importance = ImportanceEstimator<T>::make(channels, cfg.importance_channels, rng);
        t.agg_importance = ImportanceEstimator<T>::make(channels, cfg.importance_channels, rng);
        t.blocks.reserve(std::size_t(cfg.num_blocks));
        for (int i = 0; i < cfg.num_blocks; ++i)
            t.blocks.push_back(AttentionBlock<T>::make(channels, cfg, rng));
        return t;
    }

    BEVEmbedding<T> forward(const BEVEmbedding<T>& current, const HistoryBuffer<T>& history) const {
        if (history.empty()) return current;
        if (current.channels() != channels)
            throw ArgumentError("temporal_forward: embedding has " + std::to_string(current.channels()) +
                                " channels, module built for " + std::to_string(channels));

        std::vector<BEVEmbedding<T>> members;
        members.reserve(std::size_t(history.size()) + 1);
        for (int i = 0; i < history.size(); ++i) {
            check_embedding_shapes_match(current, history.at(i), "temporal_forward");
            members.push_back(history.at(i));
        }
        members.push_back(current);

        const int h = current.height(), w = current.width();
        Tensor<T> query;
        if (cfg.use_query_importance) {
            query = importance_fuse(members, query_importance).data;
        } else {
            Tensor<T> acc = members[0].data;
            for (std::size_t i = 1; i < members.size(); ++i) acc = add(acc, members[i].data);
            query = scale(acc, T(1) / T(members.size()));
        }

        // The cross-attention frame set has a fixed arity of H+1; when the
        // buffer holds fewer than H entries the oldest is repeated so the
        // most recent history stays in the newest slot.
        std::vector<Tensor<T>> frame_grids;
        frame_grids.reserve(std::size_t(cfg.history_len) + 1);
        for (int i = 0; i < cfg.history_len; ++i) {
            const int idx = std::max(0, i - (cfg.history_len - history.size()));
            frame_grids.push_back(history.at(idx).data);
        }
        frame_grids.push_back(current.data);

        Tensor<T> tokens = chw_to_tokens(query);
        for (const auto& block : blocks) tokens = block.forward(tokens, frame_grids, h, w);
        BEVEmbedding<T> temporal_out{tokens_to_chw(tokens, h, w), current.frame_index,
                                     EmbeddingSource::temporal_refined};

        if (!cfg.use_feature_aggregation) return temporal_out;
        BEVEmbedding<T> out = feature_aggregate(current, temporal_out, agg_importance);
        out.source = EmbeddingSource::temporal_refined;
        return out;
    }

    void collect(ParamList<T>& out) {
        query_importance.collect("temporal.query_importance", out);
        agg_importance.collect("temporal.agg_importance", out);
        for (std::size_t i = 0; i < blocks.size(); ++i)
            blocks[i].collect("temporal.blocks." + std::to_string(i), out);
    }

    ParamList<T> params() {
        ParamList<T> out;
        collect(out);
        return out;
    }
};

}  // namespace tbev
