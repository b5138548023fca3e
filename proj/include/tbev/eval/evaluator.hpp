#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tbev/base/model.hpp"
#include "tbev/objectives/losses.hpp"
#include "tbev/store/store.hpp"
#include "tbev/temporal/fusion.hpp"

// Evaluation protocols over a cached embedding store: current-frame
// streaming IoU, the communication-failure rollout curves, and the
// no-temporal baselines. All policies run against the same frozen decoder;
// only the embedding path differs.

namespace tbev {

using TemporalFnF =
    std::function<BEVEmbedding<float>(const BEVEmbedding<float>&, const HistoryBuffer<float>&)>;

// How a stream step turns (current, history) into the decoded embedding and
// what re-enters the buffer afterwards.
struct StreamPolicy {
    TemporalFnF fn;
    HistorySource history_source = HistorySource::refined;
    int history_capacity = 1;
};

inline StreamPolicy policy_from_module(const TemporalFusion<float>& temporal) {
    return {[&temporal](const BEVEmbedding<float>& cur,
                        const HistoryBuffer<float>& buf) { return temporal.forward(cur, buf); },
            temporal.cfg.history_source, temporal.cfg.history_len};
}

// The base model: the current embedding passes through untouched.
inline StreamPolicy policy_identity() {
    return {[](const BEVEmbedding<float>& cur, const HistoryBuffer<float>&) { return cur; },
            HistorySource::refined, 1};
}

// Temporal fusion replaced by the elementwise mean of the current embedding
// and the buffer contents; everything else identical.
inline StreamPolicy policy_mean_history(int history_capacity,
                                        HistorySource source = HistorySource::refined) {
    return {[](const BEVEmbedding<float>& cur, const HistoryBuffer<float>& buf) {
                if (buf.empty()) return cur;
                Tensor<float> acc = cur.data;
                for (int i = 0; i < buf.size(); ++i) acc = add(acc, buf.at(i).data);
                return BEVEmbedding<float>{scale(acc, 1.f / float(buf.size() + 1)), cur.frame_index,
                                           EmbeddingSource::temporal_refined};
            },
            source, history_capacity};
}

namespace eval_detail {

inline BEVEmbedding<float> record_embedding(const EmbeddingRecord& rec, SourceSelect sel) {
    return BEVEmbedding<float>{sel == SourceSelect::fused ? rec.fused : rec.ego_only,
                               int(rec.frame_index),
                               sel == SourceSelect::fused ? EmbeddingSource::fused_multi_cav
                                                          : EmbeddingSource::ego_only};
}

}  // namespace eval_detail

// Streaming current-frame IoU over the eval split: full-comms inputs, buffer
// persisting across each scenario, averaged over every frame past the first.
inline double eval_current(StoreReader& reader, const StreamPolicy& policy,
                           const CoopBaseModel<float>& base) {
    NoGradGuard ng;
    double acc = 0;
    long count = 0;
    for (const auto& entry : reader.manifest().scenarios) {
        if (!entry.is_eval) continue;
        HistoryBuffer<float> buf(policy.history_capacity);
        for (int f = 0; f < entry.n_frames; ++f) {
            const EmbeddingRecord rec = reader.read(entry.scenario_id, f);
            const BEVEmbedding<float> cur = eval_detail::record_embedding(rec, SourceSelect::fused);
            const BEVEmbedding<float> out = policy.fn(cur, buf);
            if (f > 0) {
                acc += iou_metric(base.decode(out.data), grid_to_tensor<float>(rec.gt));
                ++count;
            }
            advance_history(buf, cur, out, policy.history_source);
        }
    }
    if (count == 0) throw ArgumentError("eval_current: empty evaluation split");
    return acc / double(count);
}

struct FailureProtocol {
    int warmup_frames = 2;  // qualifying predecessors, each with >= 1 non-ego CAV
    int horizon = 4;        // ego-only future frames after the anchor

    void validate() const {
        if (warmup_frames < 2) throw ConfigError("warmup_frames must be >= 2");
        if (horizon < 1) throw ConfigError("horizon must be >= 1");
    }
};

struct OffsetCurve {
    std::vector<double> mean_iou;  // [0..horizon]
    long n_anchors = 0;
};

namespace eval_detail {

inline bool anchor_ok(StoreReader& reader, const StoreScenarioEntry& entry, int t,
                      const FailureProtocol& proto) {
    if (t < proto.warmup_frames || t + proto.horizon >= entry.n_frames) return false;
    for (int k = 1; k <= proto.warmup_frames; ++k)
        if (reader.read(entry.scenario_id, t - k).n_cavs_available < 2) return false;
    return true;
}

}  // namespace eval_detail

// Communication-failure rollout: stream with fused inputs; at every anchor,
// measure the anchor frame itself, then feed ego-only embeddings for the
// next `horizon` frames while outputs re-enter a copy of the buffer.
inline OffsetCurve eval_failure(StoreReader& reader, const StreamPolicy& policy,
                                const CoopBaseModel<float>& base, const FailureProtocol& proto) {
    proto.validate();
    NoGradGuard ng;
    OffsetCurve curve;
    curve.mean_iou.assign(std::size_t(proto.horizon) + 1, 0.0);
    for (const auto& entry : reader.manifest().scenarios) {
        if (!entry.is_eval) continue;
        HistoryBuffer<float> buf(policy.history_capacity);
        for (int t = 0; t < entry.n_frames; ++t) {
            const EmbeddingRecord rec = reader.read(entry.scenario_id, t);
            const BEVEmbedding<float> cur = eval_detail::record_embedding(rec, SourceSelect::fused);
            const BEVEmbedding<float> out = policy.fn(cur, buf);
            advance_history(buf, cur, out, policy.history_source);
            if (!eval_detail::anchor_ok(reader, entry, t, proto)) continue;

            ++curve.n_anchors;
            curve.mean_iou[0] += iou_metric(base.decode(out.data), grid_to_tensor<float>(rec.gt));
            HistoryBuffer<float> rollout = buf;
            for (int k = 1; k <= proto.horizon; ++k) {
                const EmbeddingRecord frec = reader.read(entry.scenario_id, t + k);
                const BEVEmbedding<float> ego =
                    eval_detail::record_embedding(frec, SourceSelect::ego_only);
                const BEVEmbedding<float> fout = policy.fn(ego, rollout);
                curve.mean_iou[std::size_t(k)] +=
                    iou_metric(base.decode(fout.data), grid_to_tensor<float>(frec.gt));
                advance_history(rollout, ego, fout, policy.history_source);
            }
        }
    }
    if (curve.n_anchors == 0)
        throw ArgumentError("eval_failure: no qualifying anchors in the evaluation split");
    for (auto& v : curve.mean_iou) v /= double(curve.n_anchors);
    return curve;
}

// The no-history reference: the base model decodes the fused embedding at the
// anchor and the raw ego-only embedding on failure frames. Having no state,
// its failure-frame score is pooled across offsets and reported flat.
struct BaselineCurve {
    double fused_at_anchor = 0;
    double ego_only_pooled = 0;
    long n_anchors = 0;

    std::vector<double> as_offsets(int horizon) const {
        std::vector<double> v(std::size_t(horizon) + 1, ego_only_pooled);
        v[0] = fused_at_anchor;
        return v;
    }
};

inline BaselineCurve eval_ego_baseline(StoreReader& reader, const CoopBaseModel<float>& base,
                                       const FailureProtocol& proto) {
    proto.validate();
    NoGradGuard ng;
    BaselineCurve out;
    double ego_acc = 0;
    long ego_count = 0;
    for (const auto& entry : reader.manifest().scenarios) {
        if (!entry.is_eval) continue;
        for (int t = 0; t < entry.n_frames; ++t) {
            if (!eval_detail::anchor_ok(reader, entry, t, proto)) continue;
            ++out.n_anchors;
            const EmbeddingRecord rec = reader.read(entry.scenario_id, t);
            out.fused_at_anchor +=
                iou_metric(base.decode(rec.fused), grid_to_tensor<float>(rec.gt));
            for (int k = 1; k <= proto.horizon; ++k) {
                const EmbeddingRecord frec = reader.read(entry.scenario_id, t + k);
                ego_acc += iou_metric(base.decode(frec.ego_only), grid_to_tensor<float>(frec.gt));
                ++ego_count;
            }
        }
    }
    if (out.n_anchors == 0)
        throw ArgumentError("eval_ego_baseline: no qualifying anchors in the evaluation split");
    out.fused_at_anchor /= double(out.n_anchors);
    out.ego_only_pooled = ego_acc / double(ego_count);
    return out;
}

}  // namespace tbev
