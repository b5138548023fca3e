#pragma once

#include <chrono>
#include <string>
#include <vector>

#include "tbev/base/pretrain.hpp"
#include "tbev/core/optim.hpp"
#include "tbev/eval/evaluator.hpp"
#include "tbev/train/augment.hpp"
#include "tbev/train/metrics.hpp"

// Temporal-module training: 4-frame sequences with gradients on the last
// step only, frozen base model, Adam + cosine annealing, communication and
// spatial augmentation, best checkpoint by evaluation IoU.

namespace tbev {

struct TrainConfig {
    int seq_len = 4;
    int epochs = 40;
    int batch_size = 8;
    double lr = 1e-3;
    double lr_min = 1e-5;
    double comm_aug_prob = 0.3;  // per non-final frame
    bool flip = false;
    bool rot90 = false;
    LossKind loss = LossKind::iou;
    double pos_weight = 2.0;
    std::uint64_t seed = 7;

    void validate() const {
        if (seq_len < 2) throw ConfigError("seq_len must be >= 2");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (comm_aug_prob < 0 || comm_aug_prob > 1)
            throw ConfigError("comm_aug_prob must be in [0,1]");
    }
};

struct SequenceOutcome {
    double loss = 0;
    int history_pushes = 0;
};

// Runs one training sequence: warmup frames in inference mode feeding the
// history buffer, then the final frame with gradients through the temporal
// module and the frozen decoder. Fills `out_grads` when non-null.
inline SequenceOutcome train_sequence_loss(const FrameSequence& seq,
                                           const TemporalFusion<float>& temporal,
                                           const CoopBaseModel<float>& base, LossKind loss_kind,
                                           double pos_weight, GradStore<float>* out_grads) {
    if (seq.size() < 2) throw ArgumentError("training sequence needs at least 2 frames");
    SequenceOutcome outcome;
    HistoryBuffer<float> buf(temporal.cfg.history_len);
    {
        NoGradGuard ng;
        for (int i = 0; i + 1 < seq.size(); ++i) {
            const auto& fr = seq.frames[std::size_t(i)];
            const BEVEmbedding<float> cur = eval_detail::record_embedding(fr.record, fr.source);
            const BEVEmbedding<float> out = temporal.forward(cur, buf);
            advance_history(buf, cur, out, temporal.cfg.history_source);
            ++outcome.history_pushes;
        }
    }
    const auto& last = seq.frames.back();
    const BEVEmbedding<float> cur = eval_detail::record_embedding(last.record, last.source);
    const BEVEmbedding<float> out = temporal.forward(cur, buf);
    Tensor<float> loss = segmentation_loss(loss_kind, base.decode(out.data),
                                           grid_to_tensor<float>(last.record.gt), float(pos_weight));
    outcome.loss = double(loss.item());
    if (!std::isfinite(outcome.loss))
        throw TrainingError("non-finite loss on scenario " +
                            std::to_string(last.record.scenario_id) + " frame " +
                            std::to_string(last.record.frame_index));
    if (out_grads) *out_grads = backward(loss);
    return outcome;
}

struct FitResult {
    std::vector<MetricsRow> log;
    double best_eval_iou = 0;
    int best_epoch = -1;
    std::uint64_t decoder_digest_before = 0;
    std::uint64_t decoder_digest_after = 0;
    std::uint64_t encoder_digest_before = 0;
    std::uint64_t encoder_digest_after = 0;
    long loss_evaluations = 0;  // exactly one per sequence
    long sequences_seen = 0;
};

struct SequenceRef {
    std::uint32_t scenario_id;
    int start;
};

inline std::vector<SequenceRef> training_sequences(const StoreManifest& manifest, int seq_len) {
    std::vector<SequenceRef> refs;
    for (const auto& entry : manifest.scenarios) {
        if (entry.is_eval) continue;
        for (int s = 0; s + seq_len <= entry.n_frames; ++s) refs.push_back({entry.scenario_id, s});
    }
    return refs;
}

// Trains the temporal module on the cached store. The base model's
// parameters never receive updates; their digests are recorded before and
// after as evidence.
inline FitResult fit(StoreReader& reader, TemporalFusion<float>& temporal,
                     CoopBaseModel<float>& base, const TrainConfig& cfg) {
    cfg.validate();
    FitResult res;
    res.decoder_digest_before = param_digest(base.decoder_params());
    res.encoder_digest_before = param_digest(base.encoder_params());

    ParamList<float> params = temporal.params();
    set_trainable(params, true);
    ParamList<float> base_params = base.params();
    set_trainable(base_params, false);

    std::vector<SequenceRef> refs = training_sequences(reader.manifest(), cfg.seq_len);
    if (refs.empty()) throw ArgumentError("fit: store holds no training sequences");

    Adam<float> opt;
    std::vector<std::vector<float>> best;
    const std::vector<SourceSelect> all_fused(std::size_t(cfg.seq_len), SourceSelect::fused);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        Rng rng(derive_seed(cfg.seed, 0x7e4b, std::uint64_t(epoch)));
        for (std::size_t i = refs.size(); i > 1; --i) std::swap(refs[i - 1], refs[rng.below(i)]);
        const float lr = float(cosine_lr(epoch, cfg.epochs, cfg.lr, cfg.lr_min));

        double epoch_loss = 0;
        for (std::size_t beg = 0; beg < refs.size(); beg += std::size_t(cfg.batch_size)) {
            const std::size_t end = std::min(refs.size(), beg + std::size_t(cfg.batch_size));
            GradStore<float> batch_grads;
            for (std::size_t i = beg; i < end; ++i) {
                FrameSequence seq =
                    reader.read_sequence(refs[i].scenario_id, refs[i].start, cfg.seq_len, all_fused);
                seq = comm_augment(std::move(seq), cfg.comm_aug_prob, rng);
                seq = spatial_augment(std::move(seq), cfg.flip, cfg.rot90, rng);
                GradStore<float> g;
                const SequenceOutcome o =
                    train_sequence_loss(seq, temporal, base, cfg.loss, cfg.pos_weight, &g);
                batch_grads.add(g);
                epoch_loss += o.loss;
                ++res.loss_evaluations;
                ++res.sequences_seen;
            }
            batch_grads.scale(1.f / float(end - beg));
            opt.step(params, batch_grads, lr);
        }
        epoch_loss /= double(refs.size());

        const double eval_iou = eval_current(reader, policy_from_module(temporal), base);
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        res.log.push_back({epoch, epoch_loss, eval_iou, secs});
        if (eval_iou > res.best_eval_iou || res.best_epoch < 0) {
            res.best_eval_iou = eval_iou;
            res.best_epoch = epoch;
            best = snapshot_params(params);
        }
    }
    restore_params(params, best);
    res.decoder_digest_after = param_digest(base.decoder_params());
    res.encoder_digest_after = param_digest(base.encoder_params());
    return res;
}

// The instrumented end-to-end reference path for the caching-speedup
// comparison: identical training protocol, but every frame's embeddings are
// re-rasterized and re-encoded from the scenario world instead of read from
// the store.
inline double end_to_end_epoch_seconds(const std::vector<Scenario>& train_scenarios,
                                       const WorldConfig& world, TemporalFusion<float>& temporal,
                                       CoopBaseModel<float>& base, const TrainConfig& cfg,
                                       int max_sequences = -1) {
    cfg.validate();
    ParamList<float> params = temporal.params();
    set_trainable(params, true);
    ParamList<float> base_params = base.params();
    set_trainable(base_params, false);
    Adam<float> opt;

    struct Ref {
        const Scenario* scn;
        int start;
    };
    std::vector<Ref> refs;
    for (const auto& scn : train_scenarios)
        for (int s = 0; s + cfg.seq_len <= scn.n_frames(); ++s) refs.push_back({&scn, s});
    Rng rng(derive_seed(cfg.seed, 0x7e4b, 0));
    for (std::size_t i = refs.size(); i > 1; --i) std::swap(refs[i - 1], refs[rng.below(i)]);
    if (max_sequences >= 0 && refs.size() > std::size_t(max_sequences))
        refs.resize(std::size_t(max_sequences));

    const auto t0 = std::chrono::steady_clock::now();
    const float lr = float(cosine_lr(0, cfg.epochs, cfg.lr, cfg.lr_min));
    for (std::size_t beg = 0; beg < refs.size(); beg += std::size_t(cfg.batch_size)) {
        const std::size_t end = std::min(refs.size(), beg + std::size_t(cfg.batch_size));
        GradStore<float> batch_grads;
        for (std::size_t i = beg; i < end; ++i) {
            const Scenario& scn = *refs[i].scn;
            const CommSchedule sched = comm_schedule(scn, world);
            FrameSequence seq;
            {
                NoGradGuard ng;
                for (int k = 0; k < cfg.seq_len; ++k) {
                    const int f = refs[i].start + k;
                    std::vector<BEVEmbedding<float>> embs;
                    for (int id : sched.available[std::size_t(f)])
                        embs.push_back(base.encode(agent_observation(scn, world, f, id), f,
                                                   EmbeddingSource::fused_multi_cav));
                    SequenceFrame fr;
                    fr.record.scenario_id = scn.scenario_id;
                    fr.record.frame_index = std::uint32_t(f);
                    fr.record.ego_id = scn.ego_id;
                    fr.record.n_cavs_available = int(embs.size());
                    fr.record.fused = base.fuse_agents(embs).data;
                    fr.record.ego_only =
                        base.encode(agent_observation(scn, world, f, scn.ego_id), f,
                                    EmbeddingSource::ego_only)
                            .data;
                    fr.record.gt = ground_truth_map(scn, world, f);
                    fr.source = SourceSelect::fused;
                    seq.frames.push_back(std::move(fr));
                }
            }
            seq = comm_augment(std::move(seq), cfg.comm_aug_prob, rng);
            seq = spatial_augment(std::move(seq), cfg.flip, cfg.rot90, rng);
            GradStore<float> g;
            train_sequence_loss(seq, temporal, base, cfg.loss, cfg.pos_weight, &g);
            batch_grads.add(g);
        }
        batch_grads.scale(1.f / float(end - beg));
        opt.step(params, batch_grads, lr);
    }
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// One cached-path epoch under the same protocol, for the speedup comparison.
inline double cached_epoch_seconds(StoreReader& reader, TemporalFusion<float>& temporal,
                                   CoopBaseModel<float>& base, const TrainConfig& cfg,
                                   int max_sequences = -1) {
    cfg.validate();
    ParamList<float> params = temporal.params();
    set_trainable(params, true);
    ParamList<float> base_params = base.params();
    set_trainable(base_params, false);
    Adam<float> opt;

    std::vector<SequenceRef> refs = training_sequences(reader.manifest(), cfg.seq_len);
    Rng rng(derive_seed(cfg.seed, 0x7e4b, 0));
    for (std::size_t i = refs.size(); i > 1; --i) std::swap(refs[i - 1], refs[rng.below(i)]);
    if (max_sequences >= 0 && refs.size() > std::size_t(max_sequences))
        refs.resize(std::size_t(max_sequences));
    const std::vector<SourceSelect> all_fused(std::size_t(cfg.seq_len), SourceSelect::fused);

    const auto t0 = std::chrono::steady_clock::now();
    const float lr = float(cosine_lr(0, cfg.epochs, cfg.lr, cfg.lr_min));
    for (std::size_t beg = 0; beg < refs.size(); beg += std::size_t(cfg.batch_size)) {
        const std::size_t end = std::min(refs.size(), beg + std::size_t(cfg.batch_size));
        GradStore<float> batch_grads;
        for (std::size_t i = beg; i < end; ++i) {
            FrameSequence seq =
                reader.read_sequence(refs[i].scenario_id, refs[i].start, cfg.seq_len, all_fused);
            seq = comm_augment(std::move(seq), cfg.comm_aug_prob, rng);
            seq = spatial_augment(std::move(seq), cfg.flip, cfg.rot90, rng);
            GradStore<float> g;
            train_sequence_loss(seq, temporal, base, cfg.loss, cfg.pos_weight, &g);
            batch_grads.add(g);
        }
        batch_grads.scale(1.f / float(end - beg));
        opt.step(params, batch_grads, lr);
    }
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace tbev
