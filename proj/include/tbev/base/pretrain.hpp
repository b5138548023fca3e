#pragma once

#include <chrono>
#include <string>
#include <vector>

#include "tbev/base/model.hpp"
#include "tbev/core/optim.hpp"
#include "tbev/objectives/losses.hpp"
#include "tbev/train/metrics.hpp"
#include "tbev/world/comm.hpp"

// Single-frame pretraining of the cooperative base model on fused
// observations; best checkpoint by evaluation IoU.

namespace tbev {

enum class LossKind { iou, weighted_ce };

inline const char* to_string(LossKind k) { return k == LossKind::iou ? "iou" : "weighted_ce"; }

inline LossKind loss_from_string(const std::string& s) {
    if (s == "iou") return LossKind::iou;
    if (s == "weighted_ce") return LossKind::weighted_ce;
    throw ConfigError("unknown loss '" + s + "' (expected iou|weighted_ce)");
}

template <typename T>
Tensor<T> segmentation_loss(LossKind kind, const Tensor<T>& logits, const Tensor<T>& gt,
                            T pos_weight) {
    return kind == LossKind::iou ? iou_loss(logits, gt)
                                 : weighted_cross_entropy(logits, gt, pos_weight);
}

struct PretrainConfig {
    int epochs = 10;
    int batch_size = 8;
    double lr = 1e-3;
    double lr_min = 1e-5;
    int frame_stride = 2;       // training frames per scenario: 0, stride, ...
    int eval_frame_stride = 4;  // frames used for the per-epoch eval IoU
    LossKind loss = LossKind::iou;
    double pos_weight = 2.0;
    std::uint64_t seed = 7;
};

// Pre-rasterized single-frame sample: per-scheduled-agent observations plus
// the ego-centered ground truth.
struct FrameSample {
    std::vector<BinaryGrid> agent_obs;  // schedule order
    int ego_slot = 0;                   // index of the ego observation above
    BinaryGrid gt;
};

inline std::vector<FrameSample> rasterize_frames(const std::vector<Scenario>& scenarios,
                                                 const WorldConfig& cfg, int frame_stride) {
    std::vector<FrameSample> out;
    for (const auto& scn : scenarios) {
        const CommSchedule sched = comm_schedule(scn, cfg);
        for (int f = 0; f < scn.n_frames(); f += frame_stride) {
            FrameSample s;
            const auto& avail = sched.available[std::size_t(f)];
            s.agent_obs.reserve(avail.size());
            for (std::size_t i = 0; i < avail.size(); ++i) {
                if (avail[i] == scn.ego_id) s.ego_slot = int(i);
                s.agent_obs.push_back(agent_observation(scn, cfg, f, avail[i]));
            }
            s.gt = ground_truth_map(scn, cfg, f);
            out.push_back(std::move(s));
        }
    }
    return out;
}

template <typename T>
Tensor<T> base_forward_sample(const CoopBaseModel<T>& model, const FrameSample& s, bool ego_only) {
    std::vector<BEVEmbedding<T>> embs;
    if (ego_only) {
        embs.push_back(model.encode(s.agent_obs[std::size_t(s.ego_slot)], 0, EmbeddingSource::ego_only));
    } else {
        embs.reserve(s.agent_obs.size());
        for (const auto& o : s.agent_obs)
            embs.push_back(model.encode(o, 0, EmbeddingSource::fused_multi_cav));
    }
    return model.decode(model.fuse_agents(embs).data);
}

template <typename T>
double base_eval_iou(const CoopBaseModel<T>& model, const std::vector<FrameSample>& samples,
                     bool ego_only) {
    NoGradGuard ng;
    double acc = 0;
    for (const auto& s : samples)
        acc += iou_metric(base_forward_sample(model, s, ego_only), grid_to_tensor<T>(s.gt));
    return samples.empty() ? 0.0 : acc / double(samples.size());
}

struct PretrainResult {
    double best_eval_iou = 0;
    int best_epoch = -1;
    std::vector<MetricsRow> log;
};

// Adam + cosine annealing over shuffled single frames; the model is left
// holding the best-eval-IoU parameters.
template <typename T>
PretrainResult pretrain_base(CoopBaseModel<T>& model, const std::vector<Scenario>& train_scenarios,
                             const std::vector<Scenario>& eval_scenarios, const WorldConfig& world,
                             const PretrainConfig& cfg) {
    const auto train_samples = rasterize_frames(train_scenarios, world, cfg.frame_stride);
    const auto eval_samples = rasterize_frames(eval_scenarios, world, cfg.eval_frame_stride);
    if (train_samples.empty()) throw ArgumentError("pretrain_base: no training frames");

    ParamList<T> params = model.params();
    set_trainable(params, true);
    Adam<T> opt;
    PretrainResult res;
    std::vector<std::vector<T>> best;

    std::vector<std::size_t> order(train_samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        Rng shuffle_rng(derive_seed(cfg.seed, 0x9a5e, std::uint64_t(epoch)));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.below(i)]);
        const T lr = T(cosine_lr(epoch, cfg.epochs, cfg.lr, cfg.lr_min));

        double epoch_loss = 0;
        std::size_t step = 0;
        for (std::size_t beg = 0; beg < order.size(); beg += std::size_t(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), beg + std::size_t(cfg.batch_size));
            GradStore<T> batch_grads;
            double batch_loss = 0;
            for (std::size_t i = beg; i < end; ++i) {
                const FrameSample& s = train_samples[order[i]];
                Tensor<T> loss = segmentation_loss(cfg.loss, base_forward_sample(model, s, false),
                                                   grid_to_tensor<T>(s.gt), T(cfg.pos_weight));
                const double lv = double(loss.item());
                if (!std::isfinite(lv))
                    throw TrainingError("pretraining diverged: non-finite loss at epoch " +
                                        std::to_string(epoch) + " step " + std::to_string(step));
                batch_loss += lv;
                GradStore<T> g = backward(loss);
                batch_grads.add(g);
            }
            batch_grads.scale(T(1) / T(end - beg));
            opt.step(params, batch_grads, lr);
            epoch_loss += batch_loss;
            ++step;
        }
        epoch_loss /= double(order.size());

        const double eval_iou = base_eval_iou(model, eval_samples, false);
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
    return res;
}

}  // namespace tbev
