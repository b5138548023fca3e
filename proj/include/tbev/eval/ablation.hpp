#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tbev/eval/report.hpp"
#include "tbev/train/trainer.hpp"

// The ablation matrix: component analysis (feature aggregation x query
// importance), history length, augmentation level, loss function, and the
// mean-of-history temporal replacement. One row per cell and offset.

namespace tbev {

struct AblationCell {
    std::string name;
    bool use_feature_aggregation = true;
    bool use_query_importance = true;
    int history_len = 1;
    double comm_aug_prob = 0.3;
    bool flip = false;
    bool rot90 = false;
    LossKind loss = LossKind::iou;
    bool mean_temporal = false;  // replace the module by the history mean
};

enum class AblationAxis { component, history, augmentation, loss, temporal };

inline AblationAxis ablation_axis_from_string(const std::string& s) {
    if (s == "component") return AblationAxis::component;
    if (s == "history") return AblationAxis::history;
    if (s == "augmentation") return AblationAxis::augmentation;
    if (s == "loss") return AblationAxis::loss;
    if (s == "temporal") return AblationAxis::temporal;
    throw ConfigError("unknown ablation axis '" + s + "'");
}

// One-at-a-time cells around the default, per the requested axes. The
// default cell itself is shared (its checkpoint is trained once).
inline std::vector<AblationCell> ablation_cells(const std::vector<AblationAxis>& axes,
                                                const TemporalConfig& base_tc,
                                                const TrainConfig& base_tr) {
    AblationCell def;
    def.name = "default";
    def.use_feature_aggregation = base_tc.use_feature_aggregation;
    def.use_query_importance = base_tc.use_query_importance;
    def.history_len = base_tc.history_len;
    def.comm_aug_prob = base_tr.comm_aug_prob;
    def.flip = base_tr.flip;
    def.rot90 = base_tr.rot90;
    def.loss = base_tr.loss;

    std::vector<AblationCell> cells{def};
    auto push = [&](AblationCell c, std::string name) {
        c.name = std::move(name);
        cells.push_back(std::move(c));
    };
    for (AblationAxis axis : axes) {
        switch (axis) {
            case AblationAxis::component: {
                AblationCell c = def;
                c.use_feature_aggregation = false;
                c.use_query_importance = false;
                push(c, "fa0_qi0");
                c = def;
                c.use_feature_aggregation = true;
                c.use_query_importance = false;
                push(c, "fa1_qi0");
                c = def;
                c.use_feature_aggregation = false;
                c.use_query_importance = true;
                push(c, "fa0_qi1");
                break;
            }
            case AblationAxis::history:
                for (int h : {1, 2, 3, 4}) {
                    if (h == def.history_len) continue;
                    AblationCell c = def;
                    c.history_len = h;
                    push(c, "history" + std::to_string(h));
                }
                break;
            case AblationAxis::augmentation: {
                AblationCell c = def;
                c.comm_aug_prob = 0.0;
                c.flip = false;
                c.rot90 = false;
                push(c, "no_aug");
                c = def;
                c.flip = true;
                c.rot90 = false;
                push(c, "comm_flip");
                c = def;
                c.flip = true;
                c.rot90 = true;
                push(c, "comm_flip_rot");
                break;
            }
            case AblationAxis::loss: {
                AblationCell c = def;
                c.loss = def.loss == LossKind::iou ? LossKind::weighted_ce : LossKind::iou;
                push(c, c.loss == LossKind::iou ? "loss_iou" : "loss_wce");
                break;
            }
            case AblationAxis::temporal: {
                AblationCell c = def;
                c.mean_temporal = true;
                push(c, "mean_history");
                break;
            }
        }
    }
    return cells;
}

struct AblationOutcome {
    std::string cell;
    OffsetCurve curve;
};

// Trains (or loads) each cell's temporal module and evaluates its failure
// curve. Checkpoints land under `checkpoint_dir/<cell>.tbc`; a missing
// checkpoint with training disabled is an error naming the cell.
inline std::vector<AblationOutcome> run_ablations(
    StoreReader& reader, CoopBaseModel<float>& base, const TemporalConfig& base_tc,
    const TrainConfig& base_tr, const FailureProtocol& proto,
    const std::vector<AblationCell>& cells, const std::filesystem::path& checkpoint_dir,
    bool train_missing, std::uint64_t init_seed) {
    std::filesystem::create_directories(checkpoint_dir);
    const int channels = reader.manifest().channels;
    std::vector<AblationOutcome> outcomes;
    for (const auto& cell : cells) {
        if (cell.mean_temporal) {
            const StreamPolicy policy =
                policy_mean_history(cell.history_len, base_tc.history_source);
            outcomes.push_back({cell.name, eval_failure(reader, policy, base, proto)});
            continue;
        }
        TemporalConfig tc = base_tc;
        tc.history_len = cell.history_len;
        tc.use_feature_aggregation = cell.use_feature_aggregation;
        tc.use_query_importance = cell.use_query_importance;
        TrainConfig tr = base_tr;
        tr.comm_aug_prob = cell.comm_aug_prob;
        tr.flip = cell.flip;
        tr.rot90 = cell.rot90;
        tr.loss = cell.loss;

        Rng init(init_seed);
        TemporalFusion<float> temporal = TemporalFusion<float>::make(channels, tc, init);
        const auto ckpt = checkpoint_dir / (cell.name + ".tbc");
        if (std::filesystem::exists(ckpt)) {
            ParamList<float> params = temporal.params();
            load_into(ckpt, params);
        } else if (train_missing) {
            FitResult fit_res = fit(reader, temporal, base, tr);
            save_checkpoint(ckpt, temporal.params());
            write_metrics_csv(checkpoint_dir / (cell.name + "_metrics.csv"), fit_res.log);
        } else {
            throw MissingDependencyError("ablation cell '" + cell.name +
                                         "' has no checkpoint and training is disabled");
        }
        outcomes.push_back({cell.name, eval_failure(reader, policy_from_module(temporal), base, proto)});
    }
    return outcomes;
}

}  // namespace tbev
