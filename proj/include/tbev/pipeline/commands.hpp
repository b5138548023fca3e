#pragma once

#include <filesystem>
#include <iostream>
#include <json.hpp>

#include "tbev/eval/ablation.hpp"
#include "tbev/eval/plot.hpp"
#include "tbev/pipeline/config.hpp"
#include "tbev/world/generate.hpp"
#include "tbev/world/scenario_io.hpp"

// Pipeline commands behind the CLI subcommands. Each command reads its
// upstream artifacts, writes its own output directory atomically, and leaves
// the resolved config fingerprint beside the outputs.

namespace tbev {

struct Paths {
    std::filesystem::path root;

    std::filesystem::path scenarios() const { return root / "scenarios"; }
    std::filesystem::path base() const { return root / "base"; }
    std::filesystem::path store() const { return root / "store"; }
    std::filesystem::path temporal() const { return root / "temporal"; }
    std::filesystem::path eval() const { return root / "eval"; }
    std::filesystem::path ablate() const { return root / "ablate"; }
};

namespace pipeline_detail {

inline void require_exists(const std::filesystem::path& p, const std::string& producer) {
    if (!std::filesystem::exists(p))
        throw MissingDependencyError("missing " + p.string() + "; run `" + producer + "` first");
}

inline constexpr std::uint64_t kPurposeWorld = 0x77;
inline constexpr std::uint64_t kPurposeBaseInit = 0xb1;
inline constexpr std::uint64_t kPurposeTemporalInit = 0x71;

}  // namespace pipeline_detail

// ---- gen -----------------------------------------------------------------

inline std::vector<SplitScenario> generate_split_scenarios(const RunConfig& cfg) {
    const WorldConfig world = cfg.world();
    const int n_train = cfg.get_int("data.train_scenarios");
    const int n_eval = cfg.get_int("data.eval_scenarios");
    if (n_train < 1 || n_eval < 1) throw ConfigError("need at least one scenario per split");
    std::vector<SplitScenario> out;
    for (int i = 0; i < n_train + n_eval; ++i) {
        const bool is_eval = i >= n_train;
        out.push_back({generate_scenario(
                           world, derive_seed(cfg.seed(), pipeline_detail::kPurposeWorld, std::uint64_t(i)),
                           is_eval ? EgoSelection::lowest_cav : EgoSelection::random_cav,
                           std::uint32_t(i)),
                       is_eval});
    }
    return out;
}

inline void cmd_gen(const RunConfig& cfg, const Paths& paths) {
    const auto dir = paths.scenarios();
    std::filesystem::create_directories(dir);
    const auto scenarios = generate_split_scenarios(cfg);
    nlohmann::json index;
    index["train"] = nlohmann::json::array();
    index["eval"] = nlohmann::json::array();
    for (const auto& [scn, is_eval] : scenarios) {
        char name[32];
        std::snprintf(name, sizeof name, "%s_%03u.tbw", is_eval ? "eval" : "train", scn.scenario_id);
        save_scenario(dir / name, scn);
        index[is_eval ? "eval" : "train"].push_back(name);
    }
    atomic_write_file(dir / "index.json", index.dump(2) + "\n");
    write_fingerprint(dir, cfg);
}

inline std::vector<SplitScenario> load_split_scenarios(const Paths& paths) {
    const auto dir = paths.scenarios();
    pipeline_detail::require_exists(dir / "index.json", "gen");
    std::ifstream in(dir / "index.json");
    nlohmann::json index;
    in >> index;
    std::vector<SplitScenario> out;
    for (const auto& name : index.at("train"))
        out.push_back({load_scenario(dir / name.get<std::string>()), false});
    for (const auto& name : index.at("eval"))
        out.push_back({load_scenario(dir / name.get<std::string>()), true});
    return out;
}

// ---- pretrain --------------------------------------------------------------

inline CoopBaseModel<float> make_base_model(const RunConfig& cfg) {
    Rng rng(derive_seed(cfg.seed(), pipeline_detail::kPurposeBaseInit));
    return CoopBaseModel<float>::make(cfg.base(), rng);
}

inline void cmd_pretrain(const RunConfig& cfg, const Paths& paths) {
    const auto scenarios = load_split_scenarios(paths);
    std::vector<Scenario> train, eval;
    for (const auto& [scn, is_eval] : scenarios) (is_eval ? eval : train).push_back(scn);

    CoopBaseModel<float> model = make_base_model(cfg);
    const PretrainResult res = pretrain_base(model, train, eval, cfg.world(), cfg.pretrain());

    const auto dir = paths.base();
    std::filesystem::create_directories(dir);
    save_checkpoint(dir / "base.tbc", model.params());
    write_metrics_csv(dir / "metrics_pretrain.csv", res.log);

    // Summary incl. the ego-only comparison on the eval split.
    const auto eval_samples = rasterize_frames(eval, cfg.world(), cfg.pretrain().eval_frame_stride);
    nlohmann::json summary;
    summary["best_epoch"] = res.best_epoch;
    summary["best_eval_iou"] = res.best_eval_iou;
    summary["eval_iou_fused"] = base_eval_iou(model, eval_samples, false);
    summary["eval_iou_ego_only"] = base_eval_iou(model, eval_samples, true);
    summary["param_digest"] = param_digest(model.params());
    atomic_write_file(dir / "pretrain_summary.json", summary.dump(2) + "\n");
    write_fingerprint(dir, cfg);
}

inline CoopBaseModel<float> load_base_model(const RunConfig& cfg, const Paths& paths) {
    pipeline_detail::require_exists(paths.base() / "base.tbc", "pretrain");
    CoopBaseModel<float> model = make_base_model(cfg);
    ParamList<float> params = model.params();
    load_into(paths.base() / "base.tbc", params);
    return model;
}

// ---- cache -----------------------------------------------------------------

inline void cmd_cache(const RunConfig& cfg, const Paths& paths) {
    const auto scenarios = load_split_scenarios(paths);
    const CoopBaseModel<float> model = load_base_model(cfg, paths);
    cache_embeddings(paths.store(), scenarios, cfg.world(), model);
    write_fingerprint(paths.store(), cfg);
}

// ---- train -----------------------------------------------------------------

inline TemporalFusion<float> make_temporal(const RunConfig& cfg) {
    Rng rng(derive_seed(cfg.seed(), pipeline_detail::kPurposeTemporalInit));
    return TemporalFusion<float>::make(cfg.get_int("base.channels"), cfg.temporal(), rng);
}

inline void cmd_train(const RunConfig& cfg, const Paths& paths) {
    pipeline_detail::require_exists(paths.store() / "manifest.json", "cache");
    StoreReader reader(paths.store());
    CoopBaseModel<float> base = load_base_model(cfg, paths);
    TemporalFusion<float> temporal = make_temporal(cfg);

    const FitResult res = fit(reader, temporal, base, cfg.train());

    const auto dir = paths.temporal();
    std::filesystem::create_directories(dir);
    save_checkpoint(dir / "temporal.tbc", temporal.params());
    write_metrics_csv(dir / "metrics.csv", res.log);

    const TemporalConfig tc = cfg.temporal();
    nlohmann::json manifest;
    manifest["channels"] = cfg.get_int("base.channels");
    manifest["history_len"] = tc.history_len;
    manifest["num_blocks"] = tc.num_blocks;
    manifest["num_heads"] = tc.num_heads;
    manifest["num_keypoints"] = tc.num_keypoints;
    manifest["head_dim"] = tc.resolved_head_dim(cfg.get_int("base.channels"));
    manifest["feedforward_dim"] = tc.resolved_ffn_dim(cfg.get_int("base.channels"));
    manifest["importance_channels"] = tc.importance_channels;
    manifest["history_source"] = to_string(tc.history_source);
    manifest["use_query_importance"] = tc.use_query_importance;
    manifest["use_feature_aggregation"] = tc.use_feature_aggregation;
    manifest["best_epoch"] = res.best_epoch;
    manifest["best_eval_iou"] = res.best_eval_iou;
    manifest["decoder_digest_before"] = res.decoder_digest_before;
    manifest["decoder_digest_after"] = res.decoder_digest_after;
    manifest["encoder_digest_before"] = res.encoder_digest_before;
    manifest["encoder_digest_after"] = res.encoder_digest_after;
    manifest["loss_evaluations"] = res.loss_evaluations;
    manifest["sequences_seen"] = res.sequences_seen;
    atomic_write_file(dir / "temporal_config.json", manifest.dump(2) + "\n");
    write_fingerprint(dir, cfg);
}

inline TemporalFusion<float> load_temporal(const RunConfig& cfg, const Paths& paths) {
    pipeline_detail::require_exists(paths.temporal() / "temporal.tbc", "train");
    TemporalFusion<float> temporal = make_temporal(cfg);
    ParamList<float> params = temporal.params();
    load_into(paths.temporal() / "temporal.tbc", params);
    return temporal;
}

// ---- eval ------------------------------------------------------------------

inline std::vector<ReportRow> evaluate_all(StoreReader& reader, CoopBaseModel<float>& base,
                                           const TemporalFusion<float>& temporal,
                                           const FailureProtocol& proto,
                                           const std::string& fingerprint) {
    std::vector<ReportRow> rows;
    const StreamPolicy tcb = policy_from_module(temporal);
    const OffsetCurve tcb_curve = eval_failure(reader, tcb, base, proto);
    for (auto& r : rows_from_curve("tempcobev", tcb_curve.mean_iou, tcb_curve.n_anchors, fingerprint))
        rows.push_back(r);

    const BaselineCurve baseline = eval_ego_baseline(reader, base, proto);
    for (auto& r : rows_from_curve("base", baseline.as_offsets(proto.horizon), baseline.n_anchors,
                                   fingerprint))
        rows.push_back(r);

    const StreamPolicy mean_policy =
        policy_mean_history(temporal.cfg.history_len, temporal.cfg.history_source);
    const OffsetCurve mean_curve = eval_failure(reader, mean_policy, base, proto);
    for (auto& r :
         rows_from_curve("mean_history", mean_curve.mean_iou, mean_curve.n_anchors, fingerprint))
        rows.push_back(r);

    // Whole-stream current-frame IoU summaries (offset column unused -> 0).
    const long frames = [&] {
        long n = 0;
        for (const auto& e : reader.manifest().scenarios)
            if (e.is_eval) n += e.n_frames - 1;
        return n;
    }();
    rows.push_back({"tempcobev_stream", 0, eval_current(reader, tcb, base), frames, fingerprint});
    rows.push_back({"base_stream", 0, eval_current(reader, policy_identity(), base), frames,
                    fingerprint});
    return rows;
}

inline void cmd_eval(const RunConfig& cfg, const Paths& paths) {
    pipeline_detail::require_exists(paths.store() / "manifest.json", "cache");
    StoreReader reader(paths.store());
    CoopBaseModel<float> base = load_base_model(cfg, paths);
    const TemporalFusion<float> temporal = load_temporal(cfg, paths);

    const auto rows = evaluate_all(reader, base, temporal, cfg.protocol(), cfg.fingerprint());
    const auto dir = paths.eval();
    std::filesystem::create_directories(dir);
    write_report_csv(dir / "report.csv", rows);
    plot_report(dir / "curves.svg", rows, "IoU over time steps after communication loss");
    write_fingerprint(dir, cfg);
}

// ---- ablate ----------------------------------------------------------------

inline void cmd_ablate(const RunConfig& cfg, const Paths& paths,
                       const std::vector<AblationAxis>& axes, bool train_missing) {
    pipeline_detail::require_exists(paths.store() / "manifest.json", "cache");
    StoreReader reader(paths.store());
    CoopBaseModel<float> base = load_base_model(cfg, paths);

    const auto cells = ablation_cells(axes, cfg.temporal(), cfg.train());
    const auto outcomes = run_ablations(
        reader, base, cfg.temporal(), cfg.train(), cfg.protocol(), cells, paths.ablate() / "cells",
        train_missing, derive_seed(cfg.seed(), pipeline_detail::kPurposeTemporalInit));

    std::vector<ReportRow> rows;
    for (const auto& o : outcomes)
        for (auto& r : rows_from_curve(o.cell, o.curve.mean_iou, o.curve.n_anchors,
                                       cfg.fingerprint() + ":" + o.cell))
            rows.push_back(r);
    std::filesystem::create_directories(paths.ablate());
    write_report_csv(paths.ablate() / "ablation.csv", rows);
    write_fingerprint(paths.ablate(), cfg);
}

// ---- verify / plot ----------------------------------------------------------

inline VerifyReport cmd_verify(const Paths& paths) {
    pipeline_detail::require_exists(paths.store() / "manifest.json", "cache");
    return verify_store(paths.store());
}

inline void cmd_plot(const RunConfig& cfg, const Paths& paths) {
    pipeline_detail::require_exists(paths.eval() / "report.csv", "eval");
    const auto rows = read_report_csv(paths.eval() / "report.csv");
    plot_report(paths.eval() / "curves.svg", rows, "IoU over time steps after communication loss");
    write_fingerprint(paths.eval(), cfg);
}

}  // namespace tbev
