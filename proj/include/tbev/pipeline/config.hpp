#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "tbev/base/pretrain.hpp"
#include "tbev/eval/evaluator.hpp"
#include "tbev/temporal/config.hpp"
#include "tbev/train/trainer.hpp"
#include "tbev/world/types.hpp"

// Flat key=value run configuration. Every key has a registered default;
// unknown keys are rejected with the offending key and line. The resolved
// configuration is echoed into every output directory together with its
// fingerprint.

namespace tbev {

class RunConfig {
  public:
    RunConfig() : values_(defaults()) {}

    static const std::map<std::string, std::string>& defaults() {
        static const std::map<std::string, std::string> kDefaults = {
            {"seed", "7"},
            {"out_dir", ""},
            {"world.size_m", "140"},
            {"world.grid", "64"},
            {"world.frames", "60"},
            {"world.vehicles_min", "6"},
            {"world.vehicles_max", "14"},
            {"world.cavs_min", "2"},
            {"world.cavs_max", "7"},
            {"world.comm_range_m", "70"},
            {"world.sensor_range_m", "50"},
            {"world.speed_min", "3"},
            {"world.speed_max", "12"},
            {"world.dt", "0.1"},
            {"data.train_scenarios", "40"},
            {"data.eval_scenarios", "10"},
            {"base.channels", "64"},
            {"base.downsample", "4"},
            {"base.fusion", "attn"},
            {"base.pretrain_epochs", "10"},
            {"base.batch", "8"},
            {"base.lr", "0.001"},
            {"base.lr_min", "0.00001"},
            {"base.frame_stride", "2"},
            {"base.eval_frame_stride", "4"},
            {"base.loss", "iou"},
            {"base.pos_weight", "2"},
            {"temporal.history", "1"},
            {"temporal.blocks", "3"},
            {"temporal.heads", "4"},
            {"temporal.keypoints", "4"},
            {"temporal.head_dim", "0"},
            {"temporal.ffn_dim", "0"},
            {"temporal.importance_channels", "32"},
            {"temporal.history_source", "refined"},
            {"temporal.query_importance", "true"},
            {"temporal.feature_aggregation", "true"},
            {"train.seq_len", "4"},
            {"train.epochs", "40"},
            {"train.batch", "8"},
            {"train.lr", "0.001"},
            {"train.lr_min", "0.00001"},
            {"train.comm_aug", "0.3"},
            {"train.flip", "false"},
            {"train.rot90", "false"},
            {"train.loss", "iou"},
            {"train.pos_weight", "2"},
            {"eval.warmup_frames", "2"},
            {"eval.horizon", "4"},
        };
        return kDefaults;
    }

    void set(const std::string& key, const std::string& value, const std::string& where = "") {
        auto it = values_.find(key);
        if (it == values_.end())
            throw ConfigError("unknown configuration key '" + key + "'" +
                              (where.empty() ? "" : " at " + where));
        it->second = value;
    }

    // Scaled-down profile: smaller world, fewer scenarios, fewer epochs,
    // same cell resolution.
    void apply_quick_profile() {
        set("world.size_m", "70");
        set("world.grid", "32");
        set("world.sensor_range_m", "35");
        set("world.vehicles_min", "5");
        set("world.vehicles_max", "9");
        set("world.cavs_max", "5");
        set("data.train_scenarios", "10");
        set("data.eval_scenarios", "4");
        set("base.pretrain_epochs", "6");
        set("train.epochs", "8");
    }

    void load_file(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config file " + path.string());
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            const auto trim = [](std::string s) {
                const auto b = s.find_first_not_of(" \t\r");
                if (b == std::string::npos) return std::string();
                const auto e = s.find_last_not_of(" \t\r");
                return s.substr(b, e - b + 1);
            };
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            const std::string where = path.filename().string() + ":" + std::to_string(line_no);
            if (eq == std::string::npos)
                throw ConfigError("expected key = value at " + where);
            set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)), where);
        }
    }

    // "key=value" (from a CLI flag).
    void set_pair(const std::string& pair) {
        const auto eq = pair.find('=');
        if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + pair + "'");
        set(pair.substr(0, eq), pair.substr(eq + 1), "command line");
    }

    const std::string& raw(const std::string& key) const { return values_.at(key); }

    int get_int(const std::string& key) const {
        try {
            std::size_t used = 0;
            const int v = std::stoi(values_.at(key), &used);
            if (used != values_.at(key).size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "' expects an integer, got '" + values_.at(key) + "'");
        }
    }

    double get_double(const std::string& key) const {
        try {
            std::size_t used = 0;
            const double v = std::stod(values_.at(key), &used);
            if (used != values_.at(key).size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "' expects a number, got '" + values_.at(key) + "'");
        }
    }

    bool get_bool(const std::string& key) const {
        const std::string& v = values_.at(key);
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw ConfigError("key '" + key + "' expects true|false, got '" + v + "'");
    }

    std::uint64_t seed() const { return std::uint64_t(get_int("seed")); }

    WorldConfig world() const {
        WorldConfig w;
        w.world_size_m = get_double("world.size_m");
        w.grid_cells = get_int("world.grid");
        w.n_frames = get_int("world.frames");
        w.vehicles_min = get_int("world.vehicles_min");
        w.vehicles_max = get_int("world.vehicles_max");
        w.cavs_min = get_int("world.cavs_min");
        w.cavs_max = get_int("world.cavs_max");
        w.comm_range_m = get_double("world.comm_range_m");
        w.sensor_range_m = get_double("world.sensor_range_m");
        w.speed_min = get_double("world.speed_min");
        w.speed_max = get_double("world.speed_max");
        w.dt = get_double("world.dt");
        w.seed = seed();
        w.validate();
        return w;
    }

    BaseConfig base() const {
        BaseConfig b;
        b.channels = get_int("base.channels");
        b.obs_cells = get_int("world.grid");
        b.downsample = get_int("base.downsample");
        b.fusion = fusion_from_string(raw("base.fusion"));
        b.validate();
        return b;
    }

    PretrainConfig pretrain() const {
        PretrainConfig p;
        p.epochs = get_int("base.pretrain_epochs");
        p.batch_size = get_int("base.batch");
        p.lr = get_double("base.lr");
        p.lr_min = get_double("base.lr_min");
        p.frame_stride = get_int("base.frame_stride");
        p.eval_frame_stride = get_int("base.eval_frame_stride");
        p.loss = loss_from_string(raw("base.loss"));
        p.pos_weight = get_double("base.pos_weight");
        p.seed = seed();
        return p;
    }

    TemporalConfig temporal() const {
        TemporalConfig t;
        t.history_len = get_int("temporal.history");
        t.num_blocks = get_int("temporal.blocks");
        t.num_heads = get_int("temporal.heads");
        t.num_keypoints = get_int("temporal.keypoints");
        t.head_dim = get_int("temporal.head_dim");
        t.feedforward_dim = get_int("temporal.ffn_dim");
        t.importance_channels = get_int("temporal.importance_channels");
        t.history_source = history_source_from_string(raw("temporal.history_source"));
        t.use_query_importance = get_bool("temporal.query_importance");
        t.use_feature_aggregation = get_bool("temporal.feature_aggregation");
        t.validate(get_int("base.channels"));
        return t;
    }

    TrainConfig train() const {
        TrainConfig t;
        t.seq_len = get_int("train.seq_len");
        t.epochs = get_int("train.epochs");
        t.batch_size = get_int("train.batch");
        t.lr = get_double("train.lr");
        t.lr_min = get_double("train.lr_min");
        t.comm_aug_prob = get_double("train.comm_aug");
        t.flip = get_bool("train.flip");
        t.rot90 = get_bool("train.rot90");
        t.loss = loss_from_string(raw("train.loss"));
        t.pos_weight = get_double("train.pos_weight");
        t.seed = seed();
        t.validate();
        return t;
    }

    FailureProtocol protocol() const {
        FailureProtocol p;
        p.warmup_frames = get_int("eval.warmup_frames");
        p.horizon = get_int("eval.horizon");
        p.validate();
        return p;
    }

    // Sorted key=value text; identical configs produce identical bytes.
    std::string resolved_text() const {
        std::ostringstream out;
        for (const auto& [k, v] : values_) out << k << " = " << v << "\n";
        return out.str();
    }

    std::string fingerprint() const {
        const std::string text = resolved_text();
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx",
                      static_cast<unsigned long long>(fnv1a64(text.data(), text.size())));
        return std::string(buf);
    }

    // Resolution order for the output root: explicit flag, config key,
    // TBEV_OUT environment variable, ./runs.
    std::filesystem::path out_root(const std::string& cli_out) const {
        if (!cli_out.empty()) return cli_out;
        if (!raw("out_dir").empty()) return raw("out_dir");
        if (const char* env = std::getenv("TBEV_OUT"); env && *env) return env;
        return "runs";
    }

  private:
    std::map<std::string, std::string> values_;
};

inline void write_fingerprint(const std::filesystem::path& dir, const RunConfig& cfg) {
    std::filesystem::create_directories(dir);
    atomic_write_file(dir / "config.resolved.txt",
                      "# fingerprint " + cfg.fingerprint() + "\n" + cfg.resolved_text());
}

}  // namespace tbev
