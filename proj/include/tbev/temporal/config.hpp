#pragma once

#include <string>

#include "tbev/core/error.hpp"

namespace tbev {

enum class HistorySource { refined, raw };

inline const char* to_string(HistorySource s) {
    return s == HistorySource::refined ? "refined" : "raw";
}

inline HistorySource history_source_from_string(const std::string& s) {
    if (s == "refined") return HistorySource::refined;
    if (s == "raw") return HistorySource::raw;
    throw ConfigError("unknown history_source '" + s + "' (expected refined|raw)");
}

struct TemporalConfig {
    int history_len = 1;        // H: historical frames kept in the buffer
    int num_blocks = 3;         // N: recurrent attention blocks
    int num_heads = 4;          // A
    int num_keypoints = 4;      // M: sampled keypoints per head and frame
    int head_dim = 0;           // 0 -> channels / num_heads
    int feedforward_dim = 0;    // 0 -> 2 * channels
    int importance_channels = 32;  // O: generator output channels
    HistorySource history_source = HistorySource::refined;
    // Ablation switches: query importance (initial fused query vs uniform
    // mean) and feature aggregation (final importance blend vs raw output).
    bool use_query_importance = true;
    bool use_feature_aggregation = true;

    int resolved_head_dim(int channels) const { return head_dim > 0 ? head_dim : channels / num_heads; }
    int resolved_ffn_dim(int channels) const {
        return feedforward_dim > 0 ? feedforward_dim : 2 * channels;
    }

    void validate(int channels) const {
        if (history_len < 0) throw ConfigError("history_len must be >= 0");
        if (num_blocks < 1) throw ConfigError("num_blocks must be >= 1");
        if (num_keypoints < 1) throw ConfigError("num_keypoints must be >= 1");
        if (num_heads < 1) throw ConfigError("num_heads must be >= 1");
        if (importance_channels < 1) throw ConfigError("importance_channels must be >= 1");
        const int hd = resolved_head_dim(channels);
        if (num_heads * hd != channels)
            throw ConfigError("num_heads * head_dim (" + std::to_string(num_heads) + " * " +
                              std::to_string(hd) + ") must equal channels (" +
                              std::to_string(channels) + ")");
    }
};

}  // namespace tbev
