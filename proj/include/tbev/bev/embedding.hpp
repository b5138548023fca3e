#pragma once

#include <cmath>

#include "tbev/core/tensor.hpp"

namespace tbev {

enum class EmbeddingSource { fused_multi_cav, ego_only, temporal_refined };

// Ego-centered fused scene representation: a [C,H,W] activation grid stamped
// with its frame index (10 Hz ticks) and provenance.
template <typename T>
struct BEVEmbedding {
    Tensor<T> data;  // [C,H,W]
    int frame_index = 0;
    EmbeddingSource source = EmbeddingSource::fused_multi_cav;

    int channels() const { return data.dim(0); }
    int height() const { return data.dim(1); }
    int width() const { return data.dim(2); }

    bool finite() const {
        for (std::size_t i = 0; i < data.numel(); ++i)
            if (!std::isfinite(double(data.at(i)))) return false;
        return true;
    }
};

template <typename T>
void check_embedding_shapes_match(const BEVEmbedding<T>& a, const BEVEmbedding<T>& b, const char* op) {
    if (a.data.shape() != b.data.shape())
        throw ArgumentError(std::string(op) + ": embedding shape mismatch " + shape_str(a.data.shape()) +
                            " vs " + shape_str(b.data.shape()));
}

}  // namespace tbev
