#pragma once

#include <vector>

#include "tbev/core/rng.hpp"
#include "tbev/store/store.hpp"

// Training-time augmentation: communication dropout on non-final frames and
// one spatial transform per sequence applied to embeddings and ground truth.

namespace tbev {

// Each non-final frame independently flips from fused to ego_only with
// probability `prob`; the final (loss-bearing) frame keeps its source.
inline FrameSequence comm_augment(FrameSequence seq, double prob, Rng& rng) {
    for (int i = 0; i + 1 < seq.size(); ++i)
        if (seq.frames[std::size_t(i)].source == SourceSelect::fused && rng.bernoulli(prob))
            seq.frames[std::size_t(i)].source = SourceSelect::ego_only;
    return seq;
}

enum class SpatialTransform { identity, flip_w, rot90, rot180, rot270 };

namespace augment_detail {

// Source index of output cell (r, c) on an n x n grid.
inline std::pair<int, int> source_cell(SpatialTransform t, int n, int r, int c) {
    switch (t) {
        case SpatialTransform::identity: return {r, c};
        case SpatialTransform::flip_w: return {r, n - 1 - c};
        case SpatialTransform::rot90: return {n - 1 - c, r};
        case SpatialTransform::rot180: return {n - 1 - r, n - 1 - c};
        case SpatialTransform::rot270:
        default: return {c, n - 1 - r};
    }
}

}  // namespace augment_detail

template <typename T>
Tensor<T> transform_chw(const Tensor<T>& x, SpatialTransform t) {
    if (t == SpatialTransform::identity) return x;
    if (x.ndim() != 3 || x.dim(1) != x.dim(2))
        throw ArgumentError("transform_chw: expects square [C,H,W] grid");
    const int c = x.dim(0), n = x.dim(1);
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    for (int cc = 0; cc < c; ++cc)
        for (int r = 0; r < n; ++r)
            for (int col = 0; col < n; ++col) {
                const auto [sr, sc] = augment_detail::source_cell(t, n, r, col);
                out.at3(cc, r, col) = x.at3(cc, sr, sc);
            }
    return out;
}

inline BinaryGrid transform_grid(const BinaryGrid& g, SpatialTransform t) {
    if (t == SpatialTransform::identity) return g;
    if (g.h != g.w) throw ArgumentError("transform_grid: expects square grid");
    BinaryGrid out{g.h, g.w, std::vector<std::uint8_t>(g.cells.size(), 0)};
    for (int r = 0; r < g.h; ++r)
        for (int c = 0; c < g.w; ++c) {
            const auto [sr, sc] = augment_detail::source_cell(t, g.h, r, c);
            out.at(r, c) = g.at(sr, sc);
        }
    return out;
}

// One transform drawn per sequence, uniform over the enabled candidates.
inline SpatialTransform draw_transform(bool flip, bool rot, Rng& rng) {
    std::vector<SpatialTransform> candidates{SpatialTransform::identity};
    if (flip) candidates.push_back(SpatialTransform::flip_w);
    if (rot) {
        candidates.push_back(SpatialTransform::rot90);
        candidates.push_back(SpatialTransform::rot180);
        candidates.push_back(SpatialTransform::rot270);
    }
    return candidates[std::size_t(rng.below(candidates.size()))];
}

// Applies the drawn transform consistently to both embeddings and the ground
// truth of every frame.
inline FrameSequence spatial_augment(FrameSequence seq, bool flip, bool rot, Rng& rng) {
    const SpatialTransform t = draw_transform(flip, rot, rng);
    if (t == SpatialTransform::identity) return seq;
    for (auto& fr : seq.frames) {
        fr.record.fused = transform_chw(fr.record.fused, t);
        fr.record.ego_only = transform_chw(fr.record.ego_only, t);
        fr.record.gt = transform_grid(fr.record.gt, t);
    }
    return seq;
}

}  // namespace tbev
