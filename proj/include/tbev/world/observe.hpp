#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tbev/core/tensor.hpp"
#include "tbev/world/geometry.hpp"

// Ego-centered rasterization: ground-truth occupancy and per-agent
// observations with sensor range and line-of-sight occlusion.

namespace tbev {

struct BinaryGrid {
    int h = 0, w = 0;
    std::vector<std::uint8_t> cells;  // row-major 0/1

    std::uint8_t& at(int r, int c) { return cells[std::size_t(r) * w + c]; }
    std::uint8_t at(int r, int c) const { return cells[std::size_t(r) * w + c]; }
    std::size_t count() const {
        std::size_t n = 0;
        for (auto v : cells) n += v;
        return n;
    }
    bool operator==(const BinaryGrid& o) const = default;
};

template <typename T>
Tensor<T> grid_to_tensor(const BinaryGrid& g) {
    std::vector<T> v(g.cells.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = T(g.cells[i]);
    return Tensor<T>::from({g.h, g.w}, std::move(v));
}

// [1,H,W] single-channel observation plane for the encoder.
template <typename T>
Tensor<T> grid_to_obs_tensor(const BinaryGrid& g) {
    std::vector<T> v(g.cells.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = T(g.cells[i]);
    return Tensor<T>::from({1, g.h, g.w}, std::move(v));
}

namespace detail_world {

// Window origin so that the ego sits at the window center.
struct Window {
    double x_min, y_min, res;
    int cells;

    double cx(int c) const { return x_min + (c + 0.5) * res; }
    double cy(int r) const { return y_min + (r + 0.5) * res; }
};

inline Window ego_window(const Scenario& scn, const WorldConfig& cfg, int frame) {
    const VehiclePose& ego = scn.pose(scn.ego_id, frame);
    const double size = cfg.world_size_m;
    return {double(ego.x) - size / 2.0, double(ego.y) - size / 2.0, cfg.resolution(),
            cfg.grid_cells};
}

// Applies `fn(row, col, vehicle_id, cx, cy)` to every cell whose center lies
// inside the vehicle's footprint at this frame.
template <typename Fn>
void for_each_footprint_cell(const Scenario& scn, const Window& win, int frame, int vehicle_id,
                             Fn&& fn) {
    const Vehicle& v = scn.vehicles[std::size_t(vehicle_id)];
    const OrientedRect rect = footprint_rect(v, v.poses[std::size_t(frame)]);
    const double radius = std::sqrt(rect.half_len * rect.half_len + rect.half_wid * rect.half_wid);
    const int c0 = std::max(0, int(std::floor((rect.cx - radius - win.x_min) / win.res)));
    const int c1 = std::min(win.cells - 1, int(std::ceil((rect.cx + radius - win.x_min) / win.res)));
    const int r0 = std::max(0, int(std::floor((rect.cy - radius - win.y_min) / win.res)));
    const int r1 = std::min(win.cells - 1, int(std::ceil((rect.cy + radius - win.y_min) / win.res)));
    for (int r = r0; r <= r1; ++r)
        for (int c = c0; c <= c1; ++c)
            if (point_in_rect(win.cx(c), win.cy(r), rect)) fn(r, c, vehicle_id, win.cx(c), win.cy(r));
}

}  // namespace detail_world

// Binary occupancy of all vehicle footprints in the ego-centered window,
// independent of any visibility.
inline BinaryGrid ground_truth_map(const Scenario& scn, const WorldConfig& cfg, int frame) {
    if (frame < 0 || frame >= scn.n_frames())
        throw ArgumentError("ground_truth_map: frame " + std::to_string(frame) + " out of range");
    const auto win = detail_world::ego_window(scn, cfg, frame);
    BinaryGrid g{cfg.grid_cells, cfg.grid_cells,
                 std::vector<std::uint8_t>(std::size_t(cfg.grid_cells) * cfg.grid_cells, 0)};
    for (int v = 0; v < scn.n_vehicles(); ++v)
        detail_world::for_each_footprint_cell(scn, win, frame, v,
                                              [&](int r, int c, int, double, double) { g.at(r, c) = 1; });
    return g;
}

// What one CAV sees: footprint cells within sensor range whose center is
// line-of-sight visible from the agent (no third vehicle's footprint crosses
// the sight segment). An agent always sees its own footprint.
inline BinaryGrid agent_observation(const Scenario& scn, const WorldConfig& cfg, int frame,
                                    int agent_id) {
    if (frame < 0 || frame >= scn.n_frames())
        throw ArgumentError("agent_observation: frame " + std::to_string(frame) + " out of range");
    if (agent_id < 0 || agent_id >= scn.n_vehicles() || !scn.is_cav(agent_id))
        throw ArgumentError("agent_observation: unknown agent " + std::to_string(agent_id));

    const auto win = detail_world::ego_window(scn, cfg, frame);
    const VehiclePose& agent = scn.pose(agent_id, frame);
    const double range2 = cfg.sensor_range_m * cfg.sensor_range_m;

    std::vector<OrientedRect> rects;
    rects.reserve(std::size_t(scn.n_vehicles()));
    for (int v = 0; v < scn.n_vehicles(); ++v)
        rects.push_back(footprint_rect(scn.vehicles[std::size_t(v)], scn.pose(v, frame)));

    BinaryGrid g{cfg.grid_cells, cfg.grid_cells,
                 std::vector<std::uint8_t>(std::size_t(cfg.grid_cells) * cfg.grid_cells, 0)};
    for (int v = 0; v < scn.n_vehicles(); ++v) {
        detail_world::for_each_footprint_cell(
            scn, win, frame, v, [&](int r, int c, int owner, double cx, double cy) {
                if (dist2(double(agent.x), double(agent.y), cx, cy) > range2) return;
                if (owner != agent_id) {
                    for (int o = 0; o < scn.n_vehicles(); ++o) {
                        if (o == owner || o == agent_id) continue;
                        if (segment_intersects_rect(double(agent.x), double(agent.y), cx, cy,
                                                    rects[std::size_t(o)]))
                            return;
                    }
                }
                g.at(r, c) = 1;
            });
    }
    return g;
}

}  // namespace tbev
