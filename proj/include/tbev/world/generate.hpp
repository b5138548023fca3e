#pragma once

#include <string>

#include "tbev/core/rng.hpp"
#include "tbev/world/geometry.hpp"
#include "tbev/world/types.hpp"

namespace tbev {

enum class EgoSelection { random_cav, lowest_cav };

namespace detail_world {

// Lane templates: axis-aligned travel, optionally with one 90-degree turn.
// Per-frame displacement is always speed * dt.
inline Vehicle roll_vehicle(const WorldConfig& cfg, Rng& rng) {
    Vehicle v;
    // Footprints stay wider than the default cell pitch so center-in-rect
    // rasterization cannot drop a vehicle entirely between cell centers.
    v.length = float(rng.uniform(4.6, 5.8));
    v.width = float(rng.uniform(2.4, 3.2));
    const double speed = rng.uniform(cfg.speed_min, cfg.speed_max);
    const double half = cfg.world_size_m * 0.45;
    double x = rng.uniform(-half, half);
    double y = rng.uniform(-half, half);
    static constexpr double kQuarter = 1.5707963267948966;
    double heading = kQuarter * double(rng.below(4));

    const bool turns = rng.bernoulli(0.4);
    const int turn_start = turns ? rng.range(8, 30) : cfg.n_frames;
    const int turn_len = rng.range(8, 14);
    const double turn_sign = rng.bernoulli(0.5) ? 1.0 : -1.0;

    v.poses.reserve(std::size_t(cfg.n_frames));
    for (int f = 0; f < cfg.n_frames; ++f) {
        v.poses.push_back({float(x), float(y), float(heading)});
        if (f >= turn_start && f < turn_start + turn_len) heading += turn_sign * kQuarter / turn_len;
        x += speed * cfg.dt * std::cos(heading);
        y += speed * cfg.dt * std::sin(heading);
    }
    return v;
}

inline bool frame0_overlaps(const std::vector<Vehicle>& vehicles) {
    for (std::size_t i = 0; i < vehicles.size(); ++i)
        for (std::size_t j = i + 1; j < vehicles.size(); ++j)
            if (rects_overlap(footprint_rect(vehicles[i], vehicles[i].poses[0]),
                              footprint_rect(vehicles[j], vehicles[j].poses[0])))
                return true;
    return false;
}

}  // namespace detail_world

// Deterministic scenario construction from (cfg, seed). Vehicles follow
// piecewise-constant-speed lane templates; frame-0 footprints never overlap.
inline Scenario generate_scenario(const WorldConfig& cfg, std::uint64_t seed,
                                  EgoSelection ego_mode = EgoSelection::random_cav,
                                  std::uint32_t scenario_id = 0) {
    cfg.validate();
    Rng rng(seed);
    Scenario scn;
    scn.scenario_id = scenario_id;
    scn.world_size_m = float(cfg.world_size_m);
    scn.dt = float(cfg.dt);

    const int n_vehicles = rng.range(cfg.vehicles_min, cfg.vehicles_max);
    constexpr int kMaxAttempts = 100;
    for (int attempt = 0;; ++attempt) {
        if (attempt >= kMaxAttempts)
            throw GenerationError("scenario placement infeasible for seed " + std::to_string(seed) +
                                  " after " + std::to_string(kMaxAttempts) + " attempts");
        scn.vehicles.clear();
        for (int i = 0; i < n_vehicles; ++i) scn.vehicles.push_back(detail_world::roll_vehicle(cfg, rng));
        if (!detail_world::frame0_overlaps(scn.vehicles)) break;
    }

    const int n_cavs = std::min(rng.range(cfg.cavs_min, cfg.cavs_max), n_vehicles);
    std::vector<int> ids(static_cast<std::size_t>(n_vehicles));
    for (int i = 0; i < n_vehicles; ++i) ids[std::size_t(i)] = i;
    for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.below(i)]);
    scn.cav_ids.assign(ids.begin(), ids.begin() + n_cavs);
    std::sort(scn.cav_ids.begin(), scn.cav_ids.end());

    scn.ego_id = ego_mode == EgoSelection::lowest_cav
                     ? scn.cav_ids.front()
                     : scn.cav_ids[std::size_t(rng.below(std::uint64_t(n_cavs)))];
    return scn;
}

}  // namespace tbev
