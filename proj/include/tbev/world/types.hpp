#pragma once

#include <cstdint>
#include <vector>

#include "tbev/core/error.hpp"

namespace tbev {

struct WorldConfig {
    double world_size_m = 140.0;  // square window edge, ego-centered
    int grid_cells = 64;          // H_out = W_out
    int n_frames = 60;            // frames per scenario at 10 Hz
    int vehicles_min = 6;
    int vehicles_max = 14;
    int cavs_min = 2;
    int cavs_max = 7;
    double comm_range_m = 70.0;
    double sensor_range_m = 50.0;
    double speed_min = 3.0;   // m/s
    double speed_max = 12.0;  // m/s
    double dt = 0.1;
    std::uint64_t seed = 7;

    double resolution() const { return world_size_m / grid_cells; }

    void validate() const {
        if (world_size_m <= 0 || grid_cells <= 0) throw ConfigError("world size and grid must be positive");
        if (n_frames < 1) throw ConfigError("n_frames must be >= 1");
        if (vehicles_min < 1 || vehicles_max < vehicles_min)
            throw ConfigError("bad vehicle count range");
        if (cavs_min < 1 || cavs_max < cavs_min) throw ConfigError("bad CAV count range");
        if (comm_range_m <= 0) throw ConfigError("comm_range_m must be positive");
        if (sensor_range_m <= 0) throw ConfigError("sensor_range_m must be positive");
        if (speed_min <= 0 || speed_max < speed_min) throw ConfigError("bad speed range");
        if (dt <= 0) throw ConfigError("dt must be positive");
    }
};

struct VehiclePose {
    float x = 0, y = 0, heading = 0;  // meters / radians, world frame
};

struct Vehicle {
    float length = 4.5f, width = 2.0f;
    std::vector<VehiclePose> poses;  // one per frame
};

// One synthetic world trace: vehicle tracks plus the connected subset.
struct Scenario {
    std::uint32_t scenario_id = 0;
    float world_size_m = 140.0f;
    float dt = 0.1f;
    std::vector<Vehicle> vehicles;
    std::vector<int> cav_ids;  // ascending
    int ego_id = 0;

    int n_frames() const { return vehicles.empty() ? 0 : int(vehicles[0].poses.size()); }
    int n_vehicles() const { return int(vehicles.size()); }

    bool is_cav(int id) const {
        for (int c : cav_ids)
            if (c == id) return true;
        return false;
    }

    const VehiclePose& pose(int vehicle_id, int frame) const {
        return vehicles[std::size_t(vehicle_id)].poses[std::size_t(frame)];
    }
};

struct FailureWindow {
    int first = 0;
    int last = 0;  // inclusive
};

using FailureSpec = std::vector<FailureWindow>;

// Per-frame list of CAVs whose embeddings reach the ego (always includes the
// ego itself); failure windows collapse a frame to exactly {ego}.
struct CommSchedule {
    std::vector<std::vector<int>> available;  // per frame, ascending ids
    FailureSpec failure_windows;
};

}  // namespace tbev
