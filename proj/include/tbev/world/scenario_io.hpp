#pragma once

#include <filesystem>

#include "tbev/core/serialize.hpp"
#include "tbev/world/types.hpp"

// "TBW1" scenario files, little-endian:
//   magic "TBW1" | u32 version=1
//   u32 scenario_id | f32 world_size_m | f32 dt
//   u32 n_frames | u32 n_vehicles | u32 n_cavs | u32 ego_id
//   per vehicle: f32 length | f32 width
//   per CAV: u32 vehicle id (ascending)
//   tracks, frame-major then vehicle: f32 x | f32 y | f32 heading

namespace tbev {

inline void save_scenario(const std::filesystem::path& path, const Scenario& scn) {
    std::vector<std::uint8_t> buf;
    bin::put_bytes(buf, "TBW1", 4);
    bin::put_u32(buf, 1);
    bin::put_u32(buf, scn.scenario_id);
    bin::put_f32(buf, scn.world_size_m);
    bin::put_f32(buf, scn.dt);
    bin::put_u32(buf, std::uint32_t(scn.n_frames()));
    bin::put_u32(buf, std::uint32_t(scn.n_vehicles()));
    bin::put_u32(buf, std::uint32_t(scn.cav_ids.size()));
    bin::put_u32(buf, std::uint32_t(scn.ego_id));
    for (const auto& v : scn.vehicles) {
        bin::put_f32(buf, v.length);
        bin::put_f32(buf, v.width);
    }
    for (int id : scn.cav_ids) bin::put_u32(buf, std::uint32_t(id));
    for (int f = 0; f < scn.n_frames(); ++f)
        for (const auto& v : scn.vehicles) {
            const VehiclePose& p = v.poses[std::size_t(f)];
            bin::put_f32(buf, p.x);
            bin::put_f32(buf, p.y);
            bin::put_f32(buf, p.heading);
        }
    atomic_write_file(path, buf);
}

inline Scenario load_scenario(const std::filesystem::path& path) {
    const auto buf = read_file_bytes(path);
    bin::Reader r{buf.data(), buf.size()};
    if (r.str(4, "magic") != "TBW1") throw DataError("bad scenario magic in " + path.string());
    const auto version = r.u32("version");
    if (version != 1) throw DataError("unsupported scenario version " + std::to_string(version));
    Scenario scn;
    scn.scenario_id = r.u32("scenario id");
    scn.world_size_m = r.f32("world size");
    scn.dt = r.f32("dt");
    const auto n_frames = r.u32("frame count");
    const auto n_vehicles = r.u32("vehicle count");
    const auto n_cavs = r.u32("cav count");
    scn.ego_id = int(r.u32("ego id"));
    scn.vehicles.resize(n_vehicles);
    for (auto& v : scn.vehicles) {
        v.length = r.f32("length");
        v.width = r.f32("width");
        v.poses.resize(n_frames);
    }
    scn.cav_ids.resize(n_cavs);
    for (auto& id : scn.cav_ids) id = int(r.u32("cav id"));
    for (std::uint32_t f = 0; f < n_frames; ++f)
        for (auto& v : scn.vehicles) {
            v.poses[f].x = r.f32("x");
            v.poses[f].y = r.f32("y");
            v.poses[f].heading = r.f32("heading");
        }
    if (!scn.is_cav(scn.ego_id)) throw DataError("scenario ego is not a CAV in " + path.string());
    return scn;
}

}  // namespace tbev
