#pragma once

#include <string>

#include "tbev/world/geometry.hpp"
#include "tbev/world/types.hpp"

namespace tbev {

// Range-gated connectivity with failure overrides: per frame, the CAVs
// within comm range of the ego; during a failure window exactly {ego}.
inline CommSchedule comm_schedule(const Scenario& scn, const WorldConfig& cfg,
                                  const FailureSpec& failures = {}) {
    for (const auto& fw : failures)
        if (fw.first < 0 || fw.last < fw.first || fw.last >= scn.n_frames())
            throw ArgumentError("malformed failure window [" + std::to_string(fw.first) + "," +
                                std::to_string(fw.last) + "]");

    CommSchedule out;
    out.failure_windows = failures;
    out.available.resize(std::size_t(scn.n_frames()));
    const double range2 = cfg.comm_range_m * cfg.comm_range_m;
    for (int f = 0; f < scn.n_frames(); ++f) {
        bool failed = false;
        for (const auto& fw : failures) failed = failed || (f >= fw.first && f <= fw.last);
        auto& list = out.available[std::size_t(f)];
        if (failed) {
            list = {scn.ego_id};
            continue;
        }
        const VehiclePose& ego = scn.pose(scn.ego_id, f);
        for (int id : scn.cav_ids) {
            const VehiclePose& p = scn.pose(id, f);
            if (id == scn.ego_id ||
                dist2(double(p.x), double(p.y), double(ego.x), double(ego.y)) <= range2)
                list.push_back(id);
        }
    }
    return out;
}

}  // namespace tbev
