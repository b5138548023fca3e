#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "tbev/world/comm.hpp"
#include "tbev/world/generate.hpp"
#include "tbev/world/observe.hpp"
#include "tbev/world/scenario_io.hpp"

using namespace tbev;

namespace {

WorldConfig test_cfg() {
    WorldConfig cfg;
    cfg.seed = 21;
    return cfg;
}

Scenario static_scenario(std::vector<Vehicle> vehicles, std::vector<int> cav_ids, int ego_id,
                         int frames = 2) {
    for (auto& v : vehicles) {
        auto base = v.poses.at(0);
        v.poses.assign(std::size_t(frames), base);
    }
    Scenario scn;
    scn.vehicles = std::move(vehicles);
    scn.cav_ids = std::move(cav_ids);
    scn.ego_id = ego_id;
    scn.world_size_m = 140.0f;
    return scn;
}

Vehicle static_vehicle(float x, float y, float heading, float length = 4.5f, float width = 2.0f) {
    Vehicle v;
    v.length = length;
    v.width = width;
    v.poses.push_back({x, y, heading});
    return v;
}

// Sampling-based segment blocking oracle, independent of the analytic
// segment-rectangle clip used by the implementation.
bool oracle_blocked(double x0, double y0, double x1, double y1, const OrientedRect& rect) {
    const int steps = 4000;
    for (int i = 0; i <= steps; ++i) {
        const double t = double(i) / steps;
        if (point_in_rect(x0 + t * (x1 - x0), y0 + t * (y1 - y0), rect)) return true;
    }
    return false;
}

}  // namespace

TEST_CASE("scenario generation is deterministic and respects configured ranges") {
    const WorldConfig cfg = test_cfg();
    const Scenario a = generate_scenario(cfg, 123, EgoSelection::random_cav, 5);
    const Scenario b = generate_scenario(cfg, 123, EgoSelection::random_cav, 5);

    REQUIRE(a.n_vehicles() == b.n_vehicles());
    CHECK(a.ego_id == b.ego_id);
    CHECK(a.cav_ids == b.cav_ids);
    for (int v = 0; v < a.n_vehicles(); ++v)
        for (int f = 0; f < a.n_frames(); ++f) {
            CHECK(a.pose(v, f).x == b.pose(v, f).x);
            CHECK(a.pose(v, f).y == b.pose(v, f).y);
            CHECK(a.pose(v, f).heading == b.pose(v, f).heading);
        }

    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Scenario s = generate_scenario(cfg, seed);
        CHECK(s.n_vehicles() >= cfg.vehicles_min);
        CHECK(s.n_vehicles() <= cfg.vehicles_max);
        CHECK(int(s.cav_ids.size()) >= 1);
        CHECK(int(s.cav_ids.size()) <= cfg.cavs_max);
        CHECK(s.is_cav(s.ego_id));
        CHECK(s.n_frames() == cfg.n_frames);
    }
}

TEST_CASE("vehicle motion: bounded per-frame displacement, no frame-0 overlap") {
    const WorldConfig cfg = test_cfg();
    for (std::uint64_t seed = 100; seed < 120; ++seed) {
        const Scenario s = generate_scenario(cfg, seed);
        for (int v = 0; v < s.n_vehicles(); ++v)
            for (int f = 1; f < s.n_frames(); ++f) {
                const double d = std::sqrt(dist2(s.pose(v, f).x, s.pose(v, f).y, s.pose(v, f - 1).x,
                                                 s.pose(v, f - 1).y));
                CHECK(d <= cfg.speed_max * cfg.dt + 1e-4);
            }
        for (int i = 0; i < s.n_vehicles(); ++i)
            for (int j = i + 1; j < s.n_vehicles(); ++j)
                CHECK_FALSE(rects_overlap(footprint_rect(s.vehicles[std::size_t(i)], s.pose(i, 0)),
                                          footprint_rect(s.vehicles[std::size_t(j)], s.pose(j, 0))));
    }
}

TEST_CASE("ego selection policy: lowest CAV id at test time") {
    const WorldConfig cfg = test_cfg();
    for (std::uint64_t seed = 300; seed < 310; ++seed) {
        const Scenario s = generate_scenario(cfg, seed, EgoSelection::lowest_cav);
        CHECK(s.ego_id == s.cav_ids.front());
    }
}

TEST_CASE("observation: the observing agent always sees its own footprint") {
    WorldConfig cfg = test_cfg();
    Scenario scn = static_scenario({static_vehicle(0, 0, 0.3f), static_vehicle(8, 0, 0)}, {0, 1}, 0);
    const BinaryGrid obs = agent_observation(scn, cfg, 0, 0);
    const auto win = detail_world::ego_window(scn, cfg, 0);
    std::size_t own_cells = 0;
    detail_world::for_each_footprint_cell(scn, win, 0, 0, [&](int r, int c, int, double, double) {
        ++own_cells;
        CHECK(obs.at(r, c) == 1);
    });
    CHECK(own_cells > 0);
}

TEST_CASE("observation: full occlusion behind a blocking vehicle") {
    WorldConfig cfg = test_cfg();
    // Observer at the origin, a wide blocker side-on at x=10, target at x=20.
    // The target's y aligns with a cell-center row of the ego window.
    Vehicle blocker = static_vehicle(10, 0, 1.5707963f, 4.5f, 2.0f);  // length spans y
    Scenario scn = static_scenario(
        {static_vehicle(0, 0, 0), blocker, static_vehicle(20, -1.09375f, 0)}, {0, 2}, 0);

    const auto win = detail_world::ego_window(scn, cfg, 0);
    const BinaryGrid obs = agent_observation(scn, cfg, 0, 0);

    const OrientedRect blocker_rect = footprint_rect(scn.vehicles[1], scn.pose(1, 0));
    std::size_t target_cells = 0;
    detail_world::for_each_footprint_cell(scn, win, 0, 2, [&](int r, int c, int, double cx, double cy) {
        ++target_cells;
        CHECK(obs.at(r, c) == 0);
        CHECK(oracle_blocked(0, 0, cx, cy, blocker_rect));
    });
    CHECK(target_cells > 0);

    // The blocker itself is visible.
    std::size_t blocker_visible = 0;
    detail_world::for_each_footprint_cell(scn, win, 0, 1, [&](int r, int c, int, double, double) {
        blocker_visible += obs.at(r, c);
    });
    CHECK(blocker_visible > 0);

    CHECK_THROWS_AS(agent_observation(scn, cfg, 0, 1), ArgumentError);  // not a CAV
    CHECK_THROWS_AS(agent_observation(scn, cfg, 5, 0), ArgumentError);  // no such frame
}

TEST_CASE("observation: union over agents contains each single view, gt contains all") {
    const WorldConfig cfg = test_cfg();
    for (std::uint64_t seed = 200; seed < 205; ++seed) {
        const Scenario s = generate_scenario(cfg, seed);
        const int frame = 10;
        const BinaryGrid gt = ground_truth_map(s, cfg, frame);
        BinaryGrid uni{cfg.grid_cells, cfg.grid_cells,
                       std::vector<std::uint8_t>(gt.cells.size(), 0)};
        for (int id : s.cav_ids) {
            const BinaryGrid o = agent_observation(s, cfg, frame, id);
            for (std::size_t i = 0; i < o.cells.size(); ++i) {
                if (o.cells[i]) CHECK(gt.cells[i] == 1);  // visibility only removes
                uni.cells[i] |= o.cells[i];
            }
        }
        const BinaryGrid ego = agent_observation(s, cfg, frame, s.ego_id);
        for (std::size_t i = 0; i < ego.cells.size(); ++i)
            if (ego.cells[i]) CHECK(uni.cells[i] == 1);
    }
}

TEST_CASE("observation: enlarging the sensor range never removes cells") {
    WorldConfig cfg = test_cfg();
    const Scenario s = generate_scenario(cfg, 77);
    const BinaryGrid base = agent_observation(s, cfg, 7, s.ego_id);
    WorldConfig wider = cfg;
    wider.sensor_range_m = cfg.sensor_range_m * 1.5;
    const BinaryGrid more = agent_observation(s, wider, 7, s.ego_id);
    for (std::size_t i = 0; i < base.cells.size(); ++i)
        if (base.cells[i]) CHECK(more.cells[i] == 1);
}

TEST_CASE("ground truth: translation consistency under a global 5 m shift") {
    const WorldConfig cfg = test_cfg();
    Scenario s = generate_scenario(cfg, 55);
    std::vector<BinaryGrid> before;
    for (int f = 0; f < s.n_frames(); f += 7) before.push_back(ground_truth_map(s, cfg, f));
    for (auto& v : s.vehicles)
        for (auto& p : v.poses) {
            p.x += 5.0f;
            p.y += 5.0f;
        }
    int idx = 0;
    for (int f = 0; f < s.n_frames(); f += 7) CHECK(ground_truth_map(s, cfg, f) == before[std::size_t(idx++)]);
}

TEST_CASE("ground truth: lone ego produces exactly its own footprint") {
    WorldConfig cfg = test_cfg();
    Scenario scn = static_scenario({static_vehicle(3, -2, 0.7f)}, {0}, 0);
    const BinaryGrid gt = ground_truth_map(scn, cfg, 0);
    const BinaryGrid own = agent_observation(scn, cfg, 0, 0);
    CHECK(gt == own);
    CHECK(gt.count() > 0);
}

TEST_CASE("comm schedule: range gate, failure windows, full connectivity") {
    WorldConfig cfg = test_cfg();
    Scenario scn = static_scenario(
        {static_vehicle(0, 0, 0), static_vehicle(71, 0, 0), static_vehicle(69, 0, 0)}, {0, 1, 2}, 0,
        40);

    SECTION("a CAV at 71 m is excluded, one at 69 m included") {
        const CommSchedule sched = comm_schedule(scn, cfg);
        REQUIRE(int(sched.available.size()) == 40);
        CHECK(sched.available[0] == std::vector<int>{0, 2});
    }
    SECTION("failure window collapses to exactly the ego") {
        const CommSchedule sched = comm_schedule(scn, cfg, {{30, 33}});
        for (int f = 30; f <= 33; ++f) CHECK(sched.available[std::size_t(f)] == std::vector<int>{0});
        CHECK(sched.available[29] == std::vector<int>{0, 2});
        CHECK(sched.available[34] == std::vector<int>{0, 2});
    }
    SECTION("all CAVs within range are always listed") {
        Scenario close = static_scenario(
            {static_vehicle(0, 0, 0), static_vehicle(10, 0, 0), static_vehicle(0, 12, 0)}, {0, 1, 2},
            0, 5);
        const CommSchedule sched = comm_schedule(close, cfg);
        for (const auto& frame : sched.available) CHECK(frame == std::vector<int>{0, 1, 2});
    }
    SECTION("malformed windows are rejected") {
        CHECK_THROWS_AS(comm_schedule(scn, cfg, {{5, 3}}), ArgumentError);
        CHECK_THROWS_AS(comm_schedule(scn, cfg, {{0, 40}}), ArgumentError);
    }
}

TEST_CASE("cooperation value: fused observations beat ego-only on average") {
    const WorldConfig cfg = test_cfg();
    double fused_cells = 0, ego_cells = 0;
    for (std::uint64_t seed = 400; seed < 420; ++seed) {
        const Scenario s = generate_scenario(cfg, seed);
        const CommSchedule sched = comm_schedule(s, cfg);
        for (int f = 0; f < s.n_frames(); f += 6) {
            BinaryGrid uni{cfg.grid_cells, cfg.grid_cells,
                           std::vector<std::uint8_t>(std::size_t(cfg.grid_cells) * cfg.grid_cells, 0)};
            for (int id : sched.available[std::size_t(f)]) {
                const BinaryGrid o = agent_observation(s, cfg, f, id);
                for (std::size_t i = 0; i < o.cells.size(); ++i) uni.cells[i] |= o.cells[i];
            }
            fused_cells += double(uni.count());
            ego_cells += double(agent_observation(s, cfg, f, s.ego_id).count());
        }
    }
    INFO("fused=" << fused_cells << " ego=" << ego_cells);
    CHECK(fused_cells > ego_cells * 1.2);
}

TEST_CASE("scenario file roundtrip is field-exact") {
    const WorldConfig cfg = test_cfg();
    const Scenario s = generate_scenario(cfg, 31, EgoSelection::lowest_cav, 9);
    const auto path = std::filesystem::temp_directory_path() / "tbev_test_scn.tbw";
    save_scenario(path, s);
    const Scenario r = load_scenario(path);
    CHECK(r.scenario_id == s.scenario_id);
    CHECK(r.world_size_m == s.world_size_m);
    CHECK(r.dt == s.dt);
    CHECK(r.ego_id == s.ego_id);
    CHECK(r.cav_ids == s.cav_ids);
    REQUIRE(r.n_vehicles() == s.n_vehicles());
    for (int v = 0; v < s.n_vehicles(); ++v) {
        CHECK(r.vehicles[std::size_t(v)].length == s.vehicles[std::size_t(v)].length);
        CHECK(r.vehicles[std::size_t(v)].width == s.vehicles[std::size_t(v)].width);
        for (int f = 0; f < s.n_frames(); ++f) {
            CHECK(r.pose(v, f).x == s.pose(v, f).x);
            CHECK(r.pose(v, f).y == s.pose(v, f).y);
            CHECK(r.pose(v, f).heading == s.pose(v, f).heading);
        }
    }
    // Byte-identical on re-save.
    const auto digest1 = file_digest(path);
    save_scenario(path, r);
    CHECK(file_digest(path) == digest1);
    std::filesystem::remove(path);
}
