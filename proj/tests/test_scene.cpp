#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "vdrive/reward.hpp"
#include "vdrive/rng.hpp"
#include "vdrive/scene.hpp"

using namespace vdrive;
using namespace vdrive::scene;

namespace {

bool scenes_identical(const SceneSample& a, const SceneSample& b) {
    return a.drivable_mask == b.drivable_mask && a.obstacle_mask == b.obstacle_mask &&
           a.image.data == b.image.data && a.trajectory == b.trajectory &&
           a.action.steering == b.action.steering && a.action.throttle == b.action.throttle &&
           a.action.brake == b.action.brake && a.nav.one_hot == b.nav.one_hot &&
           a.ego_speed == b.ego_speed;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

TEST_SUITE_BEGIN("scene");

TEST_CASE("generation is a pure function of (seed, params)") {
    SceneParams params;
    auto a = generate_scene(123456, params);
    auto b = generate_scene(123456, params);
    CHECK(scenes_identical(a, b));
    auto c = generate_scene(123457, params);
    CHECK_FALSE(scenes_identical(a, c));
}

TEST_CASE("zero curvature range gives a straight corridor with constant-x trajectory") {
    SceneParams params;
    params.curv_max = 0.0;
    auto s = generate_scene(99, params);
    for (const auto& p : s.trajectory) CHECK(p[0] == doctest::Approx(s.trajectory[0][0]));
    CHECK(s.nav.one_hot == std::array<int, 3>{0, 1, 0});
    CHECK(s.action.steering == 0.0f);
}

TEST_CASE("infeasible params are rejected") {
    SceneParams params;
    params.corridor_max = 64;  // as wide as the grid
    CHECK_THROWS_AS(generate_scene(1, params), ValidationError);
    params = SceneParams{};
    params.corridor_min = 2;
    CHECK_THROWS_AS(generate_scene(1, params), ValidationError);
    params = SceneParams{};
    params.h = 8;
    CHECK_THROWS_AS(generate_scene(1, params), ValidationError);
}

TEST_CASE("100 random seeds: trajectories on-road, masks disjoint, actions consistent") {
    SceneParams params;
    for (std::uint64_t i = 0; i < 100; ++i) {
        auto s = generate_scene(derive_seed(777, i), params);
        // off-road penalty of the ground-truth trajectory is 0
        CHECK(reward::off_road_penalty(s.drivable_mask, s.trajectory) == 0);
        // drivable and obstacle masks never overlap
        int overlap = 0;
        for (std::size_t k = 0; k < s.drivable_mask.v.size(); ++k) {
            overlap += s.drivable_mask.v[k] & s.obstacle_mask.v[k];
        }
        CHECK(overlap == 0);
        // steering sign matches lateral displacement direction
        double dx = s.trajectory.back()[0] - s.trajectory.front()[0];
        if (s.action.steering > 0.01f) CHECK(dx > 0);
        if (s.action.steering < -0.01f) CHECK(dx < 0);
        // bounds
        for (const auto& p : s.trajectory) {
            CHECK(p[0] >= 0);
            CHECK(p[0] < static_cast<double>(params.w));
            CHECK(p[1] >= 0);
            CHECK(p[1] < static_cast<double>(params.h));
        }
        CHECK(s.nav.valid());
        CHECK(s.action.steering >= -1.0f);
        CHECK(s.action.steering <= 1.0f);
        CHECK(s.action.throttle >= 0.0f);
        CHECK(s.action.throttle <= 1.0f);
    }
}

TEST_CASE("risky variant violates the road, keeps masks, lands at -beta") {
    SceneParams params;
    reward::RewardConfig cfg;
    for (std::uint64_t i = 0; i < 50; ++i) {
        auto base = generate_scene(derive_seed(31, i), params);
        auto risky = generate_risky_variant(base, derive_seed(32, i));
        CHECK(risky.drivable_mask == base.drivable_mask);
        CHECK(risky.obstacle_mask == base.obstacle_mask);

        bool off_road = reward::off_road_penalty(base.drivable_mask, risky.trajectory) > 0;
        bool obstacle_hit = false;
        for (const auto& p : risky.trajectory) {
            for (const auto& r : base.obstacles) obstacle_hit |= r.contains(p[0], p[1]);
        }
        CHECK((off_road || obstacle_hit));

        auto rr = reward::rule_reward(base.drivable_mask, risky.trajectory, cfg);
        CHECK(rr.r_h == doctest::Approx(-cfg.beta));
    }
}

TEST_CASE("advance_scene slides the horizon forward along the same map") {
    SceneParams params;
    auto s = generate_scene(2718, params);
    auto next = advance_scene(s, 1);
    CHECK(next.drivable_mask == s.drivable_mask);
    CHECK(next.trajectory.size() == s.trajectory.size());
    // the successor's first points coincide with the predecessor's later ones
    for (std::size_t t = 0; t + 1 < s.trajectory.size(); ++t) {
        CHECK(next.trajectory[t][0] == doctest::Approx(s.trajectory[t + 1][0]).epsilon(1e-9));
        CHECK(next.trajectory[t][1] == doctest::Approx(s.trajectory[t + 1][1]).epsilon(1e-9));
    }
    CHECK(reward::off_road_penalty(next.drivable_mask, next.trajectory) == 0);
    CHECK_THROWS_AS(advance_scene(s, 1000), ValidationError);
}

TEST_CASE("roll_action with the scene's own action reproduces its trajectory") {
    SceneParams params;
    for (std::uint64_t i = 0; i < 20; ++i) {
        auto s = generate_scene(derive_seed(4242, i), params);
        auto rolled = roll_action(s, s.action, s.trajectory.size());
        for (std::size_t t = 0; t < rolled.size(); ++t) {
            CHECK(rolled[t][0] == doctest::Approx(s.trajectory[t][0]).epsilon(1e-6));
            CHECK(rolled[t][1] == doctest::Approx(s.trajectory[t][1]).epsilon(1e-6));
        }
    }
}

TEST_CASE("mask_to_rects reconstructs the exact union") {
    Rng rng(88);
    for (int trial = 0; trial < 50; ++trial) {
        GridMask m(20, 20);
        int nrects = 1 + static_cast<int>(rng.uniform_index(4));
        for (int i = 0; i < nrects; ++i) {
            int w = 1 + static_cast<int>(rng.uniform_index(8));
            int h = 1 + static_cast<int>(rng.uniform_index(8));
            int x = static_cast<int>(rng.uniform_index(20 - w));
            int y = static_cast<int>(rng.uniform_index(20 - h));
            for (int yy = y; yy < y + h; ++yy)
                for (int xx = x; xx < x + w; ++xx) m.set(xx, yy, 1);
        }
        auto rects = mask_to_rects(m);
        GridMask rebuilt(20, 20);
        for (const auto& r : rects) {
            for (int yy = r.y; yy < r.y + r.h; ++yy)
                for (int xx = r.x; xx < r.x + r.w; ++xx) rebuilt.set(xx, yy, 1);
        }
        CHECK(rebuilt == m);
    }
}

TEST_CASE("scene dataset writes and reloads faithfully") {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / "vdrive_scene_ds";
    fs::remove_all(dir);
    SceneParams params;
    std::vector<SceneSample> scenes;
    for (std::uint64_t i = 0; i < 3; ++i) scenes.push_back(generate_scene(derive_seed(5, i), params));
    auto manifest = write_scene_dataset(scenes, dir.string());
    auto loaded = load_scene_dataset(manifest);
    REQUIRE(loaded.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(loaded[i].id == scenes[i].id);
        CHECK(loaded[i].drivable_mask == scenes[i].drivable_mask);
        CHECK(loaded[i].obstacle_mask == scenes[i].obstacle_mask);
        CHECK(loaded[i].image.data == scenes[i].image.data);
        CHECK(loaded[i].ego_speed == scenes[i].ego_speed);
        CHECK(loaded[i].nav.one_hot == scenes[i].nav.one_hot);
        REQUIRE(loaded[i].trajectory.size() == scenes[i].trajectory.size());
        for (std::size_t t = 0; t < scenes[i].trajectory.size(); ++t) {
            CHECK(loaded[i].trajectory[t][0] == doctest::Approx(scenes[i].trajectory[t][0]));
            CHECK(loaded[i].trajectory[t][1] == doctest::Approx(scenes[i].trajectory[t][1]));
        }
        // obstacle boxes recovered from the mask cover the same pixels
        GridMask rebuilt(params.w, params.h);
        for (const auto& r : loaded[i].obstacles)
            for (int yy = r.y; yy < r.y + r.h; ++yy)
                for (int xx = r.x; xx < r.x + r.w; ++xx) rebuilt.set(xx, yy, 1);
        CHECK(rebuilt == scenes[i].obstacle_mask);
    }
}

TEST_CASE("preference dataset: counts, invariants, byte-identical regeneration") {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / "vdrive_pref_ds";
    fs::remove_all(dir);
    SceneParams params;
    reward::RewardConfig cfg;

    std::vector<PreferencePair> pairs;
    auto manifest = build_preference_dataset(1, 909, params, dir.string(), &pairs);
    {
        std::ifstream f(manifest);
        std::string line;
        int rows = 0;
        while (std::getline(f, line)) {
            if (!line.empty()) ++rows;
        }
        CHECK(rows == 1);
    }
    REQUIRE(pairs.size() == 1);

    auto dir2 = fs::temp_directory_path() / "vdrive_pref_ds2";
    fs::remove_all(dir2);
    auto manifest2 = build_preference_dataset(1, 909, params, dir2.string());
    CHECK(slurp(manifest) == slurp(manifest2));

    fs::remove_all(dir);
    std::vector<PreferencePair> many;
    build_preference_dataset(16, 909, params, dir.string(), &many);
    for (const auto& p : many) {
        CHECK(p.chosen.id != p.rejected.id);
        CHECK(reward::off_road_penalty(p.chosen.drivable_mask, p.chosen.trajectory) == 0);
        bool violated = reward::off_road_penalty(p.rejected.drivable_mask, p.rejected.trajectory) > 0;
        for (const auto& pt : p.rejected.trajectory) {
            for (const auto& r : p.rejected.obstacles) violated |= r.contains(pt[0], pt[1]);
        }
        CHECK(violated);
        // hybrid reward separation: chosen strictly above rejected
        auto chosen_rec = reward::score_scene(p.chosen, p.chosen.trajectory, cfg);
        auto rejected_rec = reward::score_scene(p.rejected, p.rejected.trajectory, cfg);
        CHECK(chosen_rec.r > rejected_rec.r);
        CHECK(p.chosen.tag == "annotated-safe");
        CHECK(p.rejected.tag == "synthetic-risky");
    }

    auto reloaded = load_preference_dataset(manifest);
    CHECK(reloaded.size() == 16);
    CHECK(reloaded[0].context_trajectory.size() == params.n_points);

    CHECK_THROWS_AS(build_preference_dataset(0, 1, params, dir.string()), ValidationError);
}

TEST_SUITE_END();
