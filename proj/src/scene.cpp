#include "vdrive/scene.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "vdrive/rng.hpp"
#include "vdrive/vdtn.hpp"

namespace vdrive::scene {

namespace fs = std::filesystem;
using nlohmann::json;

Tensor GridMask::to_tensor() const {
    Tensor t({h, w});
    for (std::size_t i = 0; i < v.size(); ++i) t.data[i] = v[i] ? 1.0f : 0.0f;
    return t;
}

GridMask GridMask::from_tensor(const Tensor& t) {
    if (t.rank() != 2) throw ValidationError("mask: expected rank 2, got dims " + dims_to_string(t.dims));
    GridMask m(t.dims[1], t.dims[0]);
    for (std::size_t i = 0; i < t.numel(); ++i) {
        if (t.data[i] != 0.0f && t.data[i] != 1.0f) {
            throw ValidationError("mask: non-binary value at flat index " + std::to_string(i));
        }
        m.v[i] = t.data[i] == 1.0f ? 1 : 0;
    }
    return m;
}

Point Arc::at(double s) const {
    if (kappa == 0.0) return {x0, y0 - s};
    return {x0 + (1.0 - std::cos(kappa * s)) / kappa, y0 - std::sin(kappa * s) / kappa};
}

double Arc::center_x(double y) const {
    if (kappa == 0.0) return x0;
    double u = std::clamp(kappa * (y0 - y), -0.999, 0.999);
    double s = std::asin(u) / kappa;
    return at(s)[0];
}

void SceneParams::validate() const {
    if (h < 16 || w < 16) throw ValidationError("scene: grid must be at least 16x16");
    if (corridor_min < 3) throw ValidationError("scene: corridor width must be >= 3 pixels");
    if (corridor_max < corridor_min) throw ValidationError("scene: corridor width range inverted");
    if (static_cast<std::size_t>(corridor_max) >= w) {
        throw ValidationError("scene: corridor wider than the grid (max " + std::to_string(corridor_max) +
                              " vs W " + std::to_string(w) + ")");
    }
    if (n_points < 2) throw ValidationError("scene: trajectory needs at least 2 points");
    if (speed_min <= 0 || speed_max < speed_min) throw ValidationError("scene: bad speed range");
    if (curv_max < 0) throw ValidationError("scene: negative curvature range");
    if (obstacles_min < 0 || obstacles_max < obstacles_min) throw ValidationError("scene: bad obstacle range");
}

double speed_from_action(const ActionTriplet& a) {
    return kSpeedScale * std::max(static_cast<double>(a.throttle) - static_cast<double>(a.brake), 0.05);
}

namespace {

// Drivable run of one row: [round(center)-hw, round(center)+hw], clipped.
struct RowRun {
    int lo, hi;  // inclusive
};

RowRun row_run(const Arc& arc, int hw, std::size_t w, int row) {
    int c = static_cast<int>(std::lround(arc.center_x(static_cast<double>(row))));
    int lo = std::max(0, c - hw);
    int hi = std::min(static_cast<int>(w) - 1, c + hw);
    return {lo, hi};
}

void fill_corridor(GridMask& mask, const Arc& arc, int hw) {
    for (std::size_t y = 0; y < mask.h; ++y) {
        RowRun r = row_run(arc, hw, mask.w, static_cast<int>(y));
        for (int x = r.lo; x <= r.hi; ++x) mask.set(static_cast<std::size_t>(x), y, 1);
    }
}

// Pulls any waypoint whose floor pixel is not drivable back to its row center.
void snap_to_drivable(std::vector<Point>& traj, const GridMask& mask) {
    for (auto& p : traj) {
        std::size_t px = static_cast<std::size_t>(p[0]);
        std::size_t py = static_cast<std::size_t>(p[1]);
        if (px < mask.w && py < mask.h && mask.at(px, py)) continue;
        int lo = -1, hi = -1;
        for (std::size_t x = 0; x < mask.w; ++x) {
            if (mask.at(x, py)) {
                if (lo < 0) lo = static_cast<int>(x);
                hi = static_cast<int>(x);
            }
        }
        if (lo >= 0) p[0] = 0.5 * (lo + hi);
    }
}

std::vector<Point> arc_waypoints(const Arc& arc, double speed, std::size_t n, int t0, std::size_t w,
                                 std::size_t h) {
    std::vector<Point> traj(n);
    for (std::size_t t = 0; t < n; ++t) {
        Point p = arc.at((static_cast<double>(t0) + static_cast<double>(t)) * speed);
        p[0] = std::clamp(p[0], 0.0, static_cast<double>(w) - 1e-3);
        p[1] = std::clamp(p[1], 0.0, static_cast<double>(h) - 1e-3);
        traj[t] = p;
    }
    return traj;
}

ActionTriplet action_for(double steering, double speed) {
    ActionTriplet a;
    a.steering = static_cast<float>(std::clamp(steering, -1.0, 1.0));
    a.throttle = static_cast<float>(std::clamp(speed / kSpeedScale, 0.0, 1.0));
    a.brake = 0.0f;
    return a;
}

NavCommand nav_for(const std::vector<Point>& traj) {
    double dx = traj.back()[0] - traj.front()[0];
    if (dx < -2.0) return NavCommand::left();
    if (dx > 2.0) return NavCommand::right();
    return NavCommand::straight();
}

Tensor render_image(const GridMask& drivable, const GridMask& obstacle, std::size_t channels, Rng& rng) {
    Tensor img({drivable.h, drivable.w, channels});
    for (std::size_t y = 0; y < drivable.h; ++y) {
        for (std::size_t x = 0; x < drivable.w; ++x) {
            double base = 0.08;
            if (obstacle.at(x, y)) base = 0.35;
            if (drivable.at(x, y)) base = 0.85;
            for (std::size_t c = 0; c < channels; ++c) {
                double v = base + 0.03 * rng.normal();
                img.data[(y * drivable.w + x) * channels + c] =
                    static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    }
    return img;
}

bool waypoint_violates(const SceneSample& s, const std::vector<Point>& traj) {
    for (const auto& p : traj) {
        std::size_t px = static_cast<std::size_t>(p[0]);
        std::size_t py = static_cast<std::size_t>(p[1]);
        if (px >= s.drivable_mask.w || py >= s.drivable_mask.h) return true;
        if (!s.drivable_mask.at(px, py)) return true;
        for (const auto& r : s.obstacles) {
            if (r.contains(p[0], p[1])) return true;
        }
    }
    return false;
}

}  // namespace

SceneSample generate_scene(std::uint64_t seed, const SceneParams& params) {
    params.validate();
    Rng rng(seed);
    SceneSample s;
    s.id = seed;
    const std::size_t W = params.w, H = params.h;

    int width = rng.uniform_int(params.corridor_min, params.corridor_max);
    s.half_width = std::max(1, width / 2);
    double steering = params.curv_max > 0 ? rng.uniform(-params.curv_max, params.curv_max) : 0.0;
    // quantized to 1/64 px so the value survives the f32 ego_speed field and
    // throttle = speed/8 round-trips exactly
    double speed = std::round(rng.uniform(params.speed_min, params.speed_max) * 64.0) / 64.0;
    int x0 = rng.uniform_int(static_cast<int>(W / 2 - W / 8), static_cast<int>(W / 2 + W / 8));

    s.arc.x0 = static_cast<double>(x0);
    s.arc.y0 = static_cast<double>(H) - 3.0;
    s.arc.kappa = kKappaPerSteering * steering;

    // keep the whole corridor inside the grid; flatten the arc if needed
    for (int attempt = 0; attempt < 9; ++attempt) {
        bool ok = true;
        for (std::size_t y = 0; y < H && ok; ++y) {
            double c = s.arc.center_x(static_cast<double>(y));
            ok = c - s.half_width >= 1.0 && c + s.half_width <= static_cast<double>(W) - 2.0;
        }
        if (ok) break;
        steering *= 0.5;
        s.arc.kappa = kKappaPerSteering * steering;
        if (attempt == 7) {
            steering = 0.0;
            s.arc.kappa = 0.0;
            s.arc.x0 = static_cast<double>(W / 2);
        }
    }

    s.drivable_mask = GridMask(W, H);
    fill_corridor(s.drivable_mask, s.arc, s.half_width);

    // obstacles: axis-aligned boxes kept >= 2 px away from the corridor
    s.obstacle_mask = GridMask(W, H);
    int n_obstacles = rng.uniform_int(params.obstacles_min, params.obstacles_max);
    for (int i = 0; i < n_obstacles; ++i) {
        for (int attempt = 0; attempt < 40; ++attempt) {
            int rw = rng.uniform_int(3, 8);
            int rh = rng.uniform_int(3, 8);
            int rx = rng.uniform_int(0, static_cast<int>(W) - rw);
            int ry = rng.uniform_int(0, static_cast<int>(H) - rh);
            bool clear = true;
            for (int y = std::max(0, ry - 2); y < std::min(static_cast<int>(H), ry + rh + 2) && clear; ++y) {
                RowRun run = row_run(s.arc, s.half_width + 2, W, y);
                clear = rx + rw <= run.lo || rx > run.hi;
            }
            if (clear) {
                Rect r{rx, ry, rw, rh};
                s.obstacles.push_back(r);
                for (int y = ry; y < ry + rh; ++y)
                    for (int x = rx; x < rx + rw; ++x) s.obstacle_mask.set(x, y, 1);
                break;
            }
        }
    }

    s.trajectory = arc_waypoints(s.arc, speed, params.n_points, 0, W, H);
    snap_to_drivable(s.trajectory, s.drivable_mask);
    s.ego_speed = static_cast<float>(speed);
    s.action = action_for(steering, speed);
    s.nav = nav_for(s.trajectory);
    s.seg_target = s.drivable_mask;
    s.image = render_image(s.drivable_mask, s.obstacle_mask, params.channels, rng);
    s.tag = "annotated-safe";
    s.time_index = 0;
    return s;
}

SceneSample generate_risky_variant(const SceneSample& base, std::uint64_t seed) {
    Rng rng(seed);
    SceneSample v = base;
    v.id = seed;
    v.tag = "synthetic-risky";
    const std::size_t n = base.trajectory.size();
    const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
    double mag = static_cast<double>(base.half_width) + 2.0;

    bool violated = false;
    for (int attempt = 0; attempt < 10 && !violated; ++attempt) {
        v.trajectory = base.trajectory;
        for (std::size_t t = 0; t < n; ++t) {
            double shear = sign * mag * static_cast<double>(t) / static_cast<double>(n - 1);
            v.trajectory[t][0] = std::clamp(base.trajectory[t][0] + shear, 0.0,
                                            static_cast<double>(base.drivable_mask.w) - 1e-3);
        }
        violated = waypoint_violates(base, v.trajectory);
        mag *= 1.6;
    }
    if (!violated) {
        // force the final point onto a non-drivable pixel of its row
        auto& p = v.trajectory.back();
        std::size_t py = static_cast<std::size_t>(p[1]);
        for (std::size_t x = 0; x < base.drivable_mask.w; ++x) {
            if (!base.drivable_mask.at(x, py)) {
                p[0] = static_cast<double>(x) + 0.5;
                break;
            }
        }
    }
    v.action.steering = static_cast<float>(std::clamp(base.action.steering + sign * 0.6, -1.0, 1.0));
    v.nav = nav_for(v.trajectory);
    return v;
}

SceneSample advance_scene(const SceneSample& base, int k) {
    SceneSample next = base;
    next.time_index = base.time_index + k;
    next.id = derive_seed(base.id, 0x5453ull + static_cast<std::uint64_t>(next.time_index));
    double speed = base.ego_speed;
    double last_s = (next.time_index + static_cast<double>(base.trajectory.size()) - 1.0) * speed;
    bool in_span = base.arc.kappa == 0.0 ? base.arc.at(last_s)[1] >= 0.0
                                         : std::abs(base.arc.kappa * last_s) < 1.45;
    if (next.time_index < 0 || !in_span || base.arc.at(last_s)[1] < 0.0) {
        throw ValidationError("advance_scene: horizon leaves the grid at time index " +
                              std::to_string(next.time_index));
    }
    next.trajectory = arc_waypoints(base.arc, speed, base.trajectory.size(), next.time_index,
                                    base.drivable_mask.w, base.drivable_mask.h);
    snap_to_drivable(next.trajectory, next.drivable_mask);
    next.nav = nav_for(next.trajectory);
    return next;
}

std::vector<Point> roll_action(const SceneSample& s, const ActionTriplet& a, std::size_t n) {
    Arc arc;
    arc.x0 = s.trajectory.front()[0];
    arc.y0 = s.trajectory.front()[1];
    arc.kappa = kKappaPerSteering * static_cast<double>(a.steering);
    return arc_waypoints(arc, speed_from_action(a), n, 0, s.drivable_mask.w, s.drivable_mask.h);
}

std::vector<Rect> mask_to_rects(const GridMask& m) {
    std::vector<Rect> out;
    // open rectangles keyed by column span
    std::map<std::pair<int, int>, Rect> open;
    for (std::size_t y = 0; y <= m.h; ++y) {
        std::map<std::pair<int, int>, Rect> next;
        if (y < m.h) {
            std::size_t x = 0;
            while (x < m.w) {
                if (!m.at(x, y)) {
                    ++x;
                    continue;
                }
                std::size_t lo = x;
                while (x < m.w && m.at(x, y)) ++x;
                auto key = std::make_pair(static_cast<int>(lo), static_cast<int>(x));
                auto it = open.find(key);
                if (it != open.end()) {
                    Rect r = it->second;
                    r.h += 1;
                    next[key] = r;
                    open.erase(it);
                } else {
                    next[key] = Rect{static_cast<int>(lo), static_cast<int>(y),
                                     static_cast<int>(x - lo), 1};
                }
            }
        }
        for (auto& [k, r] : open) out.push_back(r);
        open = std::move(next);
    }
    return out;
}

namespace {

json scene_entry(const SceneSample& s, const std::string& mask_path, const std::string& obstacle_path,
                 const std::string& image_path) {
    json traj = json::array();
    for (const auto& p : s.trajectory) traj.push_back({p[0], p[1]});
    return json{{"id", s.id},
                {"mask_path", mask_path},
                {"obstacle_path", obstacle_path},
                {"image_path", image_path},
                {"traj", traj},
                {"action", {s.action.steering, s.action.throttle, s.action.brake}},
                {"nav", {s.nav.one_hot[0], s.nav.one_hot[1], s.nav.one_hot[2]}},
                {"speed", s.ego_speed},
                {"tag", s.tag}};
}

std::string write_scene_tensors(const SceneSample& s, const std::string& dir, const std::string& stem,
                                std::string* obstacle_path, std::string* image_path) {
    std::string mask_path = stem + "_mask.vdtn";
    *obstacle_path = stem + "_obst.vdtn";
    *image_path = stem + "_img.vdtn";
    save_vdtn((fs::path(dir) / mask_path).string(), s.drivable_mask.to_tensor());
    save_vdtn((fs::path(dir) / *obstacle_path).string(), s.obstacle_mask.to_tensor());
    save_vdtn((fs::path(dir) / *image_path).string(), s.image);
    return mask_path;
}

SceneSample scene_from_entry(const json& e, const std::string& base_dir) {
    SceneSample s;
    s.id = e.at("id").get<std::uint64_t>();
    s.drivable_mask = GridMask::from_tensor(load_vdtn((fs::path(base_dir) / e.at("mask_path").get<std::string>()).string()));
    s.obstacle_mask = GridMask::from_tensor(load_vdtn((fs::path(base_dir) / e.at("obstacle_path").get<std::string>()).string()));
    s.image = load_vdtn((fs::path(base_dir) / e.at("image_path").get<std::string>()).string());
    s.seg_target = s.drivable_mask;
    for (const auto& p : e.at("traj")) s.trajectory.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    s.action.steering = e.at("action").at(0).get<float>();
    s.action.throttle = e.at("action").at(1).get<float>();
    s.action.brake = e.at("action").at(2).get<float>();
    s.nav.one_hot = {e.at("nav").at(0).get<int>(), e.at("nav").at(1).get<int>(), e.at("nav").at(2).get<int>()};
    s.ego_speed = e.at("speed").get<float>();
    s.tag = e.at("tag").get<std::string>();
    s.obstacles = mask_to_rects(s.obstacle_mask);
    return s;
}

}  // namespace

std::string write_scene_dataset(const std::vector<SceneSample>& scenes, const std::string& dir) {
    fs::create_directories(dir);
    std::string manifest_path = (fs::path(dir) / "manifest.jsonl").string();
    std::ofstream out(manifest_path, std::ios::binary);
    if (!out) throw ValidationError("scene dataset: cannot write " + manifest_path);
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        const auto& s = scenes[i];
        std::string stem = "scene_" + std::to_string(i);
        std::string obstacle_path, image_path;
        std::string mask_path = write_scene_tensors(s, dir, stem, &obstacle_path, &image_path);
        out << scene_entry(s, mask_path, obstacle_path, image_path).dump() << "\n";
    }
    if (!out) throw ValidationError("scene dataset: write failed: " + manifest_path);
    return manifest_path;
}

SceneSample load_scene_entry(const std::string& json_line, const std::string& base_dir) {
    return scene_from_entry(json::parse(json_line), base_dir);
}

std::vector<SceneSample> load_scene_dataset(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw ValidationError("scene dataset: cannot open " + manifest_path);
    std::string base_dir = fs::path(manifest_path).parent_path().string();
    std::vector<SceneSample> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(load_scene_entry(line, base_dir));
    }
    return out;
}

std::string build_preference_dataset(std::size_t n_pairs, std::uint64_t seed, const SceneParams& params,
                                     const std::string& dir, std::vector<PreferencePair>* out_pairs) {
    if (n_pairs < 1) throw ValidationError("preference dataset: n_pairs must be >= 1");
    fs::create_directories(dir);
    std::string manifest_path = (fs::path(dir) / "pairs.jsonl").string();
    std::ofstream out(manifest_path, std::ios::binary);
    if (!out) throw ValidationError("preference dataset: cannot write " + manifest_path);
    for (std::size_t i = 0; i < n_pairs; ++i) {
        SceneSample base = generate_scene(derive_seed(seed, 2 * i), params);
        PreferencePair pair;
        pair.chosen = advance_scene(base, 1);
        pair.rejected = generate_risky_variant(pair.chosen, derive_seed(seed, 2 * i + 1));
        pair.context_trajectory = base.trajectory;
        pair.provenance = pair.rejected.tag;

        std::string c_obst, c_img, r_obst, r_img;
        std::string c_mask = write_scene_tensors(pair.chosen, dir, "pair_" + std::to_string(i) + "_chosen",
                                                 &c_obst, &c_img);
        std::string r_mask = write_scene_tensors(pair.rejected, dir, "pair_" + std::to_string(i) + "_rejected",
                                                 &r_obst, &r_img);
        json ctx = json::array();
        for (const auto& p : pair.context_trajectory) ctx.push_back({p[0], p[1]});
        json row{{"pair_id", i},
                 {"provenance", pair.provenance},
                 {"context_traj", ctx},
                 {"chosen", scene_entry(pair.chosen, c_mask, c_obst, c_img)},
                 {"rejected", scene_entry(pair.rejected, r_mask, r_obst, r_img)}};
        out << row.dump() << "\n";
        if (out_pairs) out_pairs->push_back(std::move(pair));
    }
    if (!out) throw ValidationError("preference dataset: write failed: " + manifest_path);
    return manifest_path;
}

std::vector<PreferencePair> load_preference_dataset(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw ValidationError("preference dataset: cannot open " + manifest_path);
    std::string base_dir = fs::path(manifest_path).parent_path().string();
    std::vector<PreferencePair> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json row = json::parse(line);
        PreferencePair p;
        p.chosen = scene_from_entry(row.at("chosen"), base_dir);
        p.rejected = scene_from_entry(row.at("rejected"), base_dir);
        for (const auto& q : row.at("context_traj")) {
            p.context_trajectory.push_back({q.at(0).get<double>(), q.at(1).get<double>()});
        }
        p.provenance = row.at("provenance").get<std::string>();
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace vdrive::scene
