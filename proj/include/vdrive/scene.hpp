#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vdrive/tensor.hpp"

namespace vdrive::scene {

struct GridMask {
    std::size_t w = 0, h = 0;
    std::vector<std::uint8_t> v;

    GridMask() = default;
    GridMask(std::size_t w_, std::size_t h_) : w(w_), h(h_), v(w_ * h_, 0) {}

    std::uint8_t at(std::size_t x, std::size_t y) const { return v[y * w + x]; }
    void set(std::size_t x, std::size_t y, std::uint8_t val) { v[y * w + x] = val; }

    bool operator==(const GridMask& o) const { return w == o.w && h == o.h && v == o.v; }

    Tensor to_tensor() const;
    static GridMask from_tensor(const Tensor& t);
};

// [x, x+w) x [y, y+h), axis aligned.
struct Rect {
    int x = 0, y = 0, w = 0, h = 0;
    bool contains(double px, double py) const {
        return px >= x && px < x + w && py >= y && py < y + h;
    }
};

struct ActionTriplet {
    float steering = 0.0f;  // [-1, 1]
    float throttle = 0.0f;  // [0, 1]
    float brake = 0.0f;     // [0, 1]
};

// Exactly one of {left, straight, right}.
struct NavCommand {
    std::array<int, 3> one_hot = {0, 1, 0};

    static NavCommand left() { return {{1, 0, 0}}; }
    static NavCommand straight() { return {{0, 1, 0}}; }
    static NavCommand right() { return {{0, 0, 1}}; }
    bool valid() const { return one_hot[0] + one_hot[1] + one_hot[2] == 1; }
    int index() const { return one_hot[0] ? 0 : (one_hot[1] ? 1 : 2); }
};

using Point = std::array<double, 2>;  // (x, y) pixel coordinates, origin top-left

// Constant-curvature arc: the backbone of corridor geometry and of rolling
// actions into trajectories. Positions are closed form, no integration.
struct Arc {
    double x0 = 0, y0 = 0;  // start position
    double kappa = 0;       // signed curvature, rad per pixel of arc length
    Point at(double s) const;        // position after arc length s (s may be negative)
    double center_x(double y) const; // x of the arc at height y (requires monotone span)
};

struct SceneParams {
    std::size_t h = 64, w = 64, channels = 1;
    std::size_t n_points = 8;       // trajectory horizon
    int corridor_min = 9;           // full corridor width range, pixels
    int corridor_max = 15;
    double curv_max = 0.3;          // |steering| bound used for corridor curvature
    double speed_min = 5.0;         // pixels per trajectory step
    double speed_max = 7.0;
    int obstacles_min = 1;
    int obstacles_max = 3;

    void validate() const;
};

struct SceneSample {
    std::uint64_t id = 0;
    GridMask drivable_mask;
    GridMask obstacle_mask;
    Tensor image;               // h x w x c render of the masks plus noise
    GridMask seg_target;        // equals drivable_mask
    std::vector<Point> trajectory;
    ActionTriplet action;
    NavCommand nav;
    float ego_speed = 0.0f;     // pixels per step
    std::vector<Rect> obstacles;
    std::string tag = "annotated-safe";

    // generation state, kept so temporal successors can be derived exactly
    Arc arc;
    int half_width = 0;
    int time_index = 0;
};

struct PreferencePair {
    SceneSample chosen;
    SceneSample rejected;
    std::vector<Point> context_trajectory;  // trajectory of the shared frame at t-1
    std::string provenance = "synthetic-risky";
};

// steering -> curvature [rad/px]; throttle/brake -> pixels per step.
constexpr double kKappaPerSteering = 0.02;
constexpr double kSpeedScale = 8.0;

double speed_from_action(const ActionTriplet& a);

// Deterministic function of (seed, params). The ground-truth trajectory lies
// on drivable pixels and the steering sign matches the lateral displacement.
SceneSample generate_scene(std::uint64_t seed, const SceneParams& params);

// Same masks, trajectory sheared until at least one point is off-road or
// inside an obstacle. Magnitude grows over up to 10 attempts, then the last
// point is forced onto a non-drivable pixel.
SceneSample generate_risky_variant(const SceneSample& base, std::uint64_t seed);

// Temporal successor: same map, trajectory advanced k steps along the arc.
SceneSample advance_scene(const SceneSample& base, int k);

// Rolls an action from the scene's start pose into an n-point trajectory
// (constant steering / speed), clamped to the grid.
std::vector<Point> roll_action(const SceneSample& s, const ActionTriplet& a, std::size_t n);

// Decomposes a mask into axis-aligned rectangles whose union equals the mask.
std::vector<Rect> mask_to_rects(const GridMask& m);

// ---- dataset IO -----------------------------------------------------------

// Writes scenes/<id> VDTN payloads plus manifest.jsonl; returns manifest path.
std::string write_scene_dataset(const std::vector<SceneSample>& scenes, const std::string& dir);

// One manifest entry -> scene (arc state is not recoverable from disk).
SceneSample load_scene_entry(const std::string& json_line, const std::string& base_dir);
std::vector<SceneSample> load_scene_dataset(const std::string& manifest_path);

// Generates n_pairs (chosen, rejected) pairs; writes pairs.jsonl + tensors
// under dir; returns manifest path.
std::string build_preference_dataset(std::size_t n_pairs, std::uint64_t seed, const SceneParams& params,
                                     const std::string& dir, std::vector<PreferencePair>* out_pairs = nullptr);

std::vector<PreferencePair> load_preference_dataset(const std::string& manifest_path);

}  // namespace vdrive::scene
