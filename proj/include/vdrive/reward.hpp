#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vdrive/scene.hpp"

namespace vdrive::reward {

struct RewardConfig {
    double alpha = 2.0;    // centering kernel scale
    double beta = 10.0;    // off-road penalty magnitude, applied as -beta
    double omega_h = 1.0;  // rule-based weight
    double omega_a = 0.5;  // expert-rating weight

    void validate() const;
};

struct RowStats {
    int y = 0;
    int min_col = 0;
    int max_col = 0;
    double mean = 0.0;
    std::size_t count = 0;
    bool defined = false;
};

struct RuleReward {
    int p_off = 0;
    double r_center = 0.0;
    double r_h = 0.0;
};

struct RewardRecord {
    std::uint64_t id = 0;
    int p_off = 0;
    double r_center = 0.0;
    double r_h = 0.0;
    double r_a = 0.0;
    double r = 0.0;
    RewardConfig config;
};

// Deviation assigned to points on degenerate or empty rows; its squared value
// underflows the centering kernel to zero.
constexpr double kDeviationSentinel = 1e6;

// 0 iff the floor-indexed pixel is inside bounds and drivable; out-of-bounds
// counts as off-road.
int off_road_indicator(const scene::GridMask& mask, double x, double y);

// Sum of indicators over the whole trajectory.
int off_road_penalty(const scene::GridMask& mask, const std::vector<scene::Point>& traj);

RowStats row_stats(const scene::GridMask& mask, int y);

// |x - mean| / ((max - min) / 2); degenerate single-column rows yield 0 when
// exactly centered, the sentinel otherwise.
double lateral_deviation(const RowStats& stats, double x);

// Mean of exp(-alpha * d^2) over the trajectory.
double centering_reward(const scene::GridMask& mask, const std::vector<scene::Point>& traj, double alpha);

RuleReward rule_reward(const scene::GridMask& mask, const std::vector<scene::Point>& traj,
                       const RewardConfig& config);

// Deterministic stand-in for the expert rater; [0, 5], 0 = safest.
double mock_expert_rating(const scene::SceneSample& s, const std::vector<scene::Point>& traj);

// omega_h * r_h + omega_a * signed(r_a) where signed maps [0,5] onto [1,-1]
// (safest positive).
double hybrid_reward(double r_h, double r_a, const RewardConfig& config);

// Full record for one scene/trajectory.
RewardRecord score_scene(const scene::SceneSample& s, const std::vector<scene::Point>& traj,
                         const RewardConfig& config);

// Scores every entry of a scene manifest; writes one JSONL row per record.
void score_manifest(const std::string& manifest_path, const RewardConfig& config,
                    const std::string& out_path);

}  // namespace vdrive::reward
