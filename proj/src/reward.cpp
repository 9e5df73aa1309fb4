#include "vdrive/reward.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace vdrive::reward {

using nlohmann::json;

void RewardConfig::validate() const {
    if (!(alpha > 0)) throw ValidationError("reward: alpha must be > 0");
    if (!(beta > 0)) throw ValidationError("reward: beta must be > 0");
    if (!(omega_h >= 0 && omega_a >= 0 && omega_h + omega_a > 0)) {
        throw ValidationError("reward: omega_h + omega_a must be > 0");
    }
}

int off_road_indicator(const scene::GridMask& mask, double x, double y) {
    double fx = std::floor(x);
    double fy = std::floor(y);
    if (fx < 0 || fy < 0 || fx >= static_cast<double>(mask.w) || fy >= static_cast<double>(mask.h)) {
        return 1;
    }
    return mask.at(static_cast<std::size_t>(fx), static_cast<std::size_t>(fy)) ? 0 : 1;
}

int off_road_penalty(const scene::GridMask& mask, const std::vector<scene::Point>& traj) {
    if (traj.empty()) throw ValidationError("off_road_penalty: empty trajectory");
    int p = 0;
    for (const auto& pt : traj) p += off_road_indicator(mask, pt[0], pt[1]);
    return p;
}

RowStats row_stats(const scene::GridMask& mask, int y) {
    if (y < 0 || static_cast<std::size_t>(y) >= mask.h) {
        throw ValidationError("row_stats: row " + std::to_string(y) + " out of range");
    }
    RowStats st;
    st.y = y;
    double sum = 0.0;
    for (std::size_t x = 0; x < mask.w; ++x) {
        if (!mask.at(x, static_cast<std::size_t>(y))) continue;
        if (st.count == 0) st.min_col = static_cast<int>(x);
        st.max_col = static_cast<int>(x);
        sum += static_cast<double>(x);
        ++st.count;
    }
    if (st.count > 0) {
        st.defined = true;
        st.mean = sum / static_cast<double>(st.count);
    }
    return st;
}

double lateral_deviation(const RowStats& stats, double x) {
    if (!stats.defined) throw ValidationError("lateral_deviation: undefined row");
    if (stats.max_col == stats.min_col) {
        return x == stats.mean ? 0.0 : kDeviationSentinel;
    }
    double half = (static_cast<double>(stats.max_col) - static_cast<double>(stats.min_col)) / 2.0;
    return std::abs(x - stats.mean) / half;
}

double centering_reward(const scene::GridMask& mask, const std::vector<scene::Point>& traj, double alpha) {
    if (traj.empty()) throw ValidationError("centering_reward: empty trajectory");
    double acc = 0.0;
    for (const auto& pt : traj) {
        double fy = std::floor(pt[1]);
        double d = kDeviationSentinel;
        if (fy >= 0 && fy < static_cast<double>(mask.h)) {
            RowStats st = row_stats(mask, static_cast<int>(fy));
            if (st.defined) d = lateral_deviation(st, pt[0]);
        }
        acc += std::exp(-alpha * d * d);
    }
    return acc / static_cast<double>(traj.size());
}

RuleReward rule_reward(const scene::GridMask& mask, const std::vector<scene::Point>& traj,
                       const RewardConfig& config) {
    config.validate();
    RuleReward out;
    out.p_off = off_road_penalty(mask, traj);
    out.r_center = centering_reward(mask, traj, config.alpha);
    out.r_h = out.p_off == 0 ? out.r_center : -config.beta;
    return out;
}

namespace {

double point_rect_distance(const scene::Point& p, const scene::Rect& r) {
    double cx = std::clamp(p[0], static_cast<double>(r.x), static_cast<double>(r.x + r.w));
    double cy = std::clamp(p[1], static_cast<double>(r.y), static_cast<double>(r.y + r.h));
    double dx = p[0] - cx, dy = p[1] - cy;
    return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

double mock_expert_rating(const scene::SceneSample& s, const std::vector<scene::Point>& traj) {
    const double diag = std::sqrt(static_cast<double>(s.drivable_mask.w * s.drivable_mask.w +
                                                      s.drivable_mask.h * s.drivable_mask.h));
    double min_dist = diag;
    for (const auto& r : s.obstacles) {
        for (const auto& p : traj) min_dist = std::min(min_dist, point_rect_distance(p, r));
    }
    double proximity = std::clamp(1.0 - min_dist / diag, 0.0, 1.0);

    double max_dd = 0.0;
    for (std::size_t t = 1; t + 1 < traj.size(); ++t) {
        double ddx = traj[t + 1][0] - 2.0 * traj[t][0] + traj[t - 1][0];
        double ddy = traj[t + 1][1] - 2.0 * traj[t][1] + traj[t - 1][1];
        max_dd = std::max(max_dd, std::sqrt(ddx * ddx + ddy * ddy));
    }
    double discontinuity = std::min(1.0, max_dd / (static_cast<double>(s.ego_speed) + 1.0));

    return 5.0 * std::clamp(0.5 * proximity + 0.5 * discontinuity, 0.0, 1.0);
}

double hybrid_reward(double r_h, double r_a, const RewardConfig& config) {
    config.validate();
    double r_a_signed = (5.0 - 2.0 * r_a) / 5.0;  // [0,5] -> [1,-1], safest positive
    return config.omega_h * r_h + config.omega_a * r_a_signed;
}

RewardRecord score_scene(const scene::SceneSample& s, const std::vector<scene::Point>& traj,
                         const RewardConfig& config) {
    RewardRecord rec;
    rec.id = s.id;
    RuleReward rr = rule_reward(s.drivable_mask, traj, config);
    rec.p_off = rr.p_off;
    rec.r_center = rr.r_center;
    rec.r_h = rr.r_h;
    rec.r_a = mock_expert_rating(s, traj);
    rec.r = hybrid_reward(rec.r_h, rec.r_a, config);
    rec.config = config;
    return rec;
}

void score_manifest(const std::string& manifest_path, const RewardConfig& config,
                    const std::string& out_path) {
    config.validate();
    auto scenes = scene::load_scene_dataset(manifest_path);
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw ValidationError("reward: cannot write " + out_path);
    for (const auto& s : scenes) {
        RewardRecord rec = score_scene(s, s.trajectory, config);
        json row{{"id", rec.id},        {"p_off", rec.p_off}, {"r_center", rec.r_center},
                 {"r_h", rec.r_h},      {"r_a", rec.r_a},     {"r", rec.r},
                 {"alpha", config.alpha}, {"beta", config.beta}, {"omega_h", config.omega_h},
                 {"omega_a", config.omega_a}};
        out << row.dump() << "\n";
    }
    if (!out) throw ValidationError("reward: write failed: " + out_path);
}

}  // namespace vdrive::reward
