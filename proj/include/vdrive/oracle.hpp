#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vdrive/nn.hpp"
#include "vdrive/scene.hpp"

namespace vdrive::oracle {

// One frame's worth of state: discrete scene tokens plus the continuous tuple.
struct StateTuple {
    std::vector<int> tokens;                  // flattened index grid
    scene::ActionTriplet action;
    scene::NavCommand nav;
    std::vector<scene::Point> trajectory;     // N x 2, pixel coordinates
    int t = 0;
};

struct OracleConfig {
    std::size_t vocab = 36;     // cvqvae token range + reserved specials
    std::size_t cells = 64;     // tokens per frame
    std::size_t d_model = 32;
    std::size_t blocks = 2;
    std::size_t ffn = 64;
    std::size_t n_points = 8;
    double grid_w = 64.0, grid_h = 64.0;  // for trajectory normalization
    double lr = 2e-3;
    std::size_t steps = 400;
    std::size_t batch = 8;

    void validate() const {
        if (vocab < 2 || cells < 1 || d_model < 1) throw ValidationError("oracle: bad dims");
        if (n_points < 2) throw ValidationError("oracle: n_points must be >= 2");
    }
};

// Next-state predictor over discrete scene tokens: reads frame t-1 tokens
// plus that frame's action and navigation command, emits the full tuple for
// frame t in one pass (per-cell categorical head, pooled continuous heads).
class OracleModel {
 public:
    OracleModel(const OracleConfig& cfg, std::uint64_t seed);

    const OracleConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }
    bool trained() const { return trained_; }
    void mark_trained() { trained_ = true; }

    void save(const std::string& dir) const;
    static OracleModel load(const std::string& dir);

 private:
    OracleConfig cfg_;
    nn::ParamStore params_;
    bool trained_ = false;
};

struct SequencePair {
    StateTuple input;   // frame t-1
    StateTuple target;  // frame t
};

struct PretrainMetrics {
    std::size_t step = 0;
    double token_ce = 0.0;
    double nav_ce = 0.0;
    double action_mse = 0.0;
    double traj_mse = 0.0;
    double total = 0.0;
};

struct PretrainResult {
    std::vector<PretrainMetrics> log;
    double final_token_accuracy = 0.0;  // greedy tokens vs targets over the dataset
};

// Cross-entropy pretraining over next-frame targets. Deterministic given seed.
PretrainResult pretrain_tokens(OracleModel& model, const std::vector<SequencePair>& dataset,
                               std::uint64_t seed);

// Greedy decode of the next state. Throws if the model was never trained.
StateTuple predict_next(const OracleModel& model, const StateTuple& prev);

struct PreferenceScore {
    double logp_chosen = 0.0;
    double logp_rejected = 0.0;
};

// Teacher-forced log-likelihood of both target tuples under the model, given
// the shared context frame. Both values are <= 0.
PreferenceScore score_preference(const OracleModel& model, const StateTuple& context,
                                 const StateTuple& chosen, const StateTuple& rejected);

double sequence_log_likelihood(const OracleModel& model, const StateTuple& context,
                               const StateTuple& target);

}  // namespace vdrive::oracle
