#pragma once

#include <string>
#include <vector>

#include "sacf/policy.hpp"
#include "sacf/sim.hpp"

namespace sacf {

struct EpisodeRecord {
    bool success = false;
    float path_length = 0.f;        // meters actually traversed
    float shortest_path = 0.f;      // geodesic at episode start, meters
    int action_count = 0;           // all actions including turns and Stop
    int optimal_action_count = 0;   // oracle action count for the same episode
    std::vector<sim::Pose> trajectory;
};

struct MetricsReport {
    std::string split;
    int episodes = 0;
    std::vector<EpisodeRecord> records;
    double sr = 0.0, spl = 0.0, sna = 0.0;
};

// 100 * mean(S_i)
double compute_sr(const std::vector<EpisodeRecord>& records);
// 100 * mean(S_i * l_i / max(p_i, l_i)); a successful zero-length episode
// contributes S_i.
double compute_spl(const std::vector<EpisodeRecord>& records);
// 100 * mean(S_i * n*_i / max(n_i, n*_i))
double compute_sna(const std::vector<EpisodeRecord>& records);

// Action-count-optimal navigation to the source cell over (cell, heading)
// states: move/turn cost 1, Stop on the source. Backs SNA normalization and
// the learnability ceiling.
class OraclePlanner {
public:
    OraclePlanner(const sim::OccupancyGrid& grid, sim::Cell source);

    sim::Action next_action(const sim::Pose& pose) const;
    // Minimum actions (including the final Stop) from the pose to success.
    int optimal_action_count(const sim::Pose& pose) const;

private:
    int idx(sim::Cell c, int h) const;
    const sim::OccupancyGrid* grid_;
    sim::Cell source_;
    std::vector<int> dist_;  // actions-to-source per (cell, heading)
};

enum class EvalPolicy { kNetwork, kOracle, kRandom };

struct EvalOptions {
    std::string split = "heard";
    int episodes = 100;
    std::uint64_t seed = 1;
    bool keep_trajectories = false;
};

// Greedy (argmax) rollouts on freshly sampled episodes; deterministic per
// seed. `policy` may be null for the oracle/random baselines.
MetricsReport evaluate(const PolicyNetwork* policy, EvalPolicy kind, const sim::SimParams& params,
                       const sim::SoundPool& sounds, const EvalOptions& opts);

// header `split n_episodes`, one line per episode
// `success path_len shortest actions optimal_actions`, footer `SR SPL SNA`.
std::string serialize_report(const MetricsReport& report);
MetricsReport parse_report(const std::string& text);

}  // namespace sacf
