#pragma once

#include <memory>

#include "sacf/sdld.hpp"
#include "sacf/sim.hpp"

namespace sacf {

// Labeled observation sequences for supervised localization training: each
// episode is a behavior-policy rollout with per-step ground truth bins.
struct LocalizationDataset {
    struct Step {
        std::vector<float> depth;
        std::vector<float> audio;
        GroundTruth truth;
    };
    struct Episode {
        std::vector<Step> steps;
    };
    std::vector<Episode> episodes;

    int total_steps() const;
};

// Rollouts under a roaming mixture policy (oracle-guided and random-walk
// segments, no early Stop) so the collected frames cover approaches, turns,
// and both near and far ranges.
LocalizationDataset collect_localization_data(std::uint64_t seed, const sim::SoundPool& sounds,
                                              const sim::SimParams& params, int target_steps,
                                              bool heard_split, int episode_cap = 60);

// Encoders + SDLD plus small MLP probes over the descriptor g_t. The probes
// are measurement machinery: they quantify how much localization information
// the LSTM-refined descriptor carries versus the single-frame heads.
struct SupervisedModel {
    NetConfig cfg;
    ParamRegistry reg;
    VisualEncoder visual;
    AudioEncoder audio;
    Sdld sdld;
    Linear probe_dist_h, probe_dist;
    Linear probe_angle_h, probe_angle;

    static std::unique_ptr<SupervisedModel> create(const NetConfig& cfg, std::uint64_t seed);
};

struct LocalizationAccuracy {
    double dist_within_one = 0.0;         // single-frame P_d argmax, |bin error| <= 1
    double angle_within_one = 0.0;        // single-frame P_theta argmax, circular
    double probe_dist_within_one = 0.0;   // refined (probe on g_t)
    double probe_angle_within_one = 0.0;  // refined (probe on g_t), circular
    int frames = 0;
};

struct SupervisedTrainOptions {
    int epochs = 12;
    float lr = 1e-3f;
    int batch_episodes = 8;
    std::uint64_t shuffle_seed = 7;
};

// Aux loss (CE + CE + BCE) on the single-frame heads plus CE probe losses on
// the descriptor, full BPTT within each episode.
void train_localization(SupervisedModel& model, const LocalizationDataset& data,
                        const SupervisedTrainOptions& opts);

LocalizationAccuracy evaluate_localization(const SupervisedModel& model,
                                           const LocalizationDataset& data);

}  // namespace sacf
