#pragma once

#include <cstdint>
#include <vector>

#include "sacf/policy.hpp"
#include "sacf/sim.hpp"

namespace sacf {

struct PpoConfig {
    float clip = 0.1f;
    int epochs = 4;
    int minibatches = 1;  // full batch
    float value_coef = 0.5f;
    float entropy_coef = 0.20f;
    float max_grad_norm = 0.5f;
    float lr = 2.5e-4f;
    float adam_eps = 1e-5f;
    float gamma = 0.99f;
    float gae_lambda = 0.95f;
    int updates = 2000;
    float aux_weight = 0.5f;
    int horizon = 128;
    int num_envs = 5;
};

// Parallel environment slots stepped in lockstep. Each slot owns its episode
// stream, noise stream, and action-sampling stream, so slot interleaving can
// never perturb another slot's randomness.
//
// With the curriculum enabled, early episodes draw from narrow sub-bands of
// the configured difficulty band (deterministic per slot counter); evaluation
// always samples the full band.
class VecEnv {
public:
    VecEnv(int slots, const sim::SimParams& params, const sim::SoundPool& sounds, bool heard_split,
           std::uint64_t master_seed, bool curriculum = true);

    int slots() const { return static_cast<int>(envs_.size()); }
    sim::Env& env(int i) { return envs_[static_cast<std::size_t>(i)]; }
    const sim::Observation& obs(int i) const { return obs_[static_cast<std::size_t>(i)]; }
    sim::TruthLabels truth(int i) { return envs_[static_cast<std::size_t>(i)].truth(); }

    // Steps slot i; on episode end resets in place with a fresh episode and
    // records the completed episode return.
    sim::StepResult step_slot(int i, sim::Action a);

    int sample_action(int i, std::span<const float> probs) {
        return samplers_[static_cast<std::size_t>(i)].categorical(probs);
    }

    std::vector<float> take_completed_returns();

private:
    void reset_slot(int i);

    std::vector<sim::Env> envs_;
    std::vector<sim::Observation> obs_;
    std::vector<Rng> samplers_;
    std::vector<std::uint64_t> episode_counters_;
    std::vector<float> running_return_;
    std::vector<float> completed_returns_;
    sim::SimParams params_;
    const sim::SoundPool* sounds_;
    bool heard_split_;
    std::uint64_t master_seed_;
    bool curriculum_;
};

// Horizon x slots storage in [t * slots + s] layout, plus the recurrent state
// snapshot taken at the segment start so updates can replay the sequences.
struct RolloutBuffer {
    int horizon = 0, slots = 0, rays = 0, audio_dim = 0;

    std::vector<float> depth;        // [T*S*R]
    std::vector<float> audio;        // [T*S*2B]
    std::vector<int> action;         // [T*S]
    std::vector<float> logprob;      // [T*S]
    std::vector<float> value;        // [T*S]
    std::vector<float> reward;       // [T*S]
    std::vector<std::uint8_t> done;  // [T*S]
    std::vector<int> dist_bin;       // [T*S]
    std::vector<int> angle_bin;      // [T*S]
    std::vector<std::uint8_t> reached;  // [T*S]

    std::vector<float> start_gru_h;  // [S*gru_hidden]
    std::vector<float> start_lstm_h;
    std::vector<float> start_lstm_c;
    std::vector<float> bootstrap_value;  // [S]

    std::vector<float> advantage;  // [T*S] (filled by compute_gae)
    std::vector<float> ret;        // [T*S]

    std::vector<float> completed_returns;

    int idx(int t, int s) const { return t * slots + s; }
};

// T steps per slot under the current policy (gradient-free forward passes);
// the vec env keeps stepping/resetting in place.
RolloutBuffer collect_rollout(const PolicyNetwork& policy, VecEnv& envs, int horizon,
                              PolicyNetwork::State& state);

// Standard GAE with done masking; advantages normalized to zero mean / unit
// variance over the whole buffer.
void compute_gae(RolloutBuffer& buf, float gamma, float lambda, bool normalize = true);

struct UpdateStats {
    float mean_reward = 0.f;
    float loss_pi = 0.f;
    float loss_v = 0.f;
    float entropy = 0.f;
    float aux = 0.f;
    float clip_frac = 0.f;
    float grad_norm = 0.f;
    float lr = 0.f;
};

// One full-batch recurrent replay of the buffer: clipped surrogate + value +
// entropy + auxiliary localization loss as a single scalar, with the
// per-term statistics written to `stats` when given.
ad::Tensor ppo_epoch_loss(const PolicyNetwork& policy, const RolloutBuffer& buf,
                          const PpoConfig& cfg, ad::Graph& g, UpdateStats* stats = nullptr);

// cfg.epochs full-batch passes: replay the stored sequences through the
// recurrent policy from the stored segment-start states, take the clipped
// surrogate + value + entropy + auxiliary localization loss, clip the global
// gradient norm, and apply Adam at the schedule's rate for this update.
UpdateStats ppo_update(const PolicyNetwork& policy, OptimizerState& opt, const RolloutBuffer& buf,
                       const PpoConfig& cfg, int update_index);

}  // namespace sacf
