#include "sacf/ppo.hpp"

#include <algorithm>
#include <cmath>

namespace sacf {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a ^ (b * 0x9e3779b97f4a7c15ull);
    return splitmix64(x);
}

}  // namespace

VecEnv::VecEnv(int slots, const sim::SimParams& params, const sim::SoundPool& sounds,
               bool heard_split, std::uint64_t master_seed, bool curriculum)
    : params_(params),
      sounds_(&sounds),
      heard_split_(heard_split),
      master_seed_(master_seed),
      curriculum_(curriculum) {
    SACF_REQUIRE(slots > 0, "VecEnv: need at least one slot");
    envs_.resize(static_cast<std::size_t>(slots));
    obs_.resize(static_cast<std::size_t>(slots));
    episode_counters_.assign(static_cast<std::size_t>(slots), 0);
    running_return_.assign(static_cast<std::size_t>(slots), 0.f);
    for (int i = 0; i < slots; ++i)
        samplers_.push_back(derive_stream(master_seed, "sampler", static_cast<std::uint64_t>(i)));
    for (int i = 0; i < slots; ++i) {
        envs_[static_cast<std::size_t>(i)].params = params_;
        reset_slot(i);
    }
}

void VecEnv::reset_slot(int i) {
    auto& env = envs_[static_cast<std::size_t>(i)];
    const std::uint64_t count = ++episode_counters_[static_cast<std::size_t>(i)];
    const std::uint64_t ep_seed = mix(master_seed_, mix(static_cast<std::uint64_t>(i) + 1, count));

    sim::SimParams p = params_;
    if (curriculum_) {
        // early episodes draw from narrow sub-bands of the configured band
        const int span = params_.difficulty.max_hops - params_.difficulty.min_hops;
        int cap = params_.difficulty.max_hops;
        if (count <= 60)
            cap = params_.difficulty.min_hops + span / 3;
        else if (count <= 120)
            cap = params_.difficulty.min_hops + (2 * span) / 3;
        p.difficulty.max_hops = std::max(params_.difficulty.min_hops, cap);
    }

    sim::EpisodeSpec spec = sim::sample_episode(ep_seed, *sounds_, heard_split_, p);
    env.reset(spec, sounds_->by_id(spec.sound_id), mix(ep_seed, 0xa0d10u));
    obs_[static_cast<std::size_t>(i)] = env.observe_with_noise();
    running_return_[static_cast<std::size_t>(i)] = 0.f;
}

sim::StepResult VecEnv::step_slot(int i, sim::Action a) {
    auto& env = envs_[static_cast<std::size_t>(i)];
    sim::StepResult r = env.step(a);
    running_return_[static_cast<std::size_t>(i)] += r.reward;
    if (r.done) {
        completed_returns_.push_back(running_return_[static_cast<std::size_t>(i)]);
        reset_slot(i);
    } else {
        obs_[static_cast<std::size_t>(i)] = r.obs;
    }
    return r;
}

std::vector<float> VecEnv::take_completed_returns() {
    std::vector<float> out;
    out.swap(completed_returns_);
    return out;
}

namespace {

ad::Tensor batch_obs(const std::vector<float>& flat, int t, int slots, int dim) {
    std::vector<float> v(flat.begin() + static_cast<std::ptrdiff_t>(t) * slots * dim,
                         flat.begin() + static_cast<std::ptrdiff_t>(t + 1) * slots * dim);
    return ad::Tensor::from_values({slots, dim}, std::move(v));
}

ad::Tensor obs_tensor_depth(const VecEnv& envs, int slots, int rays) {
    std::vector<float> v;
    v.reserve(static_cast<std::size_t>(slots) * rays);
    for (int i = 0; i < slots; ++i)
        v.insert(v.end(), envs.obs(i).depth.begin(), envs.obs(i).depth.end());
    return ad::Tensor::from_values({slots, rays}, std::move(v));
}

ad::Tensor obs_tensor_audio(const VecEnv& envs, int slots, int dim) {
    std::vector<float> v;
    v.reserve(static_cast<std::size_t>(slots) * dim);
    for (int i = 0; i < slots; ++i)
        v.insert(v.end(), envs.obs(i).audio.begin(), envs.obs(i).audio.end());
    return ad::Tensor::from_values({slots, dim}, std::move(v));
}

void copy_tensor_values(const ad::Tensor& t, std::vector<float>& dst) {
    dst.assign(t.values().begin(), t.values().end());
}

}  // namespace

RolloutBuffer collect_rollout(const PolicyNetwork& policy, VecEnv& envs, int horizon,
                              PolicyNetwork::State& state) {
    const int S = envs.slots();
    const NetConfig& nc = policy.config();
    const int R = nc.rays;
    const int A = 2 * nc.bands;

    RolloutBuffer buf;
    buf.horizon = horizon;
    buf.slots = S;
    buf.rays = R;
    buf.audio_dim = A;
    const int n = horizon * S;
    buf.depth.resize(static_cast<std::size_t>(n) * R);
    buf.audio.resize(static_cast<std::size_t>(n) * A);
    buf.action.resize(static_cast<std::size_t>(n));
    buf.logprob.resize(static_cast<std::size_t>(n));
    buf.value.resize(static_cast<std::size_t>(n));
    buf.reward.resize(static_cast<std::size_t>(n));
    buf.done.resize(static_cast<std::size_t>(n));
    buf.dist_bin.resize(static_cast<std::size_t>(n));
    buf.angle_bin.resize(static_cast<std::size_t>(n));
    buf.reached.resize(static_cast<std::size_t>(n));

    copy_tensor_values(state.gru_h, buf.start_gru_h);
    copy_tensor_values(state.lstm.h, buf.start_lstm_h);
    copy_tensor_values(state.lstm.c, buf.start_lstm_c);

    ad::Graph g;
    ad::Graph::NoGradScope ng(g);

    for (int t = 0; t < horizon; ++t) {
        ad::Tensor depth = obs_tensor_depth(envs, S, R);
        ad::Tensor audio = obs_tensor_audio(envs, S, A);
        std::copy(depth.values().begin(), depth.values().end(),
                  buf.depth.begin() + static_cast<std::ptrdiff_t>(t) * S * R);
        std::copy(audio.values().begin(), audio.values().end(),
                  buf.audio.begin() + static_cast<std::ptrdiff_t>(t) * S * A);

        // truth labels for the observation the policy acts on
        for (int s = 0; s < S; ++s) {
            sim::TruthLabels tl = envs.truth(s);
            buf.dist_bin[static_cast<std::size_t>(buf.idx(t, s))] = tl.distance_bin;
            buf.angle_bin[static_cast<std::size_t>(buf.idx(t, s))] = tl.angle_bin;
            buf.reached[static_cast<std::size_t>(buf.idx(t, s))] = tl.reached ? 1 : 0;
        }

        PolicyNetwork::Forward fwd = policy.step(g, depth, audio, state);
        ad::Tensor logp_all = ad::log_softmax_lastdim(g, fwd.action_logits);
        ad::Tensor probs = ad::exp_op(g, logp_all);

        std::vector<float> keep(static_cast<std::size_t>(S), 1.f);
        for (int s = 0; s < S; ++s) {
            auto prow = probs.values().subspan(static_cast<std::size_t>(s) * nc.actions,
                                               static_cast<std::size_t>(nc.actions));
            const int a = envs.sample_action(s, prow);
            const int i = buf.idx(t, s);
            buf.action[static_cast<std::size_t>(i)] = a;
            buf.logprob[static_cast<std::size_t>(i)] =
                logp_all.value_at(s * nc.actions + a);
            buf.value[static_cast<std::size_t>(i)] = fwd.value.value_at(s);

            sim::StepResult r = envs.step_slot(s, static_cast<sim::Action>(a));
            buf.reward[static_cast<std::size_t>(i)] = r.reward;
            buf.done[static_cast<std::size_t>(i)] = r.done ? 1 : 0;
            if (r.done) keep[static_cast<std::size_t>(s)] = 0.f;
        }
        ad::Tensor keep_mask = ad::Tensor::from_values({S, 1}, std::move(keep));
        state = policy.masked_state(g, fwd.state, keep_mask);
    }

    // bootstrap values for GAE from the post-rollout observations
    {
        ad::Tensor depth = obs_tensor_depth(envs, S, R);
        ad::Tensor audio = obs_tensor_audio(envs, S, A);
        PolicyNetwork::Forward fwd = policy.step(g, depth, audio, state);
        buf.bootstrap_value.assign(fwd.value.values().begin(), fwd.value.values().end());
    }

    buf.completed_returns = envs.take_completed_returns();
    return buf;
}

void compute_gae(RolloutBuffer& buf, float gamma, float lambda, bool normalize) {
    const int T = buf.horizon, S = buf.slots;
    SACF_REQUIRE(!buf.value.empty() && static_cast<int>(buf.bootstrap_value.size()) == S,
                 "compute_gae: buffer missing values or bootstrap");
    buf.advantage.assign(static_cast<std::size_t>(T) * S, 0.f);
    buf.ret.assign(static_cast<std::size_t>(T) * S, 0.f);
    for (int s = 0; s < S; ++s) {
        float gae = 0.f;
        for (int t = T - 1; t >= 0; --t) {
            const int i = buf.idx(t, s);
            const float not_done = buf.done[static_cast<std::size_t>(i)] ? 0.f : 1.f;
            const float next_v = t == T - 1 ? buf.bootstrap_value[static_cast<std::size_t>(s)]
                                            : buf.value[static_cast<std::size_t>(buf.idx(t + 1, s))];
            const float delta = buf.reward[static_cast<std::size_t>(i)] +
                                gamma * next_v * not_done - buf.value[static_cast<std::size_t>(i)];
            gae = delta + gamma * lambda * not_done * gae;
            buf.advantage[static_cast<std::size_t>(i)] = gae;
            buf.ret[static_cast<std::size_t>(i)] = gae + buf.value[static_cast<std::size_t>(i)];
        }
    }
    if (normalize) {
        const std::size_t n = buf.advantage.size();
        double mean = 0.0;
        for (float a : buf.advantage) mean += a;
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (float a : buf.advantage) var += (a - mean) * (a - mean);
        var /= static_cast<double>(n);
        const float sd = static_cast<float>(std::sqrt(std::max(var, 1e-12)));
        for (float& a : buf.advantage) a = (a - static_cast<float>(mean)) / (sd + 1e-8f);
    }
}

ad::Tensor ppo_epoch_loss(const PolicyNetwork& policy, const RolloutBuffer& buf,
                          const PpoConfig& cfg, ad::Graph& g, UpdateStats* stats) {
    SACF_REQUIRE(!buf.advantage.empty(), "ppo_epoch_loss: advantages not computed");
    const int T = buf.horizon, S = buf.slots;
    const NetConfig& nc = policy.config();
    const float inv_n = 1.f / static_cast<float>(T * S);

    PolicyNetwork::State st;
    st.gru_h = ad::Tensor::from_values({S, nc.gru_hidden}, buf.start_gru_h);
    st.lstm.h = ad::Tensor::from_values({S, nc.lstm_hidden}, buf.start_lstm_h);
    st.lstm.c = ad::Tensor::from_values({S, nc.lstm_hidden}, buf.start_lstm_c);

    ad::Tensor pi_sum = ad::Tensor::scalar(0.f);
    ad::Tensor v_sum = ad::Tensor::scalar(0.f);
    ad::Tensor nent_sum = ad::Tensor::scalar(0.f);  // sum of p*logp (negative entropy)
    ad::Tensor aux_sum = ad::Tensor::scalar(0.f);
    int clip_count = 0;

    for (int t = 0; t < T; ++t) {
        ad::Tensor depth = batch_obs(buf.depth, t, S, buf.rays);
        ad::Tensor audio = batch_obs(buf.audio, t, S, buf.audio_dim);
        PolicyNetwork::Forward fwd = policy.step(g, depth, audio, st);

        std::vector<int> actions(static_cast<std::size_t>(S));
        std::vector<float> old_lp(static_cast<std::size_t>(S)), adv(static_cast<std::size_t>(S)),
            rets(static_cast<std::size_t>(S)), keep(static_cast<std::size_t>(S));
        std::vector<GroundTruth> truth(static_cast<std::size_t>(S));
        for (int s = 0; s < S; ++s) {
            const int i = buf.idx(t, s);
            actions[static_cast<std::size_t>(s)] = buf.action[static_cast<std::size_t>(i)];
            old_lp[static_cast<std::size_t>(s)] = buf.logprob[static_cast<std::size_t>(i)];
            adv[static_cast<std::size_t>(s)] = buf.advantage[static_cast<std::size_t>(i)];
            rets[static_cast<std::size_t>(s)] = buf.ret[static_cast<std::size_t>(i)];
            keep[static_cast<std::size_t>(s)] = buf.done[static_cast<std::size_t>(i)] ? 0.f : 1.f;
            truth[static_cast<std::size_t>(s)] = {buf.dist_bin[static_cast<std::size_t>(i)],
                                                  buf.angle_bin[static_cast<std::size_t>(i)],
                                                  buf.reached[static_cast<std::size_t>(i)] != 0};
        }

        ad::Tensor logp_all = ad::log_softmax_lastdim(g, fwd.action_logits);
        ad::Tensor new_lp = ad::gather_cols(g, logp_all, actions);
        ad::Tensor old_lp_t = ad::Tensor::from_values({S, 1}, std::move(old_lp));
        ad::Tensor adv_t = ad::Tensor::from_values({S, 1}, std::move(adv));
        ad::Tensor ratio = ad::exp_op(g, ad::sub(g, new_lp, old_lp_t));
        ad::Tensor unclipped = ad::mul(g, ratio, adv_t);
        ad::Tensor clipped =
            ad::mul(g, ad::clamp(g, ratio, 1.f - cfg.clip, 1.f + cfg.clip), adv_t);
        pi_sum = ad::add(g, pi_sum, ad::sum_all(g, ad::minimum(g, unclipped, clipped)));

        for (float r : ratio.values())
            if (std::abs(r - 1.f) > cfg.clip) ++clip_count;

        ad::Tensor ret_t = ad::Tensor::from_values({S, 1}, std::move(rets));
        ad::Tensor vdiff = ad::sub(g, fwd.value, ret_t);
        v_sum = ad::add(g, v_sum, ad::sum_all(g, ad::mul(g, vdiff, vdiff)));

        ad::Tensor probs = ad::exp_op(g, logp_all);
        nent_sum = ad::add(g, nent_sum, ad::sum_all(g, ad::mul(g, probs, logp_all)));

        if (fwd.bins) aux_sum = ad::add(g, aux_sum, sdld_aux_loss(g, *fwd.bins, truth));

        ad::Tensor keep_mask = ad::Tensor::from_values({S, 1}, std::move(keep));
        st = policy.masked_state(g, fwd.state, keep_mask);
    }

    ad::Tensor loss = ad::scale(g, pi_sum, -inv_n);
    loss = ad::add(g, loss, ad::scale(g, v_sum, cfg.value_coef * inv_n));
    loss = ad::add(g, loss, ad::scale(g, nent_sum, cfg.entropy_coef * inv_n));
    loss = ad::add(g, loss, ad::scale(g, aux_sum, cfg.aux_weight / static_cast<float>(T)));

    if (stats) {
        stats->loss_pi = -pi_sum.scalar_value() * inv_n;
        stats->loss_v = v_sum.scalar_value() * inv_n;
        stats->entropy = -nent_sum.scalar_value() * inv_n;
        stats->aux = aux_sum.scalar_value() / static_cast<float>(T);
        stats->clip_frac = static_cast<float>(clip_count) * inv_n;
    }
    return loss;
}

UpdateStats ppo_update(const PolicyNetwork& policy, OptimizerState& opt, const RolloutBuffer& buf,
                       const PpoConfig& cfg, int update_index) {
    SACF_REQUIRE(cfg.minibatches == 1, "ppo_update: only full-batch minibatching is supported");
    const float lr_now = opt.lr_at_update(update_index);

    UpdateStats stats;
    stats.lr = lr_now;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        ad::Graph g;
        UpdateStats es;
        ad::Tensor loss = ppo_epoch_loss(policy, buf, cfg, g, &es);
        if (!std::isfinite(loss.scalar_value()))
            throw NumericFault("ppo_update: non-finite loss at update " +
                               std::to_string(update_index));

        opt.zero_grad();
        g.backward(loss);
        const float gnorm = opt.clip_global_grad_norm(cfg.max_grad_norm);
        opt.adam_step(lr_now);

        const float k = 1.f / static_cast<float>(cfg.epochs);
        stats.loss_pi += es.loss_pi * k;
        stats.loss_v += es.loss_v * k;
        stats.entropy += es.entropy * k;
        stats.aux += es.aux * k;
        stats.clip_frac += es.clip_frac * k;
        stats.grad_norm = std::max(stats.grad_norm, std::min(gnorm, cfg.max_grad_norm));
    }
    return stats;
}

}  // namespace sacf
