#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "sacf/experiment.hpp"
#include "sacf/ppo.hpp"
#include "test_util.hpp"

using namespace sacf;
using namespace sacf::ad;

namespace {

struct PpoFixture {
    ExperimentConfig cfg = testutil::tiny_experiment_config();
    sim::SoundPool sounds;
    PpoFixture() { sounds = sim::SoundPool::create(cfg.seed, cfg.net.bands, 4, 2); }

    RolloutBuffer collect(const PolicyNetwork& policy, std::uint64_t seed, int horizon = -1) {
        VecEnv envs(cfg.ppo.num_envs, cfg.simp, sounds, true, seed);
        PolicyNetwork::State st = policy.zero_state(cfg.ppo.num_envs);
        return collect_rollout(policy, envs, horizon > 0 ? horizon : cfg.ppo.horizon, st);
    }
};

}  // namespace

TEST_CASE("rollout collection is deterministic given seeds") {
    PpoFixture fx;
    PolicyNetwork policy(fx.cfg.net, FusionVariant::kSacfFull, 5);
    RolloutBuffer a = fx.collect(policy, 17);
    RolloutBuffer b = fx.collect(policy, 17);
    CHECK(a.depth == b.depth);
    CHECK(a.audio == b.audio);
    CHECK(a.action == b.action);
    CHECK(a.logprob == b.logprob);
    CHECK(a.reward == b.reward);
    CHECK(a.done == b.done);
    RolloutBuffer c = fx.collect(policy, 18);
    CHECK(a.action != c.action);
}

TEST_CASE("immediate episode ends leave the buffer well-formed") {
    PpoFixture fx;
    fx.cfg.simp.max_steps = 1;  // every step truncates
    PolicyNetwork policy(fx.cfg.net, FusionVariant::kSacfFull, 6);
    RolloutBuffer buf = fx.collect(policy, 3, 4);
    for (std::uint8_t d : buf.done) CHECK(d == 1);
    CHECK(buf.depth.size() == static_cast<std::size_t>(4 * fx.cfg.ppo.num_envs * fx.cfg.net.rays));
    compute_gae(buf, 0.99f, 0.95f);
    CHECK(buf.advantage.size() == buf.reward.size());
}

TEST_CASE("ratio identity: stored log-probs match the replay before any step") {
    PpoFixture fx;
    PolicyNetwork policy(fx.cfg.net, FusionVariant::kSacfFull, 7);
    RolloutBuffer buf = fx.collect(policy, 21);
    compute_gae(buf, fx.cfg.ppo.gamma, fx.cfg.ppo.gae_lambda);

    Graph g;
    UpdateStats stats;
    ppo_epoch_loss(policy, buf, fx.cfg.ppo, g, &stats);
    CHECK(stats.clip_frac == 0.f);

    // surrogate loss before any optimizer step equals -mean(advantage)
    double mean_adv = 0;
    for (float a : buf.advantage) mean_adv += a;
    mean_adv /= static_cast<double>(buf.advantage.size());
    CHECK(stats.loss_pi == doctest::Approx(-mean_adv).epsilon(2e-4));
}

TEST_CASE("recurrent replay reproduces stored values within 1e-5") {
    PpoFixture fx;
    PolicyNetwork policy(fx.cfg.net, FusionVariant::kSacfFull, 8);
    RolloutBuffer buf = fx.collect(policy, 33);

    const int S = buf.slots, T = buf.horizon;
    Graph g;
    Graph::NoGradScope ng(g);
    PolicyNetwork::State st;
    st.gru_h = Tensor::from_values({S, fx.cfg.net.gru_hidden}, buf.start_gru_h);
    st.lstm.h = Tensor::from_values({S, fx.cfg.net.lstm_hidden}, buf.start_lstm_h);
    st.lstm.c = Tensor::from_values({S, fx.cfg.net.lstm_hidden}, buf.start_lstm_c);
    for (int t = 0; t < T; ++t) {
        std::vector<float> dv(buf.depth.begin() + static_cast<std::ptrdiff_t>(t) * S * buf.rays,
                              buf.depth.begin() + static_cast<std::ptrdiff_t>(t + 1) * S * buf.rays);
        std::vector<float> av(buf.audio.begin() + static_cast<std::ptrdiff_t>(t) * S * buf.audio_dim,
                              buf.audio.begin() + static_cast<std::ptrdiff_t>(t + 1) * S * buf.audio_dim);
        auto fwd = policy.step(g, Tensor::from_values({S, buf.rays}, std::move(dv)),
                               Tensor::from_values({S, buf.audio_dim}, std::move(av)), st);
        for (int s = 0; s < S; ++s) {
            CHECK(fwd.value.value_at(s) ==
                  doctest::Approx(buf.value[static_cast<std::size_t>(buf.idx(t, s))]).epsilon(1e-5));
        }
        std::vector<float> keep(static_cast<std::size_t>(S));
        for (int s = 0; s < S; ++s)
            keep[static_cast<std::size_t>(s)] =
                buf.done[static_cast<std::size_t>(buf.idx(t, s))] ? 0.f : 1.f;
        st = policy.masked_state(g, fwd.state, Tensor::from_values({S, 1}, std::move(keep)));
    }
}

TEST_CASE("gae: one terminal step with reward 1 and zero value") {
    RolloutBuffer buf;
    buf.horizon = 1;
    buf.slots = 1;
    buf.reward = {1.f};
    buf.value = {0.f};
    buf.done = {1};
    buf.bootstrap_value = {5.f};  // masked by done
    compute_gae(buf, 0.99f, 0.95f, /*normalize=*/false);
    CHECK(buf.advantage[0] == doctest::Approx(1.0));
    CHECK(buf.ret[0] == doctest::Approx(1.0));
}

TEST_CASE("gae: constant rewards at the Bellman fixed point give zero advantages") {
    const float gamma = 0.9f;
    const float r = 0.5f;
    const float v = r / (1.f - gamma);
    RolloutBuffer buf;
    buf.horizon = 8;
    buf.slots = 1;
    buf.reward.assign(8, r);
    buf.value.assign(8, v);
    buf.done.assign(8, 0);
    buf.bootstrap_value = {v};
    compute_gae(buf, gamma, 0.95f, false);
    for (float a : buf.advantage) CHECK(a == doctest::Approx(0.0).epsilon(1e-5));
}

TEST_CASE("gae with lambda 0 reduces to one-step TD residuals") {
    Rng rng(4);
    RolloutBuffer buf;
    buf.horizon = 6;
    buf.slots = 2;
    const int n = 12;
    for (int i = 0; i < n; ++i) {
        buf.reward.push_back(rng.uniform(-1.f, 1.f));
        buf.value.push_back(rng.uniform(-1.f, 1.f));
        buf.done.push_back(rng.next_double() < 0.3 ? 1 : 0);
    }
    buf.bootstrap_value = {rng.uniform(-1.f, 1.f), rng.uniform(-1.f, 1.f)};
    const float gamma = 0.99f;
    compute_gae(buf, gamma, 0.f, false);
    for (int s = 0; s < 2; ++s)
        for (int t = 0; t < 6; ++t) {
            const int i = buf.idx(t, s);
            const float not_done = buf.done[static_cast<std::size_t>(i)] ? 0.f : 1.f;
            const float next_v = t == 5 ? buf.bootstrap_value[static_cast<std::size_t>(s)]
                                        : buf.value[static_cast<std::size_t>(buf.idx(t + 1, s))];
            const float td = buf.reward[static_cast<std::size_t>(i)] + gamma * next_v * not_done -
                             buf.value[static_cast<std::size_t>(i)];
            CHECK(buf.advantage[static_cast<std::size_t>(i)] == doctest::Approx(td).epsilon(1e-6));
        }
}

TEST_CASE("clipped surrogate never exceeds the unclipped objective") {
    Rng rng(9);
    Graph g;
    for (int trial = 0; trial < 200; ++trial) {
        const float ratio = rng.uniform(0.2f, 2.f);
        const float adv = rng.uniform(-2.f, 2.f);
        const float clipped = std::min(std::max(ratio, 0.9f), 1.1f);
        const float obj = std::min(ratio * adv, clipped * adv);
        CHECK(obj <= ratio * adv + 1e-6f);
    }
    (void)g;
}

TEST_CASE("ppo_update clips the reported gradient norm at the maximum") {
    PpoFixture fx;
    PolicyNetwork policy(fx.cfg.net, FusionVariant::kSacfFull, 9);
    OptimizerState opt(policy.registry().params(), fx.cfg.ppo.lr, fx.cfg.ppo.adam_eps,
                       fx.cfg.ppo.updates);
    RolloutBuffer buf = fx.collect(policy, 41);
    compute_gae(buf, fx.cfg.ppo.gamma, fx.cfg.ppo.gae_lambda);
    UpdateStats stats = ppo_update(policy, opt, buf, fx.cfg.ppo, 0);
    CHECK(stats.grad_norm <= fx.cfg.ppo.max_grad_norm + 1e-6f);
    CHECK(stats.entropy >= 0.f);
    CHECK(stats.entropy <= std::log(4.f) + 1e-5f);
    CHECK(std::isfinite(stats.loss_v));
    CHECK(std::isfinite(stats.aux));
}

TEST_CASE("composite policy loss gradients match finite differences on a 2-step rollout") {
    ExperimentConfig cfg = testutil::tiny_experiment_config();
    cfg.ppo.horizon = 2;
    cfg.ppo.num_envs = 2;
    sim::SoundPool sounds = sim::SoundPool::create(3, cfg.net.bands, 3, 2);
    PolicyNetwork policy(cfg.net, FusionVariant::kSacfFull, 11);

    VecEnv envs(cfg.ppo.num_envs, cfg.simp, sounds, true, 5);
    PolicyNetwork::State st = policy.zero_state(cfg.ppo.num_envs);
    RolloutBuffer buf = collect_rollout(policy, envs, 2, st);
    compute_gae(buf, cfg.ppo.gamma, cfg.ppo.gae_lambda);

    auto f = [&](Graph& g) { return ppo_epoch_loss(policy, buf, cfg.ppo, g); };
    std::vector<Tensor> params;
    for (auto& p : policy.registry().params()) params.push_back(p.tensor);
    FdCheckOptions opts;
    opts.max_coords_per_param = 4;
    opts.seed = 2;
    const float err = finite_difference_check(f, params, opts);
    CHECK(err < 1e-2f);
}

TEST_CASE("smoke: ten updates on a small grid complete with finite losses") {
    ExperimentConfig cfg = testutil::tiny_experiment_config();
    sim::SoundPool sounds = sim::SoundPool::create(cfg.seed, cfg.net.bands, 4, 2);
    PolicyNetwork policy(cfg.net, FusionVariant::kSacfFull, cfg.seed);
    OptimizerState opt(policy.registry().params(), cfg.ppo.lr, cfg.ppo.adam_eps, cfg.ppo.updates);
    VecEnv envs(cfg.ppo.num_envs, cfg.simp, sounds, true, cfg.seed);
    PolicyNetwork::State st = policy.zero_state(cfg.ppo.num_envs);
    for (int u = 0; u < 10; ++u) {
        RolloutBuffer buf = collect_rollout(policy, envs, cfg.ppo.horizon, st);
        compute_gae(buf, cfg.ppo.gamma, cfg.ppo.gae_lambda);
        UpdateStats s = ppo_update(policy, opt, buf, cfg.ppo, u);
        CHECK(std::isfinite(s.loss_pi));
        CHECK(std::isfinite(s.loss_v));
        CHECK(std::isfinite(s.entropy));
    }
}

TEST_CASE("training logs carry the update schedule and resume continues it") {
    namespace fs = std::filesystem;
    ExperimentConfig cfg = testutil::tiny_experiment_config();
    cfg.ppo.updates = 4;
    cfg.eval_every = 2;
    cfg.eval_episodes = 2;
    cfg.checkpoint_every = 2;
    const std::string dir = "ppo_resume_test_tmp";
    fs::remove_all(dir);

    TrainArtifacts full = run_training(cfg, dir + "/full");
    TrainLog full_log = parse_train_log(full.log_path);
    REQUIRE(full_log.updates.size() == 4);
    // linear decay: lr(u) = base * (1 - u / total)
    for (int u = 0; u < 4; ++u)
        CHECK(full_log.updates[static_cast<std::size_t>(u)].lr ==
              doctest::Approx(cfg.ppo.lr * (1.f - static_cast<float>(u) / 4.f)).epsilon(1e-5));

    TrainArtifacts resumed =
        run_training(cfg, dir + "/resumed", dir + "/full/ckpt_2.bin");
    TrainLog res_log = parse_train_log(resumed.log_path);
    REQUIRE(res_log.updates.size() == 2);
    CHECK(res_log.updates[0].update == 2);
    CHECK(res_log.updates[0].lr == doctest::Approx(cfg.ppo.lr * 0.5f).epsilon(1e-5));
    fs::remove_all(dir);
}
