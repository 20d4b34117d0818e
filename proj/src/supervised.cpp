#include "sacf/supervised.hpp"

#include <algorithm>
#include <cmath>

#include "sacf/metrics.hpp"

namespace sacf {

namespace {
std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a ^ (b * 0x9e3779b97f4a7c15ull);
    return splitmix64(x);
}
}  // namespace

int LocalizationDataset::total_steps() const {
    int n = 0;
    for (const auto& e : episodes) n += static_cast<int>(e.steps.size());
    return n;
}

LocalizationDataset collect_localization_data(std::uint64_t seed, const sim::SoundPool& sounds,
                                              const sim::SimParams& params, int target_steps,
                                              bool heard_split, int episode_cap) {
    LocalizationDataset data;
    Rng policy_rng = derive_stream(seed, "roam-policy");
    std::uint64_t episode = 0;
    while (data.total_steps() < target_steps) {
        const std::uint64_t ep_seed = mix(seed, ++episode);
        sim::EpisodeSpec spec = sim::sample_episode(ep_seed, sounds, heard_split, params);
        sim::Env env;
        env.params = params;
        env.reset(spec, sounds.by_id(spec.sound_id), mix(ep_seed, 0x10cau));
        OraclePlanner oracle(env.spec().grid, env.spec().source);

        LocalizationDataset::Episode ep;
        sim::Observation obs = env.observe_with_noise();
        for (int t = 0; t < episode_cap && !env.done(); ++t) {
            sim::TruthLabels tl = env.truth();
            ep.steps.push_back(
                {obs.depth, obs.audio, {tl.distance_bin, tl.angle_bin, tl.reached}});

            sim::Action a;
            if (policy_rng.next_double() < 0.8) {
                a = oracle.next_action(env.pose());
                if (a == sim::Action::kStop) {
                    // keep roaming near the source instead of terminating
                    a = policy_rng.next_double() < 0.7 ? sim::Action::kTurnLeft
                                                       : sim::Action::kMoveForward;
                }
            } else {
                const double u = policy_rng.next_double();
                a = u < 0.4 ? sim::Action::kMoveForward
                            : (u < 0.7 ? sim::Action::kTurnLeft : sim::Action::kTurnRight);
            }
            sim::StepResult r = env.step(a);
            obs = r.obs;
        }
        if (!ep.steps.empty()) data.episodes.push_back(std::move(ep));
    }
    return data;
}

std::unique_ptr<SupervisedModel> SupervisedModel::create(const NetConfig& cfg, std::uint64_t seed) {
    auto m = std::make_unique<SupervisedModel>();
    m->cfg = cfg;
    Rng rng = derive_stream(seed, "init");
    m->visual = VisualEncoder::create(m->reg, cfg, rng);
    m->audio = AudioEncoder::create(m->reg, cfg, rng);
    m->sdld = Sdld::create(m->reg, cfg, rng);
    m->probe_dist_h = Linear::create(m->reg, "probe.dist_h", cfg.descriptor_dim, 32, rng);
    m->probe_dist = Linear::create(m->reg, "probe.dist", 32, cfg.bins, rng);
    m->probe_angle_h = Linear::create(m->reg, "probe.angle_h", cfg.descriptor_dim, 32, rng);
    m->probe_angle = Linear::create(m->reg, "probe.angle", 32, cfg.bins, rng);
    return m;
}

namespace {

struct EpisodeForward {
    std::vector<Sdld::BinsOut> bins;               // per step
    std::vector<ad::Tensor> probe_dist_logits;     // per step [1, K]
    std::vector<ad::Tensor> probe_angle_logits;    // per step [1, K]
};

EpisodeForward forward_episode(const SupervisedModel& m, ad::Graph& g,
                               const LocalizationDataset::Episode& ep) {
    EpisodeForward out;
    LstmCell::State st = m.sdld.zero_state(1);
    for (const auto& step : ep.steps) {
        ad::Tensor depth = ad::Tensor::from_values({1, m.cfg.rays}, step.depth);
        ad::Tensor audio =
            ad::Tensor::from_values({1, static_cast<int>(step.audio.size())}, step.audio);
        ad::Tensor f_v = m.visual.encode(g, depth);
        AudioEncoder::Out a = m.audio.encode(g, audio);
        Sdld::StepOut s = m.sdld.step(g, f_v, a.map, st);
        st = s.state;
        out.bins.push_back(s.bins);
        out.probe_dist_logits.push_back(
            m.probe_dist.forward(g, ad::relu(g, m.probe_dist_h.forward(g, s.descriptor))));
        out.probe_angle_logits.push_back(
            m.probe_angle.forward(g, ad::relu(g, m.probe_angle_h.forward(g, s.descriptor))));
    }
    return out;
}

int argmax_row(std::span<const float> v) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i)
        if (v[static_cast<std::size_t>(i)] > v[static_cast<std::size_t>(best)]) best = i;
    return best;
}

bool within_one_linear(int a, int b) { return std::abs(a - b) <= 1; }
bool within_one_circular(int a, int b, int k) {
    const int d = std::abs(a - b);
    return std::min(d, k - d) <= 1;
}

}  // namespace

void train_localization(SupervisedModel& model, const LocalizationDataset& data,
                        const SupervisedTrainOptions& opts) {
    SACF_REQUIRE(!data.episodes.empty(), "train_localization: empty dataset");
    OptimizerState opt(model.reg.params(), opts.lr, 1e-8f, /*total_updates=*/1);

    std::vector<int> order(data.episodes.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng shuffle_rng = derive_stream(opts.shuffle_seed, "sup-shuffle");

    const long total_batches =
        static_cast<long>(opts.epochs) *
        ((static_cast<long>(order.size()) + opts.batch_episodes - 1) / opts.batch_episodes);
    long batch_index = 0;

    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        // Fisher-Yates with the deterministic stream
        for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
            std::swap(order[static_cast<std::size_t>(i)],
                      order[static_cast<std::size_t>(shuffle_rng.uniform_int(0, i + 1))]);

        for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(opts.batch_episodes)) {
            opt.zero_grad();
            const std::size_t hi =
                std::min(order.size(), b + static_cast<std::size_t>(opts.batch_episodes));
            for (std::size_t j = b; j < hi; ++j) {
                const auto& ep = data.episodes[static_cast<std::size_t>(order[j])];
                ad::Graph g;
                EpisodeForward fwd = forward_episode(model, g, ep);
                ad::Tensor loss = ad::Tensor::scalar(0.f);
                for (std::size_t t = 0; t < ep.steps.size(); ++t) {
                    const GroundTruth& truth = ep.steps[t].truth;
                    loss = ad::add(g, loss, sdld_aux_loss(g, fwd.bins[t], {truth}));
                    loss = ad::add(g, loss,
                                   ad::mean_all(g, ad::categorical_nll(g, fwd.probe_dist_logits[t],
                                                                       {truth.distance_bin})));
                    loss = ad::add(g, loss,
                                   ad::mean_all(g, ad::categorical_nll(g, fwd.probe_angle_logits[t],
                                                                       {truth.angle_bin})));
                }
                loss = ad::scale(g, loss, 1.f / static_cast<float>(ep.steps.size()));
                g.backward(loss);
            }
            opt.clip_global_grad_norm(5.f);
            // linear decay to 10% of the base rate over the run
            const float frac = static_cast<float>(batch_index++) / static_cast<float>(total_batches);
            opt.adam_step(opts.lr * (1.f - 0.9f * frac));
        }
    }
}

LocalizationAccuracy evaluate_localization(const SupervisedModel& model,
                                           const LocalizationDataset& data) {
    LocalizationAccuracy acc;
    long d_ok = 0, a_ok = 0, pd_ok = 0, pa_ok = 0;
    const int k = model.cfg.bins;
    for (const auto& ep : data.episodes) {
        ad::Graph g;
        ad::Graph::NoGradScope ng(g);
        EpisodeForward fwd = forward_episode(model, g, ep);
        for (std::size_t t = 0; t < ep.steps.size(); ++t) {
            const GroundTruth& truth = ep.steps[t].truth;
            if (within_one_linear(argmax_row(fwd.bins[t].p_dist.values()), truth.distance_bin))
                ++d_ok;
            if (within_one_circular(argmax_row(fwd.bins[t].p_angle.values()), truth.angle_bin, k))
                ++a_ok;
            if (within_one_linear(argmax_row(fwd.probe_dist_logits[t].values()), truth.distance_bin))
                ++pd_ok;
            if (within_one_circular(argmax_row(fwd.probe_angle_logits[t].values()), truth.angle_bin,
                                    k))
                ++pa_ok;
            ++acc.frames;
        }
    }
    SACF_REQUIRE(acc.frames > 0, "evaluate_localization: empty dataset");
    acc.dist_within_one = 100.0 * static_cast<double>(d_ok) / acc.frames;
    acc.angle_within_one = 100.0 * static_cast<double>(a_ok) / acc.frames;
    acc.probe_dist_within_one = 100.0 * static_cast<double>(pd_ok) / acc.frames;
    acc.probe_angle_within_one = 100.0 * static_cast<double>(pa_ok) / acc.frames;
    return acc;
}

}  // namespace sacf
