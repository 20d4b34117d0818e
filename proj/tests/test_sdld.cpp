#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sacf/sdld.hpp"
#include "sacf/optim.hpp"
#include "test_util.hpp"

using namespace sacf;
using namespace sacf::ad;

namespace {
constexpr float kPi = 3.14159265358979323846f;

void zero_all(ParamRegistry& reg) {
    for (auto& p : reg.params())
        for (float& v : p.tensor.values_mut()) v = 0.f;
}

std::vector<float> random_distribution(int k, Rng& rng) {
    std::vector<float> p(static_cast<std::size_t>(k));
    float sum = 0.f;
    for (auto& v : p) {
        v = rng.uniform(0.f, 1.f) + 1e-4f;
        sum += v;
    }
    for (auto& v : p) v /= sum;
    // force exact re-normalization in float
    float s2 = 0.f;
    for (std::size_t i = 0; i + 1 < p.size(); ++i) s2 += p[i];
    p.back() = 1.f - s2;
    return p;
}

struct SdldFixture {
    NetConfig cfg = testutil::tiny_net_config();
    ParamRegistry reg;
    Sdld sdld;
    SdldFixture(std::uint64_t seed = 5) {
        Rng rng(seed);
        sdld = Sdld::create(reg, cfg, rng);
    }
    Tensor f_v(Rng& rng, float lo = -1.f, float hi = 1.f) {
        std::vector<float> v(static_cast<std::size_t>(cfg.channels * cfg.map_h * cfg.map_w));
        for (auto& x : v) x = rng.uniform(lo, hi);
        return Tensor::from_values({1, cfg.channels, cfg.map_h, cfg.map_w}, std::move(v));
    }
    Tensor f_a(Rng& rng, float lo = -1.f, float hi = 1.f) {
        std::vector<float> v(static_cast<std::size_t>(cfg.audio_channels * cfg.audio_h * cfg.audio_w));
        for (auto& x : v) x = rng.uniform(lo, hi);
        return Tensor::from_values({1, cfg.audio_channels, cfg.audio_h, cfg.audio_w}, std::move(v));
    }
};

}  // namespace

TEST_CASE("bin grid: K=20, 1.5 m distance bins, strictly increasing centers") {
    BinGrid grid;
    CHECK(grid.k == 20);
    CHECK(grid.distance_width() == doctest::Approx(1.5).epsilon(1e-7));
    for (int i = 0; i < grid.k; ++i) {
        CHECK(grid.distance_center(i) > 0.f);
        CHECK(grid.distance_center(i) < 30.f);
        CHECK(grid.angle_center(i) > -kPi);
        CHECK(grid.angle_center(i) < kPi);
        if (i) {
            CHECK(grid.distance_center(i) > grid.distance_center(i - 1));
            CHECK(grid.angle_center(i) > grid.angle_center(i - 1));
        }
    }
    CHECK(grid.distance_center(0) == doctest::Approx(0.75));
    CHECK(grid.distance_center(19) == doctest::Approx(29.25));
}

TEST_CASE("decode_expectation: uniform distance distribution decodes to 15 m") {
    BinGrid grid;
    std::vector<float> p(20, 0.05f);
    CHECK(decode_expectation(p, grid.distance_centers()) == doctest::Approx(15.0).epsilon(1e-6));
}

TEST_CASE("decode_expectation: one-hot bin zero decodes to 0.75 m") {
    BinGrid grid;
    std::vector<float> p(20, 0.f);
    p[0] = 1.f;
    CHECK(decode_expectation(p, grid.distance_centers()) == doctest::Approx(0.75));
}

TEST_CASE("decode_expectation: 0.25/0.75 split between bins 0 and 19 gives 22.125 m") {
    BinGrid grid;
    std::vector<float> p(20, 0.f);
    p[0] = 0.25f;
    p[19] = 0.75f;
    CHECK(decode_expectation(p, grid.distance_centers()) == doctest::Approx(22.125).epsilon(1e-6));
}

TEST_CASE("decode_expectation rejects unnormalized distributions") {
    BinGrid grid;
    std::vector<float> p(20, 0.1f);
    CHECK_THROWS_AS(decode_expectation(p, grid.distance_centers()), ContractViolation);
}

TEST_CASE("decode_expectation is linear in the distribution and never extrapolates") {
    BinGrid grid;
    Rng rng(9);
    const auto centers = grid.distance_centers();
    for (int trial = 0; trial < 1000; ++trial) {
        auto p1 = random_distribution(20, rng);
        auto p2 = random_distribution(20, rng);
        const float alpha = rng.uniform(0.f, 1.f);
        std::vector<float> mixed(20);
        for (int i = 0; i < 20; ++i)
            mixed[static_cast<std::size_t>(i)] = alpha * p1[static_cast<std::size_t>(i)] +
                                                 (1.f - alpha) * p2[static_cast<std::size_t>(i)];
        const float d1 = decode_expectation(p1, centers);
        const float d2 = decode_expectation(p2, centers);
        const float dm = decode_expectation(mixed, centers);
        CHECK(dm == doctest::Approx(alpha * d1 + (1.f - alpha) * d2).epsilon(1e-4));
        CHECK(d1 >= centers.front());
        CHECK(d1 <= centers.back());
    }
}

TEST_CASE("encode_direction: axis and diagonal cases") {
    auto [x0, y0] = encode_direction(0.f);
    CHECK(x0 == doctest::Approx(1.0));
    CHECK(y0 == doctest::Approx(0.0));
    auto [x1, y1] = encode_direction(kPi / 2.f);
    CHECK(x1 == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(y1 == doctest::Approx(1.0));
    auto [x2, y2] = encode_direction(3.f * kPi / 4.f);
    CHECK(x2 == doctest::Approx(-std::sqrt(2.f) / 2.f).epsilon(1e-6));
    CHECK(y2 == doctest::Approx(std::sqrt(2.f) / 2.f).epsilon(1e-6));
}

TEST_CASE("encode_direction gives unit norm for random angles") {
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        auto [x, y] = encode_direction(rng.uniform(-10.f, 10.f));
        CHECK(x * x + y * y == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("fuse_av: zero inputs give a finite vector of the configured dim") {
    SdldFixture fx;
    Graph g;
    Tensor out = fx.sdld.fuse_av(
        g, Tensor::zeros({1, fx.cfg.channels, fx.cfg.map_h, fx.cfg.map_w}),
        Tensor::zeros({1, fx.cfg.audio_channels, fx.cfg.audio_h, fx.cfg.audio_w}));
    CHECK(out.shape() == Shape{1, fx.cfg.fused_dim});
    for (float v : out.values()) CHECK(std::isfinite(v));
}

TEST_CASE("fuse_av is swap-sensitive for random inputs") {
    // the two maps have different channel counts in general; swap sensitivity
    // is checked through the pooled channels with a same-shape configuration
    NetConfig cfg = testutil::tiny_net_config();
    cfg.audio_channels = cfg.channels;
    cfg.audio_h = cfg.map_h;
    cfg.audio_w = cfg.map_w;
    ParamRegistry reg;
    Rng rng(5);
    Sdld sdld = Sdld::create(reg, cfg, rng);
    Rng data(42);
    int distinct = 0;
    for (int pair = 0; pair < 100; ++pair) {
        std::vector<float> av(static_cast<std::size_t>(cfg.channels * cfg.map_h * cfg.map_w));
        std::vector<float> bv(av.size());
        for (auto& x : av) x = data.uniform(-1.f, 1.f);
        for (auto& x : bv) x = data.uniform(-1.f, 1.f);
        Graph g;
        Tensor a = Tensor::from_values({1, cfg.channels, cfg.map_h, cfg.map_w}, av);
        Tensor b = Tensor::from_values({1, cfg.channels, cfg.map_h, cfg.map_w}, bv);
        Tensor ab = sdld.fuse_av(g, a, b);
        Tensor ba = sdld.fuse_av(g, b, a);
        bool same = true;
        for (int i = 0; i < ab.size() && same; ++i) same = ab.value_at(i) == ba.value_at(i);
        if (!same) ++distinct;
    }
    CHECK(distinct == 100);
}

TEST_CASE("predict_bins: zero-initialized head gives uniform 0.05 distributions") {
    SdldFixture fx;
    zero_all(fx.reg);
    Graph g;
    Rng rng(2);
    Tensor f_av = Tensor::full({1, fx.cfg.fused_dim}, 0.3f);
    auto bins = fx.sdld.predict_bins(g, f_av);
    for (float v : bins.p_dist.values()) CHECK(v == doctest::Approx(0.05).epsilon(1e-6));
    for (float v : bins.p_angle.values()) CHECK(v == doctest::Approx(0.05).epsilon(1e-6));
    CHECK(bins.sed_logit.value_at(0) == 0.f);
}

TEST_CASE("predict_bins distributions always sum to one") {
    SdldFixture fx;
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        Graph g;
        auto bins = fx.sdld.predict_bins(
            g, Tensor::from_values({1, fx.cfg.fused_dim},
                                   random_distribution(fx.cfg.fused_dim, rng)));
        float sum = 0.f;
        for (float v : bins.p_dist.values()) sum += v;
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("supervised cross-entropy on a fixed batch decreases over 200 steps") {
    SdldFixture fx(21);
    Rng data(33);
    const int m = 16;
    std::vector<float> fv(static_cast<std::size_t>(m * fx.cfg.fused_dim));
    for (auto& x : fv) x = data.uniform(-1.f, 1.f);
    Tensor f_av = Tensor::from_values({m, fx.cfg.fused_dim}, std::move(fv));
    std::vector<int> targets(static_cast<std::size_t>(m));
    for (auto& t : targets) t = data.uniform_int(0, fx.cfg.bins);

    OptimizerState opt(fx.reg.params(), 1e-2f, 1e-8f, 1);
    float first = 0.f, last = 0.f;
    for (int step = 0; step < 200; ++step) {
        Graph g;
        auto bins = fx.sdld.predict_bins(g, f_av);
        Tensor loss = mean_all(g, categorical_nll(g, bins.logits_dist, targets));
        if (step == 0) first = loss.scalar_value();
        last = loss.scalar_value();
        opt.zero_grad();
        g.backward(loss);
        opt.adam_step(1e-2f);
    }
    CHECK(last < first * 0.5f);
}

TEST_CASE("sdld_step: zero-initialized network gives g=0, d=15, s=0.5") {
    SdldFixture fx;
    zero_all(fx.reg);
    Graph g;
    Rng rng(4);
    auto out = fx.sdld.step(g, fx.f_v(rng), fx.f_a(rng), fx.sdld.zero_state(1));
    CHECK(out.d_hat.value_at(0) == doctest::Approx(15.0).epsilon(1e-5));
    CHECK(out.sed.value_at(0) == doctest::Approx(0.5));
    CHECK(out.theta_hat.value_at(0) == doctest::Approx(0.0).epsilon(1e-5));
    for (float v : out.descriptor.values()) CHECK(v == 0.f);
}

TEST_CASE("sdld_step gradients into inputs match finite differences") {
    SdldFixture fx(31);
    Rng rng(8);
    Tensor f_v = fx.f_v(rng);
    Tensor f_a = fx.f_a(rng);
    auto f = [&](Graph& g) {
        auto out = fx.sdld.step(g, f_v, f_a, fx.sdld.zero_state(1));
        Tensor target = sum_all(g, mul(g, out.descriptor, out.descriptor));
        Tensor d_term = mean_all(g, out.d_hat);
        return add(g, target, scale(g, d_term, 0.1f));
    };
    std::vector<Tensor> params = {f_v, f_a, fx.sdld.fuse.w, fx.sdld.head_angle.w,
                                  fx.sdld.lstm.wx, fx.sdld.to_descriptor.w};
    const float err = finite_difference_check(f, params);
    CHECK(err < 1e-2f);
}

TEST_CASE("sdld_aux_loss: perfect predictions give near-zero loss") {
    SdldFixture fx;
    Graph g;
    const int k = fx.cfg.bins;
    std::vector<float> dl(static_cast<std::size_t>(k), -30.f), al(static_cast<std::size_t>(k), -30.f);
    dl[3] = 30.f;
    al[7] = 30.f;
    Sdld::BinsOut bins;
    bins.logits_dist = Tensor::from_values({1, k}, dl);
    bins.logits_angle = Tensor::from_values({1, k}, al);
    bins.sed_logit = Tensor::from_values({1, 1}, {-30.f});
    bins.p_dist = softmax_lastdim(g, bins.logits_dist);
    bins.p_angle = softmax_lastdim(g, bins.logits_angle);
    Tensor loss = sdld_aux_loss(g, bins, {{3, 7, false}});
    CHECK(loss.scalar_value() == doctest::Approx(0.0).epsilon(1e-5));
}

TEST_CASE("sdld_aux_loss: uniform predictions cost ln(20) per classification head") {
    SdldFixture fx;
    zero_all(fx.reg);
    Graph g;
    Rng rng(3);
    auto bins = fx.sdld.predict_bins(g, Tensor::full({1, fx.cfg.fused_dim}, 0.2f));
    Tensor loss = sdld_aux_loss(g, bins, {{5, 5, false}});
    // 2 * ln(20) + bce(0 logit) = 2 * 2.9957 + ln 2
    const float expect = 2.f * std::log(20.f) + std::log(2.f);
    CHECK(loss.scalar_value() == doctest::Approx(expect).epsilon(1e-4));
}

TEST_CASE("sdld_aux_loss rejects out-of-range bins and checks gradients") {
    SdldFixture fx(41);
    Rng rng(12);
    Tensor f_v = fx.f_v(rng);
    Tensor f_a = fx.f_a(rng);
    {
        Graph g;
        auto out = fx.sdld.step(g, f_v, f_a, fx.sdld.zero_state(1));
        CHECK_THROWS_AS(sdld_aux_loss(g, out.bins, {{25, 0, false}}), ContractViolation);
    }
    auto f = [&](Graph& g) {
        auto out = fx.sdld.step(g, f_v, f_a, fx.sdld.zero_state(1));
        return sdld_aux_loss(g, out.bins, {{4, 11, true}});
    };
    std::vector<Tensor> params = {fx.sdld.fuse.w, fx.sdld.head_dist.w, fx.sdld.head_sed.w,
                                  fx.sdld.head_sed.b};
    const float err = finite_difference_check(f, params);
    CHECK(err < 1e-2f);
}

TEST_CASE("descriptor trajectory settles under repeated identical observations") {
    // short supervised fit so the LSTM has non-degenerate dynamics, then feed
    // a constant observation and watch ||g_t - g_{t-1}|| settle
    SdldFixture fx(51);
    Rng data(14);
    OptimizerState opt(fx.reg.params(), 3e-3f, 1e-8f, 1);
    for (int step = 0; step < 300; ++step) {
        Graph g;
        LstmCell::State st = fx.sdld.zero_state(1);
        Tensor loss = Tensor::scalar(0.f);
        Rng episode(step % 7 + 1);
        for (int t = 0; t < 6; ++t) {
            auto out = fx.sdld.step(g, fx.f_v(episode, 0.f, 1.f), fx.f_a(episode, 0.f, 1.f), st);
            st = out.state;
            loss = add(g, loss, sdld_aux_loss(g, out.bins, {{t % 20, (3 * t) % 20, false}}));
        }
        opt.zero_grad();
        g.backward(loss);
        opt.adam_step(3e-3f);
    }

    Graph g;
    Graph::NoGradScope ng(g);
    Rng obs_rng(77);
    Tensor f_v = fx.f_v(obs_rng, 0.f, 1.f);
    Tensor f_a = fx.f_a(obs_rng, 0.f, 1.f);
    LstmCell::State st = fx.sdld.zero_state(1);
    std::vector<float> prev;
    std::vector<float> deltas;
    for (int t = 0; t < 30; ++t) {
        auto out = fx.sdld.step(g, f_v, f_a, st);
        st = out.state;
        std::vector<float> cur(out.descriptor.values().begin(), out.descriptor.values().end());
        if (!prev.empty()) {
            float d = 0.f;
            for (std::size_t i = 0; i < cur.size(); ++i)
                d += (cur[i] - prev[i]) * (cur[i] - prev[i]);
            deltas.push_back(std::sqrt(d));
        }
        prev = cur;
    }
    float early = 0.f, late = 0.f;
    for (int i = 0; i < 5; ++i) early = std::max(early, deltas[static_cast<std::size_t>(i)]);
    for (std::size_t i = deltas.size() - 5; i < deltas.size(); ++i) late = std::max(late, deltas[i]);
    CHECK(late <= early + 1e-6f);
    CHECK(late < 0.05f);
}
