#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sacf/nets.hpp"
#include "test_util.hpp"

using namespace sacf;
using namespace sacf::ad;

namespace {

void zero_all(ParamRegistry& reg) {
    for (auto& p : reg.params())
        for (float& v : p.tensor.values_mut()) v = 0.f;
}

Tensor rand_depth(const NetConfig& cfg, Rng& rng, int m = 1) {
    std::vector<float> v(static_cast<std::size_t>(m * cfg.rays));
    for (auto& x : v) x = rng.uniform(0.f, 1.f);
    return Tensor::from_values({m, cfg.rays}, std::move(v));
}

Tensor rand_audio(const NetConfig& cfg, Rng& rng, int m = 1) {
    std::vector<float> v(static_cast<std::size_t>(m * 2 * cfg.bands));
    for (auto& x : v) x = rng.uniform(0.f, 0.5f);
    return Tensor::from_values({m, 2 * cfg.bands}, std::move(v));
}

}  // namespace

TEST_CASE("visual encoder: zero depth yields a finite C x H x W map") {
    NetConfig cfg = testutil::tiny_net_config();
    ParamRegistry reg;
    Rng rng(3);
    VisualEncoder enc = VisualEncoder::create(reg, cfg, rng);
    Graph g;
    Tensor out = enc.encode(g, Tensor::zeros({1, cfg.rays}));
    CHECK(out.shape() == Shape{1, cfg.channels, cfg.map_h, cfg.map_w});
    for (float v : out.values()) CHECK(std::isfinite(v));
}

TEST_CASE("visual encoder: distinct inputs give distinct outputs") {
    NetConfig cfg = testutil::tiny_net_config();
    ParamRegistry reg;
    Rng rng(4);
    VisualEncoder enc = VisualEncoder::create(reg, cfg, rng);
    Rng data(17);
    for (int pair = 0; pair < 100; ++pair) {
        Graph g;
        Tensor a = rand_depth(cfg, data);
        Tensor b = rand_depth(cfg, data);
        Tensor ya = enc.encode(g, a);
        Tensor yb = enc.encode(g, b);
        bool same = true;
        for (int i = 0; i < ya.size() && same; ++i) same = ya.value_at(i) == yb.value_at(i);
        CHECK_FALSE(same);
    }
}

TEST_CASE("visual encoder: fixed seed and input give bit-identical output") {
    NetConfig cfg = testutil::tiny_net_config();
    auto run = [&](std::vector<float>& out) {
        ParamRegistry reg;
        Rng rng(99);
        VisualEncoder enc = VisualEncoder::create(reg, cfg, rng);
        Rng data(5);
        Graph g;
        Tensor y = enc.encode(g, rand_depth(cfg, data));
        out.assign(y.values().begin(), y.values().end());
    };
    std::vector<float> a, b;
    run(a);
    run(b);
    CHECK(a == b);
}

TEST_CASE("visual encoder rejects out-of-range depth and wrong length") {
    NetConfig cfg = testutil::tiny_net_config();
    ParamRegistry reg;
    Rng rng(8);
    VisualEncoder enc = VisualEncoder::create(reg, cfg, rng);
    Graph g;
    CHECK_THROWS_AS(enc.encode(g, Tensor::zeros({1, cfg.rays + 1})), ContractViolation);
    CHECK_THROWS_AS(enc.encode(g, Tensor::full({1, cfg.rays}, 1.5f)), ContractViolation);
}

TEST_CASE("audio encoder: pooled vector is exactly the linear head of the pooled map") {
    NetConfig cfg = testutil::tiny_net_config();
    ParamRegistry reg;
    Rng rng(12);
    AudioEncoder enc = AudioEncoder::create(reg, cfg, rng);
    Rng data(21);
    Graph g;
    Tensor audio = rand_audio(cfg, data);
    AudioEncoder::Out out = enc.encode(g, audio);
    Tensor expect = enc.pool_head.forward(g, mean_pool_spatial(g, out.map));
    REQUIRE(out.pooled.shape() == expect.shape());
    for (int i = 0; i < expect.size(); ++i) CHECK(out.pooled.value_at(i) == expect.value_at(i));
}

TEST_CASE("audio encoder rejects negative intensities") {
    NetConfig cfg = testutil::tiny_net_config();
    ParamRegistry reg;
    Rng rng(13);
    AudioEncoder enc = AudioEncoder::create(reg, cfg, rng);
    Graph g;
    CHECK_THROWS_AS(enc.encode(g, Tensor::full({1, 2 * cfg.bands}, -0.1f)), ContractViolation);
}

TEST_CASE("gru: zero weights, state, and input give a zero output") {
    ParamRegistry reg;
    Rng rng(1);
    GruCell cell = GruCell::create(reg, "gru", 3, 4, rng);
    zero_all(reg);
    Graph g;
    Tensor h = cell.step(g, Tensor::zeros({1, 3}), Tensor::zeros({1, 4}));
    for (float v : h.values()) CHECK(v == 0.f);
}

TEST_CASE("gru: single-unit step matches the hand-evaluated equations") {
    ParamRegistry reg;
    Rng rng(2);
    GruCell cell = GruCell::create(reg, "gru", 1, 1, rng);
    // gate order [r | z | n]
    cell.wx.values_mut()[0] = 0.3f;   // x -> r
    cell.wx.values_mut()[1] = -0.2f;  // x -> z
    cell.wx.values_mut()[2] = 0.4f;   // x -> n
    cell.wh.values_mut()[0] = 0.1f;
    cell.wh.values_mut()[1] = 0.5f;
    cell.wh.values_mut()[2] = -0.6f;
    cell.b.values_mut()[0] = 0.05f;
    cell.b.values_mut()[1] = 0.f;
    cell.b.values_mut()[2] = 0.1f;
    const float x = 1.f, h0 = 0.5f;
    Graph g;
    Tensor h1 = cell.step(g, Tensor::from_values({1, 1}, {x}), Tensor::from_values({1, 1}, {h0}));

    auto sig = [](float v) { return 1.f / (1.f + std::exp(-v)); };
    const float r = sig(x * 0.3f + 0.05f + h0 * 0.1f);
    const float z = sig(x * -0.2f + 0.f + h0 * 0.5f);
    const float n = std::tanh(x * 0.4f + 0.1f + r * (h0 * -0.6f));
    const float expect = n + z * (h0 - n);
    CHECK(h1.value_at(0) == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("gru: gradient through a 3-step unroll matches finite differences") {
    ParamRegistry reg;
    Rng rng(6);
    GruCell cell = GruCell::create(reg, "gru", 2, 3, rng);
    Rng data(31);
    std::vector<Tensor> xs;
    for (int t = 0; t < 3; ++t) {
        std::vector<float> v = {data.uniform(-1.f, 1.f), data.uniform(-1.f, 1.f)};
        xs.push_back(Tensor::from_values({1, 2}, std::move(v)));
    }
    auto f = [&](Graph& g) {
        Tensor h = Tensor::zeros({1, 3});
        for (const auto& x : xs) h = cell.step(g, x, h);
        return sum_all(g, mul(g, h, h));
    };
    std::vector<Tensor> params = {cell.wx, cell.wh, cell.b};
    const float err = finite_difference_check(f, params);
    CHECK(err < 1e-2f);
}

TEST_CASE("lstm: zero weights and state give zero output and cell") {
    ParamRegistry reg;
    Rng rng(1);
    LstmCell cell = LstmCell::create(reg, "lstm", 3, 4, rng);
    zero_all(reg);
    Graph g;
    auto s = cell.step(g, Tensor::zeros({1, 3}), {Tensor::zeros({1, 4}), Tensor::zeros({1, 4})});
    for (float v : s.h.values()) CHECK(v == 0.f);
    for (float v : s.c.values()) CHECK(v == 0.f);
}

TEST_CASE("lstm: single-unit step matches the hand-evaluated equations") {
    ParamRegistry reg;
    Rng rng(2);
    LstmCell cell = LstmCell::create(reg, "lstm", 1, 1, rng);
    // gate order [i | f | g | o]
    const float wxi = 0.2f, wxf = -0.3f, wxg = 0.5f, wxo = 0.1f;
    const float whi = 0.4f, whf = 0.2f, whg = -0.1f, who = 0.3f;
    const float bi = 0.f, bf = 0.1f, bg = -0.05f, bo = 0.05f;
    float* wx = cell.wx.values_mut().data();
    wx[0] = wxi; wx[1] = wxf; wx[2] = wxg; wx[3] = wxo;
    float* wh = cell.wh.values_mut().data();
    wh[0] = whi; wh[1] = whf; wh[2] = whg; wh[3] = who;
    float* b = cell.b.values_mut().data();
    b[0] = bi; b[1] = bf; b[2] = bg; b[3] = bo;

    const float x = 0.8f, h0 = -0.4f, c0 = 0.6f;
    Graph g;
    auto s = cell.step(g, Tensor::from_values({1, 1}, {x}),
                       {Tensor::from_values({1, 1}, {h0}), Tensor::from_values({1, 1}, {c0})});

    auto sig = [](float v) { return 1.f / (1.f + std::exp(-v)); };
    const float i = sig(x * wxi + bi + h0 * whi);
    const float f = sig(x * wxf + bf + h0 * whf);
    const float gc = std::tanh(x * wxg + bg + h0 * whg);
    const float o = sig(x * wxo + bo + h0 * who);
    const float c1 = f * c0 + i * gc;
    const float h1 = o * std::tanh(c1);
    CHECK(s.c.value_at(0) == doctest::Approx(c1).epsilon(1e-6));
    CHECK(s.h.value_at(0) == doctest::Approx(h1).epsilon(1e-6));
}

TEST_CASE("lstm: gradient through a 3-step unroll matches finite differences") {
    ParamRegistry reg;
    Rng rng(6);
    LstmCell cell = LstmCell::create(reg, "lstm", 2, 3, rng);
    Rng data(32);
    std::vector<Tensor> xs;
    for (int t = 0; t < 3; ++t) {
        std::vector<float> v = {data.uniform(-1.f, 1.f), data.uniform(-1.f, 1.f)};
        xs.push_back(Tensor::from_values({1, 2}, std::move(v)));
    }
    auto f = [&](Graph& g) {
        LstmCell::State s{Tensor::zeros({1, 3}), Tensor::zeros({1, 3})};
        for (const auto& x : xs) s = cell.step(g, x, s);
        return sum_all(g, mul(g, s.h, s.h));
    };
    std::vector<Tensor> params = {cell.wx, cell.wh, cell.b};
    const float err = finite_difference_check(f, params);
    CHECK(err < 1e-2f);
}

TEST_CASE("count_parameters: a 3->2 linear with bias has 8 scalars") {
    ParamRegistry reg;
    Rng rng(1);
    Linear::create(reg, "lin", 3, 2, rng);
    CHECK(count_parameters(reg) == 8);
}

TEST_CASE("count_parameters matches the closed-form sums per module") {
    NetConfig cfg = testutil::tiny_net_config();
    ParamRegistry reg;
    Rng rng(5);
    VisualEncoder::create(reg, cfg, rng);
    AudioEncoder::create(reg, cfg, rng);
    GruCell::create(reg, "gru", 7, cfg.gru_hidden, rng);

    const long conv1 = static_cast<long>(cfg.vis_c1) * 1 * 1 * cfg.vis_k1 + cfg.vis_c1;
    const long conv2 =
        static_cast<long>(cfg.vis_c2) * cfg.vis_c1 * 1 * cfg.vis_k2 + cfg.vis_c2;
    CHECK(count_parameters(reg, "visual.") == conv1 + conv2);

    const long to_map = static_cast<long>(2 * cfg.bands) *
                            (cfg.audio_channels * cfg.audio_h * cfg.audio_w) +
                        cfg.audio_channels * cfg.audio_h * cfg.audio_w;
    const long pool = static_cast<long>(cfg.audio_channels) * cfg.audio_embed + cfg.audio_embed;
    CHECK(count_parameters(reg, "audio.") == to_map + pool);

    const long gru = 3L * (7L * cfg.gru_hidden + static_cast<long>(cfg.gru_hidden) * cfg.gru_hidden +
                           cfg.gru_hidden);
    CHECK(count_parameters(reg, "gru") == gru);
}

TEST_CASE("orthogonal init produces orthonormal recurrent blocks") {
    ParamRegistry reg;
    Rng rng(77);
    GruCell cell = GruCell::create(reg, "gru", 4, 8, rng);
    const int h = 8;
    auto w = cell.wh.values();
    for (int block = 0; block < 3; ++block) {
        for (int c1 = 0; c1 < h; ++c1)
            for (int c2 = 0; c2 <= c1; ++c2) {
                double dot = 0;
                for (int r = 0; r < h; ++r)
                    dot += static_cast<double>(w[static_cast<std::size_t>(r * 3 * h + block * h + c1)]) *
                           w[static_cast<std::size_t>(r * 3 * h + block * h + c2)];
                if (c1 == c2)
                    CHECK(dot == doctest::Approx(1.0).epsilon(1e-4));
                else
                    CHECK(dot == doctest::Approx(0.0).epsilon(1e-4));
            }
    }
}

TEST_CASE("encoders and cells stay finite for extreme finite inputs") {
    NetConfig cfg = testutil::tiny_net_config();
    ParamRegistry reg;
    Rng rng(10);
    VisualEncoder ve = VisualEncoder::create(reg, cfg, rng);
    AudioEncoder ae = AudioEncoder::create(reg, cfg, rng);
    Graph g;
    Tensor d = Tensor::full({1, cfg.rays}, 1.f);
    Tensor a = Tensor::full({1, 2 * cfg.bands}, 1e3f);
    for (float v : ve.encode(g, d).values()) CHECK(std::isfinite(v));
    AudioEncoder::Out out = ae.encode(g, a);
    for (float v : out.pooled.values()) CHECK(std::isfinite(v));
}
