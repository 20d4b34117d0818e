#include "sacf/nets.hpp"

#include <cmath>

namespace sacf {

void NetConfig::validate() const {
    SACF_REQUIRE(rays > 0 && bands > 0, "NetConfig: rays/bands must be positive");
    SACF_REQUIRE(channels > 0 && map_h > 0 && map_w > 0, "NetConfig: visual map dims must be positive");
    SACF_REQUIRE(audio_channels > 0 && audio_embed > 0, "NetConfig: audio dims must be positive");
    SACF_REQUIRE(bins > 0, "NetConfig: bins must be positive");
    SACF_REQUIRE(rays >= vis_k1, "NetConfig: conv1 kernel exceeds the ray count");
    const int w1 = (rays - vis_k1) / vis_s1 + 1;
    SACF_REQUIRE(w1 >= vis_k2, "NetConfig: conv2 kernel exceeds conv1 output");
    const int w2 = (w1 - vis_k2) / vis_s2 + 1;
    SACF_REQUIRE(vis_c2 * w2 == channels * map_h * map_w,
                 "NetConfig: conv output (" + std::to_string(vis_c2 * w2) +
                     ") cannot be reshaped to C*H*W (" +
                     std::to_string(channels * map_h * map_w) + ")");
}

ad::Tensor ParamRegistry::add(const std::string& name, ad::Shape shape) {
    for (const auto& p : params_)
        SACF_REQUIRE(p.name != name, "ParamRegistry: duplicate parameter name " + name);
    ad::Tensor t = ad::Tensor::zeros(std::move(shape), /*requires_grad=*/true);
    params_.push_back({name, t});
    return t;
}

long count_parameters(const ParamRegistry& reg, const std::string& prefix) {
    long total = 0;
    for (const auto& p : reg.params())
        if (p.name.rfind(prefix, 0) == 0) total += p.tensor.size();
    return total;
}

void init_fanin_uniform(ad::Tensor& t, int fan_in, Rng& rng) {
    const float a = std::sqrt(3.f / static_cast<float>(fan_in));
    for (float& v : t.values_mut()) v = rng.uniform(-a, a);
}

void init_orthogonal_blocks(ad::Tensor& t, int rows, int block_cols, Rng& rng) {
    SACF_REQUIRE(t.size() % (rows * block_cols) == 0, "init_orthogonal_blocks: bad block layout");
    const int blocks = t.size() / (rows * block_cols);
    const int total_cols = blocks * block_cols;
    auto vals = t.values_mut();
    // draw a full Gaussian matrix, then orthonormalize the columns of each block
    std::vector<double> m(static_cast<std::size_t>(rows) * total_cols);
    for (auto& v : m) v = rng.normal(0.f, 1.f);
    for (int b = 0; b < blocks; ++b) {
        const int c0 = b * block_cols;
        for (int c = 0; c < block_cols; ++c) {
            for (int prev = 0; prev < c; ++prev) {
                double dot = 0.0;
                for (int r = 0; r < rows; ++r)
                    dot += m[static_cast<std::size_t>(r) * total_cols + c0 + c] *
                           m[static_cast<std::size_t>(r) * total_cols + c0 + prev];
                for (int r = 0; r < rows; ++r)
                    m[static_cast<std::size_t>(r) * total_cols + c0 + c] -=
                        dot * m[static_cast<std::size_t>(r) * total_cols + c0 + prev];
            }
            double norm = 0.0;
            for (int r = 0; r < rows; ++r) {
                const double v = m[static_cast<std::size_t>(r) * total_cols + c0 + c];
                norm += v * v;
            }
            norm = std::sqrt(std::max(norm, 1e-12));
            for (int r = 0; r < rows; ++r)
                m[static_cast<std::size_t>(r) * total_cols + c0 + c] /= norm;
        }
    }
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < total_cols; ++c)
            vals[static_cast<std::size_t>(r) * total_cols + c] =
                static_cast<float>(m[static_cast<std::size_t>(r) * total_cols + c]);
}

Linear Linear::create(ParamRegistry& reg, const std::string& name, int in, int out, Rng& rng,
                      bool zero_init) {
    Linear l;
    l.in = in;
    l.out = out;
    l.w = reg.add(name + ".w", {in, out});
    l.b = reg.add(name + ".b", {1, out});
    if (!zero_init) init_fanin_uniform(l.w, in, rng);
    return l;
}

ad::Tensor Linear::forward(ad::Graph& g, const ad::Tensor& x) const {
    return ad::linear(g, x, w, b);
}

Conv2d Conv2d::create(ParamRegistry& reg, const std::string& name, int in_ch, int out_ch, int kh,
                      int kw, int stride, Rng& rng) {
    Conv2d c;
    c.in_ch = in_ch;
    c.out_ch = out_ch;
    c.kh = kh;
    c.kw = kw;
    c.stride = stride;
    c.w = reg.add(name + ".w", {out_ch, in_ch, kh, kw});
    c.b = reg.add(name + ".b", {1, out_ch});
    init_fanin_uniform(c.w, in_ch * kh * kw, rng);
    return c;
}

ad::Tensor Conv2d::forward(ad::Graph& g, const ad::Tensor& x) const {
    return ad::conv2d_valid(g, x, w, b, stride);
}

GruCell GruCell::create(ParamRegistry& reg, const std::string& name, int in, int hidden, Rng& rng) {
    GruCell c;
    c.in = in;
    c.hidden = hidden;
    c.wx = reg.add(name + ".wx", {in, 3 * hidden});
    c.wh = reg.add(name + ".wh", {hidden, 3 * hidden});
    c.b = reg.add(name + ".b", {1, 3 * hidden});
    init_fanin_uniform(c.wx, in, rng);
    init_orthogonal_blocks(c.wh, hidden, hidden, rng);
    return c;
}

ad::Tensor GruCell::step(ad::Graph& g, const ad::Tensor& x, const ad::Tensor& h) const {
    SACF_REQUIRE(x.shape()[1] == in && h.shape()[1] == hidden, "GruCell: dim mismatch");
    const int H = hidden;
    ad::Tensor gx = ad::linear(g, x, wx, b);
    ad::Tensor gh = ad::matmul(g, h, wh);
    ad::Tensor r = ad::sigmoid(g, ad::add(g, ad::slice_cols(g, gx, 0, H), ad::slice_cols(g, gh, 0, H)));
    ad::Tensor z =
        ad::sigmoid(g, ad::add(g, ad::slice_cols(g, gx, H, 2 * H), ad::slice_cols(g, gh, H, 2 * H)));
    ad::Tensor n = ad::tanh_op(
        g, ad::add(g, ad::slice_cols(g, gx, 2 * H, 3 * H),
                   ad::mul(g, r, ad::slice_cols(g, gh, 2 * H, 3 * H))));
    return ad::add(g, n, ad::mul(g, z, ad::sub(g, h, n)));
}

LstmCell LstmCell::create(ParamRegistry& reg, const std::string& name, int in, int hidden, Rng& rng) {
    LstmCell c;
    c.in = in;
    c.hidden = hidden;
    c.wx = reg.add(name + ".wx", {in, 4 * hidden});
    c.wh = reg.add(name + ".wh", {hidden, 4 * hidden});
    c.b = reg.add(name + ".b", {1, 4 * hidden});
    init_fanin_uniform(c.wx, in, rng);
    init_orthogonal_blocks(c.wh, hidden, hidden, rng);
    return c;
}

LstmCell::State LstmCell::step(ad::Graph& g, const ad::Tensor& x, const State& s) const {
    SACF_REQUIRE(x.shape()[1] == in && s.h.shape()[1] == hidden && s.c.shape()[1] == hidden,
                 "LstmCell: dim mismatch");
    const int H = hidden;
    ad::Tensor s4 = ad::add(g, ad::linear(g, x, wx, b), ad::matmul(g, s.h, wh));
    ad::Tensor i = ad::sigmoid(g, ad::slice_cols(g, s4, 0, H));
    ad::Tensor f = ad::sigmoid(g, ad::slice_cols(g, s4, H, 2 * H));
    ad::Tensor gc = ad::tanh_op(g, ad::slice_cols(g, s4, 2 * H, 3 * H));
    ad::Tensor o = ad::sigmoid(g, ad::slice_cols(g, s4, 3 * H, 4 * H));
    ad::Tensor c = ad::add(g, ad::mul(g, f, s.c), ad::mul(g, i, gc));
    ad::Tensor h = ad::mul(g, o, ad::tanh_op(g, c));
    return {h, c};
}

VisualEncoder VisualEncoder::create(ParamRegistry& reg, const NetConfig& cfg, Rng& rng) {
    cfg.validate();
    VisualEncoder e;
    e.cfg = cfg;
    e.conv1 = Conv2d::create(reg, "visual.conv1", 1, cfg.vis_c1, 1, cfg.vis_k1, cfg.vis_s1, rng);
    e.conv2 =
        Conv2d::create(reg, "visual.conv2", cfg.vis_c1, cfg.vis_c2, 1, cfg.vis_k2, cfg.vis_s2, rng);
    return e;
}

ad::Tensor VisualEncoder::encode(ad::Graph& g, const ad::Tensor& depth) const {
    SACF_REQUIRE(depth.shape().size() == 2 && depth.shape()[1] == cfg.rays,
                 "visual_encode: expected [m, R] depth input");
    for (float v : depth.values())
        SACF_REQUIRE(v >= 0.f && v <= 1.f, "visual_encode: depth values must lie in [0, 1]");
    const int m = depth.shape()[0];
    ad::Tensor x = ad::reshape(g, depth, {m, 1, 1, cfg.rays});
    x = ad::relu(g, conv1.forward(g, x));
    x = ad::relu(g, conv2.forward(g, x));
    return ad::reshape(g, x, {m, cfg.channels, cfg.map_h, cfg.map_w});
}

AudioEncoder AudioEncoder::create(ParamRegistry& reg, const NetConfig& cfg, Rng& rng) {
    AudioEncoder e;
    e.cfg = cfg;
    const int map_elems = cfg.audio_channels * cfg.audio_h * cfg.audio_w;
    e.to_map = Linear::create(reg, "audio.to_map", 2 * cfg.bands, map_elems, rng);
    e.pool_head = Linear::create(reg, "audio.pool_head", cfg.audio_channels, cfg.audio_embed, rng);
    return e;
}

AudioEncoder::Out AudioEncoder::encode(ad::Graph& g, const ad::Tensor& audio) const {
    SACF_REQUIRE(audio.shape().size() == 2 && audio.shape()[1] == 2 * cfg.bands,
                 "audio_encode: expected [m, 2B] band intensities");
    for (float v : audio.values())
        SACF_REQUIRE(v >= 0.f, "audio_encode: band intensities must be >= 0");
    const int m = audio.shape()[0];
    ad::Tensor x = ad::relu(g, to_map.forward(g, audio));
    ad::Tensor map = ad::reshape(g, x, {m, cfg.audio_channels, cfg.audio_h, cfg.audio_w});
    ad::Tensor pooled = pool_head.forward(g, ad::mean_pool_spatial(g, map));
    return {map, pooled};
}

}  // namespace sacf
