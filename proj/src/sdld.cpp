#include "sacf/sdld.hpp"

#include <cmath>

namespace sacf {

namespace {
constexpr float kPi = 3.14159265358979323846f;
}

float BinGrid::distance_center(int i) const {
    SACF_REQUIRE(0 <= i && i < k, "BinGrid: bin index out of range");
    return (static_cast<float>(i) + 0.5f) * (distance_max / static_cast<float>(k));
}

float BinGrid::angle_center(int i) const {
    SACF_REQUIRE(0 <= i && i < k, "BinGrid: bin index out of range");
    return -kPi + (static_cast<float>(i) + 0.5f) * (2.f * kPi / static_cast<float>(k));
}

int BinGrid::distance_bin(float meters) const {
    SACF_REQUIRE(std::isfinite(meters) && meters >= 0.f, "BinGrid: bad distance");
    int i = static_cast<int>(meters / distance_width());
    return std::min(std::max(i, 0), k - 1);
}

int BinGrid::angle_bin(float radians) const {
    SACF_REQUIRE(std::isfinite(radians), "BinGrid: bad angle");
    const float w = 2.f * kPi / static_cast<float>(k);
    int i = static_cast<int>((radians + kPi) / w);
    return std::min(std::max(i, 0), k - 1);
}

std::vector<float> BinGrid::distance_centers() const {
    std::vector<float> c(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) c[static_cast<std::size_t>(i)] = distance_center(i);
    return c;
}

std::vector<float> BinGrid::angle_centers() const {
    std::vector<float> c(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) c[static_cast<std::size_t>(i)] = angle_center(i);
    return c;
}

namespace {

void require_normalized(std::span<const float> row) {
    float sum = 0.f;
    for (float p : row) {
        SACF_REQUIRE(p >= -1e-6f && p <= 1.f + 1e-6f, "decode_expectation: probability out of [0,1]");
        sum += p;
    }
    SACF_REQUIRE(std::abs(sum - 1.f) <= 1e-4f, "decode_expectation: distribution not normalized");
}

}  // namespace

ad::Tensor decode_expectation(ad::Graph& g, const ad::Tensor& probs,
                              const std::vector<float>& centers) {
    SACF_REQUIRE(probs.shape().size() == 2 &&
                     probs.shape()[1] == static_cast<int>(centers.size()),
                 "decode_expectation: shape mismatch");
    const int m = probs.shape()[0];
    const int k = probs.shape()[1];
    for (int i = 0; i < m; ++i)
        require_normalized(probs.values().subspan(static_cast<std::size_t>(i) * k, k));
    ad::Tensor col = ad::Tensor::from_values({k, 1}, centers);
    return ad::matmul(g, probs, col);
}

float decode_expectation(std::span<const float> probs, const std::vector<float>& centers) {
    SACF_REQUIRE(probs.size() == centers.size(), "decode_expectation: shape mismatch");
    require_normalized(probs);
    float acc = 0.f;
    for (std::size_t i = 0; i < probs.size(); ++i) acc += probs[i] * centers[i];
    return acc;
}

std::pair<float, float> encode_direction(float theta) {
    SACF_REQUIRE(std::isfinite(theta), "encode_direction: non-finite angle");
    return {std::cos(theta), std::sin(theta)};
}

Sdld Sdld::create(ParamRegistry& reg, const NetConfig& cfg, Rng& rng) {
    Sdld s;
    s.cfg = cfg;
    s.grid.k = cfg.bins;
    const int fuse_in = cfg.channels + cfg.audio_channels;
    s.fuse = Linear::create(reg, "sdld.fuse", fuse_in, cfg.fused_dim, rng);
    s.head_dist = Linear::create(reg, "sdld.head_dist", cfg.fused_dim, cfg.bins, rng);
    s.head_angle = Linear::create(reg, "sdld.head_angle", cfg.fused_dim, cfg.bins, rng);
    s.head_sed = Linear::create(reg, "sdld.head_sed", cfg.fused_dim, 1, rng);
    s.lstm = LstmCell::create(reg, "sdld.lstm", 3, cfg.lstm_hidden, rng);
    // zero-initialized descriptor head: the policy input starts at the
    // concat-equivalent identity and the descriptor phases in as it trains
    s.to_descriptor = Linear::create(reg, "sdld.to_descriptor", cfg.lstm_hidden,
                                     cfg.descriptor_dim, rng, /*zero_init=*/true);
    return s;
}

ad::Tensor Sdld::fuse_av(ad::Graph& g, const ad::Tensor& f_visual, const ad::Tensor& f_audio) const {
    SACF_REQUIRE(f_visual.shape().size() == 4 && f_visual.shape()[1] == cfg.channels,
                 "fuse_av: bad visual map");
    SACF_REQUIRE(f_audio.shape().size() == 4 && f_audio.shape()[1] == cfg.audio_channels,
                 "fuse_av: bad audio map");
    SACF_REQUIRE(f_visual.shape()[0] == f_audio.shape()[0], "fuse_av: batch mismatch");
    SACF_REQUIRE(f_visual.shape()[2] % f_audio.shape()[2] == 0 &&
                     f_visual.shape()[3] % f_audio.shape()[3] == 0,
                 "fuse_av: audio map does not tile the visual map");
    // Channel-concat after nearest-neighbor alignment, then spatial mean-pool.
    // Pooling commutes with the nearest-neighbor upsample (H, W are exact
    // multiples), so the pooled fusion is computed directly per map.
    ad::Tensor pv = ad::mean_pool_spatial(g, f_visual);
    ad::Tensor pa = ad::mean_pool_spatial(g, f_audio);
    ad::Tensor cat = ad::concat_lastdim(g, {pv, pa});
    return ad::relu(g, fuse.forward(g, cat));
}

Sdld::BinsOut Sdld::predict_bins(ad::Graph& g, const ad::Tensor& f_av) const {
    BinsOut out;
    out.logits_dist = head_dist.forward(g, f_av);
    out.logits_angle = head_angle.forward(g, f_av);
    out.sed_logit = head_sed.forward(g, f_av);
    out.p_dist = ad::softmax_lastdim(g, out.logits_dist);
    out.p_angle = ad::softmax_lastdim(g, out.logits_angle);
    return out;
}

Sdld::StepOut Sdld::step(ad::Graph& g, const ad::Tensor& f_visual, const ad::Tensor& f_audio,
                         const LstmCell::State& state) const {
    StepOut out;
    ad::Tensor f_av = fuse_av(g, f_visual, f_audio);
    out.bins = predict_bins(g, f_av);
    out.d_hat = decode_expectation(g, out.bins.p_dist, grid.distance_centers());
    out.theta_hat = decode_expectation(g, out.bins.p_angle, grid.angle_centers());
    out.x = ad::cos_op(g, out.theta_hat);
    out.y = ad::sin_op(g, out.theta_hat);
    out.sed = ad::sigmoid(g, out.bins.sed_logit);
    ad::Tensor triplet = ad::concat_lastdim(g, {out.sed, out.x, out.y});
    out.state = lstm.step(g, triplet, state);
    out.descriptor = to_descriptor.forward(g, out.state.h);
    return out;
}

LstmCell::State Sdld::zero_state(int batch) const {
    return {ad::Tensor::zeros({batch, cfg.lstm_hidden}), ad::Tensor::zeros({batch, cfg.lstm_hidden})};
}

ad::Tensor sdld_aux_loss(ad::Graph& g, const Sdld::BinsOut& bins,
                         const std::vector<GroundTruth>& truth) {
    const int m = bins.logits_dist.shape()[0];
    const int k = bins.logits_dist.shape()[1];
    SACF_REQUIRE(static_cast<int>(truth.size()) == m, "sdld_aux_loss: one label per row required");
    std::vector<int> td(truth.size()), ta(truth.size());
    std::vector<float> tr(truth.size());
    for (std::size_t i = 0; i < truth.size(); ++i) {
        SACF_REQUIRE(0 <= truth[i].distance_bin && truth[i].distance_bin < k,
                     "sdld_aux_loss: distance bin out of range");
        SACF_REQUIRE(0 <= truth[i].angle_bin && truth[i].angle_bin < k,
                     "sdld_aux_loss: angle bin out of range");
        td[i] = truth[i].distance_bin;
        ta[i] = truth[i].angle_bin;
        tr[i] = truth[i].reached ? 1.f : 0.f;
    }
    ad::Tensor ce_d = ad::categorical_nll(g, bins.logits_dist, std::move(td));
    ad::Tensor ce_a = ad::categorical_nll(g, bins.logits_angle, std::move(ta));
    ad::Tensor bce = ad::bce_with_logits(g, bins.sed_logit, std::move(tr));
    ad::Tensor total = ad::add(g, ad::add(g, ce_d, ce_a), bce);
    return ad::mean_all(g, total);
}

}  // namespace sacf
