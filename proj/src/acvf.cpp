#include "sacf/acvf.hpp"

namespace sacf {

const char* variant_name(FusionVariant v) {
    switch (v) {
        case FusionVariant::kSacfFull: return "sacf-full";
        case FusionVariant::kNoSdld: return "no-sdld";
        case FusionVariant::kNoAcvf: return "no-acvf";
        case FusionVariant::kConcatBaseline: return "concat-baseline";
    }
    return "?";
}

FusionVariant variant_from_name(const std::string& name) {
    if (name == "sacf-full") return FusionVariant::kSacfFull;
    if (name == "no-sdld") return FusionVariant::kNoSdld;
    if (name == "no-acvf") return FusionVariant::kNoAcvf;
    if (name == "concat-baseline") return FusionVariant::kConcatBaseline;
    throw ContractViolation("unknown fusion variant: " + name);
}

bool variant_has_sdld(FusionVariant v) {
    return v == FusionVariant::kSacfFull || v == FusionVariant::kNoAcvf;
}

bool variant_has_acvf(FusionVariant v) {
    return v == FusionVariant::kSacfFull || v == FusionVariant::kNoSdld;
}

ad::Tensor build_condition(ad::Graph& g, const ad::Tensor& audio_embed,
                           const ad::Tensor& descriptor) {
    SACF_REQUIRE(audio_embed.shape().size() == 2 && descriptor.shape().size() == 2 &&
                     audio_embed.shape()[0] == descriptor.shape()[0],
                 "build_condition: batch mismatch");
    return ad::concat_lastdim(g, {audio_embed, descriptor});
}

PsiNetwork PsiNetwork::create(ParamRegistry& reg, const NetConfig& cfg, int condition_dim, Rng& rng) {
    PsiNetwork p;
    p.channels = cfg.channels;
    p.l1 = Linear::create(reg, "acvf.psi1", condition_dim, cfg.psi_hidden, rng);
    // zero-initialized output layer: training starts at the identity modulation
    p.l2 = Linear::create(reg, "acvf.psi2", cfg.psi_hidden, 2 * cfg.channels, rng,
                          /*zero_init=*/true);
    return p;
}

FilmParams PsiNetwork::generate_film(ad::Graph& g, const ad::Tensor& condition) const {
    SACF_REQUIRE(condition.shape().size() == 2 && condition.shape()[1] == l1.in,
                 "generate_film: condition dim mismatch");
    SACF_REQUIRE(l2.out == 2 * channels, "generate_film: Psi output dim must be 2C");
    ad::Tensor h = ad::relu(g, l1.forward(g, condition));
    ad::Tensor gb = l2.forward(g, h);
    FilmParams out;
    out.gamma = ad::slice_cols(g, gb, 0, channels);
    out.beta = ad::slice_cols(g, gb, channels, 2 * channels);
    return out;
}

ad::Tensor film_modulate(ad::Graph& g, const ad::Tensor& f_visual, const FilmParams& p) {
    SACF_REQUIRE(f_visual.shape().size() == 4, "film_modulate: expected [m, C, H, W]");
    SACF_REQUIRE(p.gamma.shape().size() == 2 && p.gamma.shape()[1] == f_visual.shape()[1] &&
                     p.beta.shape() == p.gamma.shape(),
                 "film_modulate: channel count mismatch");
    return ad::affine_channel_broadcast(g, f_visual, p.gamma, p.beta);
}

ad::Tensor PolicyFusion::fuse_for_policy(ad::Graph& g, const PsiNetwork* psi,
                                         const ad::Tensor& f_visual, const ad::Tensor& audio_embed,
                                         const ad::Tensor& descriptor) const {
    const int m = f_visual.shape()[0];
    const int flat = cfg.channels * cfg.map_h * cfg.map_w;

    ad::Tensor vis = f_visual;
    if (variant_has_acvf(variant)) {
        SACF_REQUIRE(psi != nullptr, "fuse_for_policy: variant requires a Psi network");
        ad::Tensor cond = variant_has_sdld(variant)
                              ? build_condition(g, audio_embed, descriptor)
                              : audio_embed;
        vis = film_modulate(g, vis, psi->generate_film(g, cond));
    }
    ad::Tensor vis_flat = ad::reshape(g, vis, {m, flat});

    ad::Tensor g_slot = variant_has_sdld(variant)
                            ? descriptor
                            : ad::Tensor::zeros({m, cfg.descriptor_dim});
    return ad::concat_lastdim(g, {vis_flat, audio_embed, g_slot});
}

long spatial_attention_param_count(const NetConfig& cfg) {
    const long c = cfg.channels;
    const long d = cfg.attention_dim;
    const long cond = cfg.audio_embed + cfg.descriptor_dim;
    long total = 0;
    total += 3L * (c * d + d);  // per-position query/key/value projections
    total += d * c + c;         // output projection back to C
    total += cond * d + d;      // condition injection into the queries
    return total;
}

long film_modulate_flops(int channels, int h, int w) {
    // one multiply + one add per element
    return 2L * channels * h * w;
}

long spatial_attention_flops(const NetConfig& cfg, int h, int w) {
    const long p = static_cast<long>(h) * w;
    const long c = cfg.channels;
    const long d = cfg.attention_dim;
    const long cond = cfg.audio_embed + cfg.descriptor_dim;
    long flops = 0;
    flops += 3L * 2L * p * c * d;  // per-position query/key/value projections
    flops += 2L * cond * d;        // condition injection
    flops += 2L * p * p * d;       // attention scores over position pairs
    flops += 2L * p * p * d;       // attention-weighted value mix
    flops += 2L * p * d * c;       // output projection
    return flops;
}

}  // namespace sacf
