#pragma once

#include <string>

#include "sacf/nets.hpp"

namespace sacf {

enum class FusionVariant {
    kSacfFull,        // FiLM conditioned on [audio; g]
    kNoSdld,          // FiLM conditioned on audio embedding only
    kNoAcvf,          // g concatenated with unmodulated visual features
    kConcatBaseline,  // audio embedding concatenated with visual features
};

const char* variant_name(FusionVariant v);
FusionVariant variant_from_name(const std::string& name);
bool variant_has_sdld(FusionVariant v);
bool variant_has_acvf(FusionVariant v);

struct FilmParams {
    ad::Tensor gamma;  // [m, C]
    ad::Tensor beta;   // [m, C]
};

// Condition vector c_t = [audio; descriptor], audio first.
ad::Tensor build_condition(ad::Graph& g, const ad::Tensor& audio_embed, const ad::Tensor& descriptor);

// Psi: 2-layer MLP (hidden relu, zero-initialized output layer) emitting the
// per-channel scaling and bias, split [gamma | beta].
struct PsiNetwork {
    Linear l1, l2;
    int channels = 0;

    static PsiNetwork create(ParamRegistry& reg, const NetConfig& cfg, int condition_dim, Rng& rng);
    FilmParams generate_film(ad::Graph& g, const ad::Tensor& condition) const;
};

// F~[c,h,w] = (1 + gamma[c]) * F[c,h,w] + beta[c]
ad::Tensor film_modulate(ad::Graph& g, const ad::Tensor& f_visual, const FilmParams& p);

// Assembles the policy input under the shared three-slot layout
// [visual | audio | g]; a variant without SDLD carries zeros in the g slot, so
// every variant produces the same width and differs only in the fusion under
// test.
struct PolicyFusion {
    FusionVariant variant = FusionVariant::kSacfFull;
    NetConfig cfg;

    ad::Tensor fuse_for_policy(ad::Graph& g, const PsiNetwork* psi, const ad::Tensor& f_visual,
                               const ad::Tensor& audio_embed, const ad::Tensor& descriptor) const;
};

// Closed-form parameter count of the count-only cross-modal spatial-attention
// variant (query from the condition, key/value per spatial position, output
// projection back to C). Never trained.
long spatial_attention_param_count(const NetConfig& cfg);

// Closed-form flop counts for the fusion mechanisms (multiply-adds counted
// as 2 flops). FiLM is linear in H*W; attention carries an (H*W)^2 term.
long film_modulate_flops(int channels, int h, int w);
long spatial_attention_flops(const NetConfig& cfg, int h, int w);

}  // namespace sacf
