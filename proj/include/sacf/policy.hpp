#pragma once

#include <memory>
#include <optional>

#include "sacf/acvf.hpp"
#include "sacf/nets.hpp"
#include "sacf/sdld.hpp"

namespace sacf {

// Recurrent actor-critic over the fused audio-visual representation:
// encoders -> (SDLD descriptor) -> (FiLM modulation) -> GRU -> actor/critic.
// Which stages exist depends on the fusion variant; the policy input always
// has the same width (absent slots carry zeros).
class PolicyNetwork {
public:
    struct State {
        ad::Tensor gru_h;              // [m, gru_hidden]
        LstmCell::State lstm;          // [m, lstm_hidden] each (zeros when no SDLD)
    };

    struct Forward {
        ad::Tensor action_logits;      // [m, 4]
        ad::Tensor value;              // [m, 1]
        ad::Tensor descriptor;         // [m, G] (zeros when no SDLD)
        std::optional<Sdld::BinsOut> bins;  // present when the variant has SDLD
        State state;
    };

    PolicyNetwork(const NetConfig& cfg, FusionVariant variant, std::uint64_t init_seed);

    Forward step(ad::Graph& g, const ad::Tensor& depth, const ad::Tensor& audio,
                 const State& state) const;

    State zero_state(int batch) const;
    // Zeroes state rows where mask is 1 (episode boundaries), via ops so the
    // same path serves collection and replay.
    State masked_state(ad::Graph& g, const State& s, const ad::Tensor& keep_mask) const;

    const NetConfig& config() const { return cfg_; }
    FusionVariant variant() const { return variant_; }
    ParamRegistry& registry() { return reg_; }
    const ParamRegistry& registry() const { return reg_; }
    bool has_sdld() const { return sdld_.has_value(); }
    bool has_acvf() const { return psi_.has_value(); }
    const Sdld& sdld() const;
    const PsiNetwork& psi() const;
    const VisualEncoder& visual_encoder() const { return visual_; }
    const AudioEncoder& audio_encoder() const { return audio_; }

    long parameter_count() const { return count_parameters(reg_); }

private:
    NetConfig cfg_;
    FusionVariant variant_;
    ParamRegistry reg_;
    VisualEncoder visual_;
    AudioEncoder audio_;
    std::optional<Sdld> sdld_;
    std::optional<PsiNetwork> psi_;
    PolicyFusion fusion_;
    GruCell gru_;
    Linear actor_, critic_;
};

}  // namespace sacf
