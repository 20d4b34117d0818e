#include "sacf/policy.hpp"

namespace sacf {

PolicyNetwork::PolicyNetwork(const NetConfig& cfg, FusionVariant variant, std::uint64_t init_seed)
    : cfg_(cfg), variant_(variant) {
    cfg_.validate();
    Rng rng = derive_stream(init_seed, "init");
    visual_ = VisualEncoder::create(reg_, cfg_, rng);
    audio_ = AudioEncoder::create(reg_, cfg_, rng);
    if (variant_has_sdld(variant)) sdld_ = Sdld::create(reg_, cfg_, rng);
    if (variant_has_acvf(variant)) {
        const int cond_dim = variant_has_sdld(variant)
                                 ? cfg_.audio_embed + cfg_.descriptor_dim
                                 : cfg_.audio_embed;
        psi_ = PsiNetwork::create(reg_, cfg_, cond_dim, rng);
    }
    fusion_.variant = variant;
    fusion_.cfg = cfg_;
    gru_ = GruCell::create(reg_, "policy.gru", cfg_.policy_input_dim(), cfg_.gru_hidden, rng);
    actor_ = Linear::create(reg_, "policy.actor", cfg_.gru_hidden, cfg_.actions, rng);
    critic_ = Linear::create(reg_, "policy.critic", cfg_.gru_hidden, 1, rng);
}

const Sdld& PolicyNetwork::sdld() const {
    SACF_REQUIRE(sdld_.has_value(), "PolicyNetwork: variant has no SDLD module");
    return *sdld_;
}

const PsiNetwork& PolicyNetwork::psi() const {
    SACF_REQUIRE(psi_.has_value(), "PolicyNetwork: variant has no Psi network");
    return *psi_;
}

PolicyNetwork::State PolicyNetwork::zero_state(int batch) const {
    State s;
    s.gru_h = ad::Tensor::zeros({batch, cfg_.gru_hidden});
    s.lstm.h = ad::Tensor::zeros({batch, cfg_.lstm_hidden});
    s.lstm.c = ad::Tensor::zeros({batch, cfg_.lstm_hidden});
    return s;
}

PolicyNetwork::State PolicyNetwork::masked_state(ad::Graph& g, const State& s,
                                                 const ad::Tensor& keep_mask) const {
    State out;
    out.gru_h = ad::mul(g, s.gru_h, keep_mask);
    out.lstm.h = ad::mul(g, s.lstm.h, keep_mask);
    out.lstm.c = ad::mul(g, s.lstm.c, keep_mask);
    return out;
}

PolicyNetwork::Forward PolicyNetwork::step(ad::Graph& g, const ad::Tensor& depth,
                                           const ad::Tensor& audio, const State& state) const {
    Forward out;
    const int m = depth.shape()[0];

    ad::Tensor f_v = visual_.encode(g, depth);
    AudioEncoder::Out a = audio_.encode(g, audio);

    if (sdld_) {
        Sdld::StepOut s = sdld_->step(g, f_v, a.map, state.lstm);
        out.descriptor = s.descriptor;
        out.bins = s.bins;
        out.state.lstm = s.state;
    } else {
        out.descriptor = ad::Tensor::zeros({m, cfg_.descriptor_dim});
        out.state.lstm = state.lstm;
    }

    ad::Tensor policy_in =
        fusion_.fuse_for_policy(g, psi_ ? &*psi_ : nullptr, f_v, a.pooled, out.descriptor);
    out.state.gru_h = gru_.step(g, policy_in, state.gru_h);
    out.action_logits = actor_.forward(g, out.state.gru_h);
    out.value = critic_.forward(g, out.state.gru_h);
    return out;
}

}  // namespace sacf
