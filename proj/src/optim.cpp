#include "sacf/optim.hpp"

#include <cmath>

namespace sacf {

OptimizerState::OptimizerState(std::vector<NamedParam> params, float base_lr, float epsilon,
                               int total_updates, float beta1, float beta2)
    : params_(std::move(params)),
      base_lr_(base_lr),
      epsilon_(epsilon),
      total_updates_(total_updates),
      beta1_(beta1),
      beta2_(beta2) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(static_cast<std::size_t>(p.tensor.size()), 0.f);
        v_.emplace_back(static_cast<std::size_t>(p.tensor.size()), 0.f);
    }
}

float OptimizerState::lr_at_update(int update) const {
    float frac = 1.f - static_cast<float>(update) / static_cast<float>(total_updates_);
    return base_lr_ * std::max(0.f, frac);
}

void OptimizerState::adam_step(float lr) {
    ++step_;
    const float bc1 = 1.f - std::pow(beta1_, static_cast<float>(step_));
    const float bc2 = 1.f - std::pow(beta2_, static_cast<float>(step_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
        auto& p = params_[pi];
        SACF_REQUIRE(p.tensor.has_grad(), "adam_step: missing grad on parameter " + p.name);
        auto g = p.tensor.grad();
        auto vvals = p.tensor.values_mut();
        auto& m = m_[pi];
        auto& v = v_[pi];
        for (std::size_t i = 0; i < g.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.f - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.f - beta2_) * g[i] * g[i];
            const float mhat = m[i] / bc1;
            const float vhat = v[i] / bc2;
            vvals[i] -= lr * mhat / (std::sqrt(vhat) + epsilon_);
        }
    }
}

void OptimizerState::zero_grad() {
    for (auto& p : params_) {
        p.tensor.grad_mut();  // ensure allocation so adam_step's contract holds
        p.tensor.zero_grad();
    }
}

float OptimizerState::clip_global_grad_norm(float max_norm) {
    double acc = 0.0;
    for (auto& p : params_) {
        SACF_REQUIRE(p.tensor.has_grad(), "clip_global_grad_norm: missing grad on " + p.name);
        for (float g : p.tensor.grad()) acc += static_cast<double>(g) * g;
    }
    const float norm = static_cast<float>(std::sqrt(acc));
    if (norm > max_norm && norm > 0.f) {
        const float s = max_norm / norm;
        for (auto& p : params_)
            for (float& g : p.tensor.grad_mut()) g *= s;
    }
    return norm;
}

}  // namespace sacf
