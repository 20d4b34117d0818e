#pragma once

#include <string>
#include <vector>

#include "sacf/autodiff.hpp"

namespace sacf {

struct NamedParam {
    std::string name;
    ad::Tensor tensor;
};

// Adam with per-parameter moment accumulators and a linear-to-zero learning
// rate schedule over the planned update count.
class OptimizerState {
public:
    OptimizerState(std::vector<NamedParam> params, float base_lr, float epsilon,
                   int total_updates, float beta1 = 0.9f, float beta2 = 0.999f);

    // lr(u) = base_lr * (1 - u / total_updates), clamped at >= 0
    float lr_at_update(int update) const;

    // One Adam step at the given learning rate. Every registered parameter
    // must have a populated gradient.
    void adam_step(float lr);

    void zero_grad();

    // Global L2 norm across all parameter gradients; if it exceeds max_norm
    // the gradients are rescaled. Returns the pre-clip norm.
    float clip_global_grad_norm(float max_norm);

    int step_count() const { return step_; }
    void set_step_count(int s) { step_ = s; }
    float base_lr() const { return base_lr_; }
    float epsilon() const { return epsilon_; }
    int total_updates() const { return total_updates_; }

    const std::vector<NamedParam>& params() const { return params_; }
    std::vector<NamedParam>& params() { return params_; }
    std::vector<std::vector<float>>& moments_m() { return m_; }
    std::vector<std::vector<float>>& moments_v() { return v_; }
    const std::vector<std::vector<float>>& moments_m() const { return m_; }
    const std::vector<std::vector<float>>& moments_v() const { return v_; }

private:
    std::vector<NamedParam> params_;
    std::vector<std::vector<float>> m_;
    std::vector<std::vector<float>> v_;
    int step_ = 0;
    float base_lr_;
    float epsilon_;
    int total_updates_;
    float beta1_, beta2_;
};

}  // namespace sacf
