#pragma once

#include <vector>

#include "sacf/nets.hpp"

namespace sacf {

// Fixed discretization of distance [0, 30] m and bearing (-pi, +pi] into K
// bins with centered representative values.
struct BinGrid {
    int k = 20;
    float distance_max = 30.f;

    float distance_center(int i) const;  // (i + 0.5) * (30 / K)
    float angle_center(int i) const;     // -pi + (i + 0.5) * (2 pi / K)
    float distance_width() const { return distance_max / static_cast<float>(k); }

    int distance_bin(float meters) const;   // clamped to [0, K)
    int angle_bin(float radians) const;     // radians in (-pi, pi], clamped
    std::vector<float> distance_centers() const;
    std::vector<float> angle_centers() const;
};

// Expectation decode over bin centers (probability-weighted average).
// P is [m, K] and must be normalized per row within 1e-4.
ad::Tensor decode_expectation(ad::Graph& g, const ad::Tensor& probs,
                              const std::vector<float>& centers);
float decode_expectation(std::span<const float> probs, const std::vector<float>& centers);

// Unit direction vector (cos theta, sin theta).
std::pair<float, float> encode_direction(float theta);

struct GroundTruth {
    int distance_bin = 0;
    int angle_bin = 0;
    bool reached = false;
};

// Spatially discretized localization: fuses the two feature maps, predicts
// distance/angle distributions and the SED logit, decodes the expectation,
// and refines the (s, x, y) triplet through an LSTM into the descriptor g_t.
struct Sdld {
    Linear fuse;
    Linear head_dist, head_angle, head_sed;
    LstmCell lstm;
    Linear to_descriptor;
    BinGrid grid;
    NetConfig cfg;

    static Sdld create(ParamRegistry& reg, const NetConfig& cfg, Rng& rng);

    // Channel-concat + spatial mean-pool of both maps, then one linear+relu.
    ad::Tensor fuse_av(ad::Graph& g, const ad::Tensor& f_visual, const ad::Tensor& f_audio) const;

    struct BinsOut {
        ad::Tensor p_dist;     // [m, K] softmax
        ad::Tensor p_angle;    // [m, K] softmax
        ad::Tensor logits_dist, logits_angle;
        ad::Tensor sed_logit;  // [m, 1]
    };
    BinsOut predict_bins(ad::Graph& g, const ad::Tensor& f_av) const;

    struct StepOut {
        ad::Tensor descriptor;  // g_t [m, G]
        LstmCell::State state;
        ad::Tensor d_hat;       // [m, 1] meters
        ad::Tensor theta_hat;   // [m, 1] radians
        ad::Tensor x, y;        // [m, 1] unit direction
        ad::Tensor sed;         // [m, 1] sigmoid score
        BinsOut bins;
    };
    StepOut step(ad::Graph& g, const ad::Tensor& f_visual, const ad::Tensor& f_audio,
                 const LstmCell::State& state) const;

    LstmCell::State zero_state(int batch) const;
};

// CE(P_d, bin_d*) + CE(P_theta, bin_theta*) + BCE(sed, reached*), averaged
// over the batch. Operates on logits for numerical stability.
ad::Tensor sdld_aux_loss(ad::Graph& g, const Sdld::BinsOut& bins,
                         const std::vector<GroundTruth>& truth);

}  // namespace sacf
