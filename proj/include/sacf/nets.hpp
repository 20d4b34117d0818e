#pragma once

#include <string>
#include <vector>

#include "sacf/autodiff.hpp"
#include "sacf/common.hpp"
#include "sacf/optim.hpp"

namespace sacf {

// Network dimensions. Defaults produce the C x H x W = 16x4x4 visual map and
// the 32-dim audio embedding / descriptor the fusion stack expects.
struct NetConfig {
    int rays = 32;            // depth rays R
    int vis_c1 = 48;          // first conv width
    int vis_k1 = 5;
    int vis_s1 = 2;
    int vis_c2 = 128;         // second conv width
    int vis_k2 = 11;
    int vis_s2 = 3;
    int channels = 16;        // C of the visual feature map
    int map_h = 4;            // H
    int map_w = 4;            // W
    int bands = 8;            // audio bands B (input is 2 x B)
    int audio_channels = 64;  // channels of the audio feature map
    int audio_h = 2;
    int audio_w = 2;
    int audio_embed = 32;     // pooled audio embedding dim d_a
    int fused_dim = 32;       // F_av dim
    int bins = 20;            // K
    int lstm_hidden = 16;
    int descriptor_dim = 32;  // g_t dim G
    int psi_hidden = 64;
    int gru_hidden = 128;
    int actions = 4;
    int attention_dim = 128;  // count-only spatial-attention variant

    void validate() const;
    int policy_input_dim() const { return channels * map_h * map_w + audio_embed + descriptor_dim; }
};

// Registers trainable tensors under hierarchical names; registration order is
// the checkpoint manifest order.
class ParamRegistry {
public:
    ad::Tensor add(const std::string& name, ad::Shape shape);
    const std::vector<NamedParam>& params() const { return params_; }
    std::vector<NamedParam>& params() { return params_; }

private:
    std::vector<NamedParam> params_;
};

// Exact count of trainable scalars, optionally restricted to a name prefix.
long count_parameters(const ParamRegistry& reg, const std::string& prefix = "");

// fan-in scaled uniform: U(-sqrt(3/fan_in), +sqrt(3/fan_in))
void init_fanin_uniform(ad::Tensor& t, int fan_in, Rng& rng);
// Orthogonal columns via modified Gram-Schmidt on a Gaussian draw. For gated
// cells the [rows, gates*rows] matrix is orthogonalized per gate block.
void init_orthogonal_blocks(ad::Tensor& t, int rows, int block_cols, Rng& rng);

struct Linear {
    ad::Tensor w, b;
    int in = 0, out = 0;

    static Linear create(ParamRegistry& reg, const std::string& name, int in, int out, Rng& rng,
                         bool zero_init = false);
    ad::Tensor forward(ad::Graph& g, const ad::Tensor& x) const;
};

struct Conv2d {
    ad::Tensor w, b;
    int in_ch = 0, out_ch = 0, kh = 1, kw = 1, stride = 1;

    static Conv2d create(ParamRegistry& reg, const std::string& name, int in_ch, int out_ch, int kh,
                         int kw, int stride, Rng& rng);
    ad::Tensor forward(ad::Graph& g, const ad::Tensor& x) const;
};

// Gate order [r | z | n]:
//   r = sigmoid(x Wx_r + b_r + h Wh_r)
//   z = sigmoid(x Wx_z + b_z + h Wh_z)
//   n = tanh  (x Wx_n + b_n + r * (h Wh_n))
//   h' = n + z * (h - n)
struct GruCell {
    ad::Tensor wx, wh, b;
    int in = 0, hidden = 0;

    static GruCell create(ParamRegistry& reg, const std::string& name, int in, int hidden, Rng& rng);
    ad::Tensor step(ad::Graph& g, const ad::Tensor& x, const ad::Tensor& h) const;
};

// Gate order [i | f | g | o]:
//   i,f,o = sigmoid(...), g = tanh(...), all over (x Wx + b + h Wh)
//   c' = f * c + i * g ; h' = o * tanh(c')
struct LstmCell {
    ad::Tensor wx, wh, b;
    int in = 0, hidden = 0;

    struct State {
        ad::Tensor h, c;
    };

    static LstmCell create(ParamRegistry& reg, const std::string& name, int in, int hidden, Rng& rng);
    State step(ad::Graph& g, const ad::Tensor& x, const State& s) const;
};

// Depth rays -> C x H x W feature map: the ray vector is treated as a one-row
// image and pushed through two strided valid convolutions.
struct VisualEncoder {
    Conv2d conv1, conv2;
    NetConfig cfg;

    static VisualEncoder create(ParamRegistry& reg, const NetConfig& cfg, Rng& rng);
    // depth [m, R] with entries in [0, 1] -> [m, C, H, W]
    ad::Tensor encode(ad::Graph& g, const ad::Tensor& depth) const;
};

// 2 x B band intensities -> audio feature map + pooled embedding. The pooled
// vector is exactly mean_pool_spatial(map) through one linear layer.
struct AudioEncoder {
    Linear to_map, pool_head;
    NetConfig cfg;

    static AudioEncoder create(ParamRegistry& reg, const NetConfig& cfg, Rng& rng);
    struct Out {
        ad::Tensor map;     // [m, Ca, ah, aw]
        ad::Tensor pooled;  // [m, d_a]
    };
    // audio [m, 2B] with entries >= 0
    Out encode(ad::Graph& g, const ad::Tensor& audio) const;
};

}  // namespace sacf
