#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sacf/common.hpp"

namespace sacf::ad {

using Shape = std::vector<int>;

int numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense float32 tensor. The handle shares storage: copies alias the same data,
// which is what parameter registration and tape replay rely on.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float value, bool requires_grad = false);
    static Tensor from_values(Shape shape, std::vector<float> values, bool requires_grad = false);
    static Tensor scalar(float value);

    bool defined() const { return d_ != nullptr; }
    const Shape& shape() const;
    int size() const;
    bool requires_grad() const;
    void set_requires_grad(bool rg);

    std::span<const float> values() const;
    std::span<float> values_mut();
    float value_at(int i) const { return values()[static_cast<std::size_t>(i)]; }
    float scalar_value() const;

    bool has_grad() const;
    std::span<const float> grad() const;
    std::span<float> grad_mut();        // allocates zeros on first use
    void zero_grad();                   // keeps allocation
    void clear_grad();                  // drops allocation

    // Identity of the underlying storage (stable across handle copies).
    const void* id() const { return d_.get(); }

private:
    struct Data {
        Shape shape;
        std::vector<float> v;
        std::vector<float> g;
        bool requires_grad = false;
    };
    std::shared_ptr<Data> d_;
};

enum class OpKind {
    kMatmul,
    kLinear,
    kConv2dValid,
    kAdd,
    kSub,
    kMul,
    kAffineChannelBroadcast,
    kRelu,
    kTanh,
    kSigmoid,
    kSin,
    kCos,
    kExp,
    kSoftmaxLastDim,
    kLogSoftmaxLastDim,
    kConcatLastDim,
    kMeanPoolSpatial,
    kReshape,
    kSliceCols,
    kClamp,
    kMinimum,
    kSumLastDim,
    kSumAll,
    kMeanAll,
    kScale,
    kGatherCols,
    kCategoricalNll,
    kBceWithLogits,
};

const char* op_name(OpKind k);

struct OpAttrs {
    int i0 = 0, i1 = 0;            // stride / slice bounds
    float f0 = 0.f, f1 = 0.f;      // clamp bounds / scale coefficients
    Shape target_shape;            // reshape
    std::vector<int> indices;      // gather / NLL targets
    std::vector<float> floats;     // BCE targets
};

// Define-by-run tape. Single-threaded per instance; independent instances are
// unrelated. Recording happens whenever grads are enabled and any input
// requires grad; backward() replays the tape in reverse and clears it.
class Graph {
public:
    Tensor op_forward(OpKind kind, std::vector<Tensor> inputs, OpAttrs attrs = {});

    void backward(const Tensor& loss);

    void clear() { tape_.clear(); }
    std::size_t tape_size() const { return tape_.size(); }

    bool grad_enabled() const { return grad_enabled_; }
    void set_grad_enabled(bool on) { grad_enabled_ = on; }

    struct NoGradScope {
        explicit NoGradScope(Graph& g) : g_(g), prev_(g.grad_enabled_) { g.grad_enabled_ = false; }
        ~NoGradScope() { g_.grad_enabled_ = prev_; }
        Graph& g_;
        bool prev_;
    };

private:
    struct Step {
        OpKind kind;
        std::vector<Tensor> in;
        Tensor out;
        OpAttrs attrs;
    };
    std::vector<Step> tape_;
    bool grad_enabled_ = true;
};

// ---- convenience wrappers over op_forward ----

Tensor matmul(Graph& g, const Tensor& a, const Tensor& b);
Tensor linear(Graph& g, const Tensor& x, const Tensor& w, const Tensor& b);
Tensor conv2d_valid(Graph& g, const Tensor& x, const Tensor& w, const Tensor& b, int stride = 1);
Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor sub(Graph& g, const Tensor& a, const Tensor& b);
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);
Tensor affine_channel_broadcast(Graph& g, const Tensor& x, const Tensor& gamma, const Tensor& beta);
Tensor relu(Graph& g, const Tensor& x);
Tensor tanh_op(Graph& g, const Tensor& x);
Tensor sigmoid(Graph& g, const Tensor& x);
Tensor sin_op(Graph& g, const Tensor& x);
Tensor cos_op(Graph& g, const Tensor& x);
Tensor exp_op(Graph& g, const Tensor& x);
Tensor softmax_lastdim(Graph& g, const Tensor& x);
Tensor log_softmax_lastdim(Graph& g, const Tensor& x);
Tensor concat_lastdim(Graph& g, std::vector<Tensor> xs);
Tensor mean_pool_spatial(Graph& g, const Tensor& x);
Tensor reshape(Graph& g, const Tensor& x, Shape target);
Tensor slice_cols(Graph& g, const Tensor& x, int c0, int c1);
Tensor clamp(Graph& g, const Tensor& x, float lo, float hi);
Tensor minimum(Graph& g, const Tensor& a, const Tensor& b);
Tensor sum_lastdim(Graph& g, const Tensor& x);
Tensor sum_all(Graph& g, const Tensor& x);
Tensor mean_all(Graph& g, const Tensor& x);
Tensor scale(Graph& g, const Tensor& x, float a, float b = 0.f);
Tensor gather_cols(Graph& g, const Tensor& x, std::vector<int> indices);
Tensor categorical_nll(Graph& g, const Tensor& logits, std::vector<int> targets);
Tensor bce_with_logits(Graph& g, const Tensor& logit, std::vector<float> targets);

// ---- gradient verification ----

struct FdCheckOptions {
    float h = 1e-3f;
    int max_coords_per_param = 16;  // sampled coordinates (all, if fewer)
    std::uint64_t seed = 0;
};

// Max over sampled coordinates of |analytic - central difference| / max(1, |cd|).
// `f` must be deterministic (verified by double evaluation) and must build its
// graph on the supplied Graph from the given parameters.
float finite_difference_check(const std::function<Tensor(Graph&)>& f,
                              std::span<Tensor> params, FdCheckOptions opts = {});

// Same loop, but comparing against caller-supplied per-parameter gradients
// (used by the negative-control test that injects a wrong gradient).
float fd_max_rel_error(const std::function<Tensor(Graph&)>& f, std::span<Tensor> params,
                       std::span<const std::vector<float>> analytic, FdCheckOptions opts = {});

}  // namespace sacf::ad
