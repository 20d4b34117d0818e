#include "sacf/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace sacf::ad {

int numel(const Shape& s) {
    int n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::kMatmul: return "matmul";
        case OpKind::kLinear: return "linear";
        case OpKind::kConv2dValid: return "conv2d-valid";
        case OpKind::kAdd: return "add";
        case OpKind::kSub: return "sub";
        case OpKind::kMul: return "mul";
        case OpKind::kAffineChannelBroadcast: return "affine-channel-broadcast";
        case OpKind::kRelu: return "relu";
        case OpKind::kTanh: return "tanh";
        case OpKind::kSigmoid: return "sigmoid";
        case OpKind::kSin: return "sin";
        case OpKind::kCos: return "cos";
        case OpKind::kExp: return "exp";
        case OpKind::kSoftmaxLastDim: return "softmax-lastdim";
        case OpKind::kLogSoftmaxLastDim: return "log-softmax-lastdim";
        case OpKind::kConcatLastDim: return "concat-lastdim";
        case OpKind::kMeanPoolSpatial: return "mean-pool-spatial";
        case OpKind::kReshape: return "reshape";
        case OpKind::kSliceCols: return "slice";
        case OpKind::kClamp: return "clamp";
        case OpKind::kMinimum: return "minimum";
        case OpKind::kSumLastDim: return "sum-lastdim";
        case OpKind::kSumAll: return "sum-all";
        case OpKind::kMeanAll: return "mean-all";
        case OpKind::kScale: return "scale";
        case OpKind::kGatherCols: return "gather-cols";
        case OpKind::kCategoricalNll: return "categorical-nll";
        case OpKind::kBceWithLogits: return "bce-with-logits";
    }
    return "?";
}

// ---- Tensor ----

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    Tensor t;
    t.d_ = std::make_shared<Data>();
    t.d_->shape = std::move(shape);
    t.d_->v.assign(static_cast<std::size_t>(numel(t.d_->shape)), 0.f);
    t.d_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.d_->v.begin(), t.d_->v.end(), value);
    return t;
}

Tensor Tensor::from_values(Shape shape, std::vector<float> values, bool requires_grad) {
    SACF_REQUIRE(static_cast<int>(values.size()) == numel(shape),
                 "Tensor::from_values: value count does not match shape " + shape_str(shape));
    for (float x : values)
        if (!std::isfinite(x)) throw NumericFault("Tensor::from_values: non-finite input value");
    Tensor t;
    t.d_ = std::make_shared<Data>();
    t.d_->shape = std::move(shape);
    t.d_->v = std::move(values);
    t.d_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::scalar(float value) { return from_values({1, 1}, {value}); }

const Shape& Tensor::shape() const {
    SACF_REQUIRE(d_ != nullptr, "Tensor: undefined handle");
    return d_->shape;
}

int Tensor::size() const { return numel(shape()); }

bool Tensor::requires_grad() const { return d_ && d_->requires_grad; }

void Tensor::set_requires_grad(bool rg) {
    SACF_REQUIRE(d_ != nullptr, "Tensor: undefined handle");
    d_->requires_grad = rg;
}

std::span<const float> Tensor::values() const {
    SACF_REQUIRE(d_ != nullptr, "Tensor: undefined handle");
    return d_->v;
}

std::span<float> Tensor::values_mut() {
    SACF_REQUIRE(d_ != nullptr, "Tensor: undefined handle");
    return d_->v;
}

float Tensor::scalar_value() const {
    SACF_REQUIRE(size() == 1, "Tensor::scalar_value: tensor is not scalar");
    return d_->v[0];
}

bool Tensor::has_grad() const { return d_ && !d_->g.empty(); }

std::span<const float> Tensor::grad() const {
    SACF_REQUIRE(has_grad(), "Tensor::grad: gradient not populated");
    return d_->g;
}

std::span<float> Tensor::grad_mut() {
    SACF_REQUIRE(d_ != nullptr, "Tensor: undefined handle");
    if (d_->g.empty()) d_->g.assign(d_->v.size(), 0.f);
    return d_->g;
}

void Tensor::zero_grad() {
    if (d_ && !d_->g.empty()) std::fill(d_->g.begin(), d_->g.end(), 0.f);
}

void Tensor::clear_grad() {
    if (d_) d_->g.clear();
}

// ---- shape rules ----

namespace {

void require_rank(const Tensor& t, int rank, const char* op) {
    SACF_REQUIRE(static_cast<int>(t.shape().size()) == rank,
                 std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
}

Shape infer_shape(OpKind kind, const std::vector<Tensor>& in, const OpAttrs& a) {
    switch (kind) {
        case OpKind::kMatmul: {
            SACF_REQUIRE(in.size() == 2, "matmul: needs 2 inputs");
            require_rank(in[0], 2, "matmul");
            require_rank(in[1], 2, "matmul");
            SACF_REQUIRE(in[0].shape()[1] == in[1].shape()[0],
                         "matmul: inner dims differ " + shape_str(in[0].shape()) + " vs " +
                             shape_str(in[1].shape()));
            return {in[0].shape()[0], in[1].shape()[1]};
        }
        case OpKind::kLinear: {
            SACF_REQUIRE(in.size() == 3, "linear: needs x, w, b");
            require_rank(in[0], 2, "linear");
            require_rank(in[1], 2, "linear");
            require_rank(in[2], 2, "linear");
            SACF_REQUIRE(in[0].shape()[1] == in[1].shape()[0], "linear: x/w inner dims differ");
            SACF_REQUIRE(in[2].shape()[0] == 1 && in[2].shape()[1] == in[1].shape()[1],
                         "linear: bias must be [1, out]");
            return {in[0].shape()[0], in[1].shape()[1]};
        }
        case OpKind::kConv2dValid: {
            SACF_REQUIRE(in.size() == 3, "conv2d-valid: needs x, w, b");
            require_rank(in[0], 4, "conv2d-valid");
            require_rank(in[1], 4, "conv2d-valid");
            require_rank(in[2], 2, "conv2d-valid");
            const auto& xs = in[0].shape();
            const auto& ws = in[1].shape();
            SACF_REQUIRE(xs[1] == ws[1], "conv2d-valid: channel mismatch");
            SACF_REQUIRE(a.i0 >= 1, "conv2d-valid: stride must be >= 1");
            SACF_REQUIRE(ws[2] <= xs[2] && ws[3] <= xs[3], "conv2d-valid: kernel larger than input");
            SACF_REQUIRE(in[2].shape()[0] == 1 && in[2].shape()[1] == ws[0],
                         "conv2d-valid: bias must be [1, out_channels]");
            return {xs[0], ws[0], (xs[2] - ws[2]) / a.i0 + 1, (xs[3] - ws[3]) / a.i0 + 1};
        }
        case OpKind::kAdd:
        case OpKind::kSub:
        case OpKind::kMinimum: {
            SACF_REQUIRE(in.size() == 2, "binary op: needs 2 inputs");
            SACF_REQUIRE(in[0].shape() == in[1].shape(),
                         std::string(op_name(kind)) + ": shape mismatch " +
                             shape_str(in[0].shape()) + " vs " + shape_str(in[1].shape()));
            return in[0].shape();
        }
        case OpKind::kMul: {
            SACF_REQUIRE(in.size() == 2, "mul: needs 2 inputs");
            if (in[0].shape() == in[1].shape()) return in[0].shape();
            // column broadcast: [m,n] * [m,1]
            SACF_REQUIRE(in[0].shape().size() == 2 && in[1].shape().size() == 2 &&
                             in[1].shape()[0] == in[0].shape()[0] && in[1].shape()[1] == 1,
                         "mul: shapes must match or second input must be [rows, 1]");
            return in[0].shape();
        }
        case OpKind::kAffineChannelBroadcast: {
            SACF_REQUIRE(in.size() == 3, "affine-channel-broadcast: needs x, gamma, beta");
            require_rank(in[0], 4, "affine-channel-broadcast");
            require_rank(in[1], 2, "affine-channel-broadcast");
            require_rank(in[2], 2, "affine-channel-broadcast");
            const auto& xs = in[0].shape();
            Shape want{xs[0], xs[1]};
            SACF_REQUIRE(in[1].shape() == want && in[2].shape() == want,
                         "affine-channel-broadcast: gamma/beta must be [batch, channels]");
            return xs;
        }
        case OpKind::kRelu:
        case OpKind::kTanh:
        case OpKind::kSigmoid:
        case OpKind::kSin:
        case OpKind::kCos:
        case OpKind::kExp:
        case OpKind::kClamp:
        case OpKind::kScale:
            SACF_REQUIRE(in.size() == 1, "unary op: needs 1 input");
            return in[0].shape();
        case OpKind::kSoftmaxLastDim:
        case OpKind::kLogSoftmaxLastDim:
            SACF_REQUIRE(in.size() == 1, "softmax: needs 1 input");
            require_rank(in[0], 2, "softmax");
            return in[0].shape();
        case OpKind::kConcatLastDim: {
            SACF_REQUIRE(!in.empty(), "concat-lastdim: needs inputs");
            int rows = in[0].shape().size() == 2 ? in[0].shape()[0] : -1;
            SACF_REQUIRE(rows > 0, "concat-lastdim: rank-2 inputs required");
            int cols = 0;
            for (const auto& t : in) {
                require_rank(t, 2, "concat-lastdim");
                SACF_REQUIRE(t.shape()[0] == rows, "concat-lastdim: row mismatch");
                cols += t.shape()[1];
            }
            return {rows, cols};
        }
        case OpKind::kMeanPoolSpatial:
            SACF_REQUIRE(in.size() == 1, "mean-pool-spatial: needs 1 input");
            require_rank(in[0], 4, "mean-pool-spatial");
            return {in[0].shape()[0], in[0].shape()[1]};
        case OpKind::kReshape:
            SACF_REQUIRE(in.size() == 1, "reshape: needs 1 input");
            SACF_REQUIRE(numel(a.target_shape) == in[0].size(),
                         "reshape: element count mismatch " + shape_str(in[0].shape()) + " -> " +
                             shape_str(a.target_shape));
            return a.target_shape;
        case OpKind::kSliceCols: {
            SACF_REQUIRE(in.size() == 1, "slice: needs 1 input");
            require_rank(in[0], 2, "slice");
            SACF_REQUIRE(0 <= a.i0 && a.i0 < a.i1 && a.i1 <= in[0].shape()[1],
                         "slice: bad column range");
            return {in[0].shape()[0], a.i1 - a.i0};
        }
        case OpKind::kSumLastDim:
            SACF_REQUIRE(in.size() == 1, "sum-lastdim: needs 1 input");
            require_rank(in[0], 2, "sum-lastdim");
            return {in[0].shape()[0], 1};
        case OpKind::kSumAll:
        case OpKind::kMeanAll:
            SACF_REQUIRE(in.size() == 1, "reduction: needs 1 input");
            return {1, 1};
        case OpKind::kGatherCols: {
            SACF_REQUIRE(in.size() == 1, "gather-cols: needs 1 input");
            require_rank(in[0], 2, "gather-cols");
            SACF_REQUIRE(static_cast<int>(a.indices.size()) == in[0].shape()[0],
                         "gather-cols: one index per row required");
            for (int idx : a.indices)
                SACF_REQUIRE(0 <= idx && idx < in[0].shape()[1], "gather-cols: index out of range");
            return {in[0].shape()[0], 1};
        }
        case OpKind::kCategoricalNll: {
            SACF_REQUIRE(in.size() == 1, "categorical-nll: needs logits");
            require_rank(in[0], 2, "categorical-nll");
            SACF_REQUIRE(static_cast<int>(a.indices.size()) == in[0].shape()[0],
                         "categorical-nll: one target per row required");
            for (int idx : a.indices)
                SACF_REQUIRE(0 <= idx && idx < in[0].shape()[1],
                             "categorical-nll: target index out of range");
            return {in[0].shape()[0], 1};
        }
        case OpKind::kBceWithLogits: {
            SACF_REQUIRE(in.size() == 1, "bce-with-logits: needs logits");
            require_rank(in[0], 2, "bce-with-logits");
            SACF_REQUIRE(in[0].shape()[1] == 1, "bce-with-logits: logits must be [rows, 1]");
            SACF_REQUIRE(static_cast<int>(a.floats.size()) == in[0].shape()[0],
                         "bce-with-logits: one target per row required");
            return in[0].shape();
        }
    }
    throw ContractViolation("infer_shape: unknown op");
}

// ---- gemm kernels (restrict + k-blocking keep the inner loops vectorized
// and the streamed matrix read once per pass) ----

// C[m,n] += A[m,k] * B[k,n]
void gemm_accum(const float* __restrict A, const float* __restrict B, float* __restrict C, int m,
                int k, int n) {
    constexpr int kBlock = 16;
    for (int p0 = 0; p0 < k; p0 += kBlock) {
        const int p1 = std::min(k, p0 + kBlock);
        for (int i = 0; i < m; ++i) {
            const float* __restrict Ai = A + static_cast<std::size_t>(i) * k;
            float* __restrict Ci = C + static_cast<std::size_t>(i) * n;
            for (int p = p0; p < p1; ++p) {
                const float av = Ai[p];
                const float* __restrict Bp = B + static_cast<std::size_t>(p) * n;
                for (int j = 0; j < n; ++j) Ci[j] += av * Bp[j];
            }
        }
    }
}

// 16 independent partial sums so the reduction vectorizes (full-width on
// AVX-512) without reassociation flags
inline float dot_lanes(const float* __restrict a, const float* __restrict b, int n) {
    float lanes[16] = {};
    int j = 0;
    for (; j + 16 <= n; j += 16)
        for (int u = 0; u < 16; ++u) lanes[u] += a[j + u] * b[j + u];
    float acc = 0.f;
    for (int u = 0; u < 16; ++u) acc += lanes[u];
    for (; j < n; ++j) acc += a[j] * b[j];
    return acc;
}

// dA[m,k] += dY[m,n] * B^T
void gemm_grad_a(const float* __restrict dY, const float* __restrict B, float* __restrict dA,
                 int m, int k, int n) {
    for (int p = 0; p < k; ++p) {
        const float* __restrict Bp = B + static_cast<std::size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const float* __restrict dYi = dY + static_cast<std::size_t>(i) * n;
            dA[static_cast<std::size_t>(i) * k + p] += dot_lanes(dYi, Bp, n);
        }
    }
}

// dB[k,n] += A^T * dY
void gemm_grad_b(const float* __restrict A, const float* __restrict dY, float* __restrict dB,
                 int m, int k, int n) {
    for (int p = 0; p < k; ++p) {
        float* __restrict dBp = dB + static_cast<std::size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const float av = A[static_cast<std::size_t>(i) * k + p];
            const float* __restrict dYi = dY + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) dBp[j] += av * dYi[j];
        }
    }
}

// conv as gemm over gathered patches; the patch axis packs [ci][r][c] so the
// accumulation order matches the direct loop nest
struct ConvDims {
    int N, Ci, H, W, Co, kh, kw, s, Ho, Wo;
    int positions() const { return N * Ho * Wo; }
    int patch() const { return Ci * kh * kw; }
};

ConvDims conv_dims(const Shape& xs, const Shape& ws, int stride) {
    ConvDims d;
    d.N = xs[0];
    d.Ci = xs[1];
    d.H = xs[2];
    d.W = xs[3];
    d.Co = ws[0];
    d.kh = ws[2];
    d.kw = ws[3];
    d.s = stride;
    d.Ho = (d.H - d.kh) / d.s + 1;
    d.Wo = (d.W - d.kw) / d.s + 1;
    return d;
}

void conv_gather_patches(const float* __restrict X, const ConvDims& d, float* __restrict P) {
    int row = 0;
    for (int n = 0; n < d.N; ++n)
        for (int ho = 0; ho < d.Ho; ++ho)
            for (int wo = 0; wo < d.Wo; ++wo, ++row) {
                float* __restrict out = P + static_cast<std::size_t>(row) * d.patch();
                for (int ci = 0; ci < d.Ci; ++ci)
                    for (int r = 0; r < d.kh; ++r) {
                        const float* __restrict src =
                            X + ((static_cast<std::size_t>(n) * d.Ci + ci) * d.H + (ho * d.s + r)) *
                                    d.W +
                            wo * d.s;
                        for (int c = 0; c < d.kw; ++c) *out++ = src[c];
                    }
            }
}

// Y[m,co] = P[m,patch] . W[co,patch]^T with W in its native layout
void conv_gemm_nt(const float* __restrict P, const float* __restrict W, float* __restrict Y,
                  int m, int co, int patch) {
    if (patch < 16) {
        // small patches: broadcast each patch entry across the Co-wide row
        for (int i = 0; i < m; ++i) {
            const float* __restrict Pi = P + static_cast<std::size_t>(i) * patch;
            float* __restrict Yi = Y + static_cast<std::size_t>(i) * co;
            for (int c = 0; c < co; ++c) {
                const float* __restrict Wc = W + static_cast<std::size_t>(c) * patch;
                float acc = 0.f;
                for (int p = 0; p < patch; ++p) acc += Pi[p] * Wc[p];
                Yi[c] += acc;
            }
        }
        return;
    }
    for (int i = 0; i < m; ++i) {
        const float* __restrict Pi = P + static_cast<std::size_t>(i) * patch;
        float* __restrict Yi = Y + static_cast<std::size_t>(i) * co;
        for (int c = 0; c < co; ++c)
            Yi[c] += dot_lanes(Pi, W + static_cast<std::size_t>(c) * patch, patch);
    }
}

// ---- forward kernels ----

void forward_kernel(OpKind kind, const std::vector<Tensor>& in, Tensor& out, const OpAttrs& a) {
    float* o = out.values_mut().data();
    switch (kind) {
        case OpKind::kMatmul: {
            const int m = in[0].shape()[0], k = in[0].shape()[1], n = in[1].shape()[1];
            std::fill(o, o + static_cast<std::size_t>(m) * n, 0.f);
            gemm_accum(in[0].values().data(), in[1].values().data(), o, m, k, n);
            break;
        }
        case OpKind::kLinear: {
            const int m = in[0].shape()[0], k = in[0].shape()[1], n = in[1].shape()[1];
            const float* b = in[2].values().data();
            for (int i = 0; i < m; ++i)
                std::memcpy(o + static_cast<std::size_t>(i) * n, b, sizeof(float) * n);
            gemm_accum(in[0].values().data(), in[1].values().data(), o, m, k, n);
            break;
        }
        case OpKind::kConv2dValid: {
            const ConvDims d = conv_dims(in[0].shape(), in[1].shape(), a.i0);
            const float* b = in[2].values().data();
            std::vector<float> patches(static_cast<std::size_t>(d.positions()) * d.patch());
            conv_gather_patches(in[0].values().data(), d, patches.data());
            std::vector<float> ymat(static_cast<std::size_t>(d.positions()) * d.Co);
            for (int row = 0; row < d.positions(); ++row)
                std::memcpy(ymat.data() + static_cast<std::size_t>(row) * d.Co, b,
                            sizeof(float) * d.Co);
            conv_gemm_nt(patches.data(), in[1].values().data(), ymat.data(), d.positions(), d.Co,
                         d.patch());
            // [position][Co] -> [N][Co][Ho][Wo]
            int row = 0;
            for (int n = 0; n < d.N; ++n)
                for (int ho = 0; ho < d.Ho; ++ho)
                    for (int wo = 0; wo < d.Wo; ++wo, ++row)
                        for (int co = 0; co < d.Co; ++co)
                            o[((static_cast<std::size_t>(n) * d.Co + co) * d.Ho + ho) * d.Wo + wo] =
                                ymat[static_cast<std::size_t>(row) * d.Co + co];
            break;
        }
        case OpKind::kAdd: {
            const float* x = in[0].values().data();
            const float* y = in[1].values().data();
            const int n = in[0].size();
            for (int i = 0; i < n; ++i) o[i] = x[i] + y[i];
            break;
        }
        case OpKind::kSub: {
            const float* x = in[0].values().data();
            const float* y = in[1].values().data();
            const int n = in[0].size();
            for (int i = 0; i < n; ++i) o[i] = x[i] - y[i];
            break;
        }
        case OpKind::kMul: {
            const float* x = in[0].values().data();
            const float* y = in[1].values().data();
            if (in[0].shape() == in[1].shape()) {
                const int n = in[0].size();
                for (int i = 0; i < n; ++i) o[i] = x[i] * y[i];
            } else {
                const int m = in[0].shape()[0], n = in[0].shape()[1];
                for (int i = 0; i < m; ++i) {
                    const float yv = y[i];
                    for (int j = 0; j < n; ++j)
                        o[static_cast<std::size_t>(i) * n + j] = x[static_cast<std::size_t>(i) * n + j] * yv;
                }
            }
            break;
        }
        case OpKind::kAffineChannelBroadcast: {
            const auto& xs = in[0].shape();
            const int N = xs[0], C = xs[1], HW = xs[2] * xs[3];
            const float* X = in[0].values().data();
            const float* G = in[1].values().data();
            const float* B = in[2].values().data();
            for (int nIdx = 0; nIdx < N; ++nIdx)
                for (int c = 0; c < C; ++c) {
                    const float scl = 1.f + G[static_cast<std::size_t>(nIdx) * C + c];
                    const float bias = B[static_cast<std::size_t>(nIdx) * C + c];
                    const float* xp = X + (static_cast<std::size_t>(nIdx) * C + c) * HW;
                    float* op = o + (static_cast<std::size_t>(nIdx) * C + c) * HW;
                    for (int i = 0; i < HW; ++i) op[i] = scl * xp[i] + bias;
                }
            break;
        }
        case OpKind::kRelu: {
            const float* x = in[0].values().data();
            const int n = in[0].size();
            for (int i = 0; i < n; ++i) o[i] = x[i] > 0.f ? x[i] : 0.f;
            break;
        }
        case OpKind::kTanh: {
            const float* x = in[0].values().data();
            const int n = in[0].size();
            for (int i = 0; i < n; ++i) o[i] = std::tanh(x[i]);
            break;
        }
        case OpKind::kSigmoid: {
            const float* x = in[0].values().data();
            const int n = in[0].size();
            for (int i = 0; i < n; ++i) o[i] = 1.f / (1.f + std::exp(-x[i]));
            break;
        }
        case OpKind::kSin: {
            const float* x = in[0].values().data();
            const int n = in[0].size();
            for (int i = 0; i < n; ++i) o[i] = std::sin(x[i]);
            break;
        }
        case OpKind::kCos: {
            const float* x = in[0].values().data();
            const int n = in[0].size();
            for (int i = 0; i < n; ++i) o[i] = std::cos(x[i]);
            break;
        }
        case OpKind::kExp: {
            const float* x = in[0].values().data();
            const int n = in[0].size();
            for (int i = 0; i < n; ++i) o[i] = std::exp(x[i]);
            break;
        }
        case OpKind::kSoftmaxLastDim:
        case OpKind::kLogSoftmaxLastDim: {
            const int m = in[0].shape()[0], n = in[0].shape()[1];
            const float* X = in[0].values().data();
            for (int i = 0; i < m; ++i) {
                const float* xi = X + static_cast<std::size_t>(i) * n;
                float* oi = o + static_cast<std::size_t>(i) * n;
                float mx = xi[0];
                for (int j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
                float denom = 0.f;
                for (int j = 0; j < n; ++j) denom += std::exp(xi[j] - mx);
                if (kind == OpKind::kSoftmaxLastDim) {
                    for (int j = 0; j < n; ++j) oi[j] = std::exp(xi[j] - mx) / denom;
                } else {
                    const float lse = std::log(denom);
                    for (int j = 0; j < n; ++j) oi[j] = xi[j] - mx - lse;
                }
            }
            break;
        }
        case OpKind::kConcatLastDim: {
            const int m = in[0].shape()[0];
            int total = 0;
            for (const auto& t : in) total += t.shape()[1];
            int off = 0;
            for (const auto& t : in) {
                const int c = t.shape()[1];
                const float* x = t.values().data();
                for (int i = 0; i < m; ++i)
                    std::memcpy(o + static_cast<std::size_t>(i) * total + off,
                                x + static_cast<std::size_t>(i) * c, sizeof(float) * c);
                off += c;
            }
            break;
        }
        case OpKind::kMeanPoolSpatial: {
            const auto& xs = in[0].shape();
            const int N = xs[0], C = xs[1], HW = xs[2] * xs[3];
            const float* X = in[0].values().data();
            for (int i = 0; i < N * C; ++i) {
                const float* xp = X + static_cast<std::size_t>(i) * HW;
                float acc = 0.f;
                for (int j = 0; j < HW; ++j) acc += xp[j];
                o[i] = acc / static_cast<float>(HW);
            }
            break;
        }
        case OpKind::kReshape: {
            std::memcpy(o, in[0].values().data(), sizeof(float) * static_cast<std::size_t>(in[0].size()));
            break;
        }
        case OpKind::kSliceCols: {
            const int m = in[0].shape()[0], n = in[0].shape()[1], w = a.i1 - a.i0;
            const float* X = in[0].values().data();
            for (int i = 0; i < m; ++i)
                std::memcpy(o + static_cast<std::size_t>(i) * w,
                            X + static_cast<std::size_t>(i) * n + a.i0, sizeof(float) * w);
            break;
        }
        case OpKind::kClamp: {
            const float* x = in[0].values().data();
            const int n = in[0].size();
            for (int i = 0; i < n; ++i) o[i] = std::min(std::max(x[i], a.f0), a.f1);
            break;
        }
        case OpKind::kMinimum: {
            const float* x = in[0].values().data();
            const float* y = in[1].values().data();
            const int n = in[0].size();
            for (int i = 0; i < n; ++i) o[i] = x[i] <= y[i] ? x[i] : y[i];
            break;
        }
        case OpKind::kSumLastDim: {
            const int m = in[0].shape()[0], n = in[0].shape()[1];
            const float* X = in[0].values().data();
            for (int i = 0; i < m; ++i) {
                float acc = 0.f;
                const float* xi = X + static_cast<std::size_t>(i) * n;
                for (int j = 0; j < n; ++j) acc += xi[j];
                o[i] = acc;
            }
            break;
        }
        case OpKind::kSumAll:
        case OpKind::kMeanAll: {
            const float* x = in[0].values().data();
            const int n = in[0].size();
            float acc = 0.f;
            for (int i = 0; i < n; ++i) acc += x[i];
            o[0] = kind == OpKind::kSumAll ? acc : acc / static_cast<float>(n);
            break;
        }
        case OpKind::kScale: {
            const float* x = in[0].values().data();
            const int n = in[0].size();
            for (int i = 0; i < n; ++i) o[i] = a.f0 * x[i] + a.f1;
            break;
        }
        case OpKind::kGatherCols: {
            const int m = in[0].shape()[0], n = in[0].shape()[1];
            const float* X = in[0].values().data();
            for (int i = 0; i < m; ++i) o[i] = X[static_cast<std::size_t>(i) * n + a.indices[i]];
            break;
        }
        case OpKind::kCategoricalNll: {
            const int m = in[0].shape()[0], n = in[0].shape()[1];
            const float* X = in[0].values().data();
            for (int i = 0; i < m; ++i) {
                const float* xi = X + static_cast<std::size_t>(i) * n;
                float mx = xi[0];
                for (int j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
                float denom = 0.f;
                for (int j = 0; j < n; ++j) denom += std::exp(xi[j] - mx);
                o[i] = -(xi[a.indices[i]] - mx - std::log(denom));
            }
            break;
        }
        case OpKind::kBceWithLogits: {
            const int m = in[0].shape()[0];
            const float* x = in[0].values().data();
            for (int i = 0; i < m; ++i) {
                const float xi = x[i], t = a.floats[i];
                // max(x,0) - x*t + log(1 + exp(-|x|))
                o[i] = std::max(xi, 0.f) - xi * t + std::log1p(std::exp(-std::abs(xi)));
            }
            break;
        }
    }
}

// ---- backward kernels ----

void backward_kernel(OpKind kind, std::vector<Tensor>& in, const Tensor& out, const OpAttrs& a) {
    const float* go = out.grad().data();
    auto wants = [&](int i) { return in[static_cast<std::size_t>(i)].requires_grad(); };
    switch (kind) {
        case OpKind::kMatmul:
        case OpKind::kLinear: {
            const int m = in[0].shape()[0], k = in[0].shape()[1], n = in[1].shape()[1];
            if (wants(0))
                gemm_grad_a(go, in[1].values().data(), in[0].grad_mut().data(), m, k, n);
            if (wants(1))
                gemm_grad_b(in[0].values().data(), go, in[1].grad_mut().data(), m, k, n);
            if (kind == OpKind::kLinear && wants(2)) {
                float* __restrict gb = in[2].grad_mut().data();
                for (int i = 0; i < m; ++i) {
                    const float* __restrict gOi = go + static_cast<std::size_t>(i) * n;
                    for (int j = 0; j < n; ++j) gb[j] += gOi[j];
                }
            }
            break;
        }
        case OpKind::kConv2dValid: {
            const ConvDims d = conv_dims(in[0].shape(), in[1].shape(), a.i0);
            // gradient in [position][Co] layout
            std::vector<float> gy(static_cast<std::size_t>(d.positions()) * d.Co);
            int row = 0;
            for (int n = 0; n < d.N; ++n)
                for (int ho = 0; ho < d.Ho; ++ho)
                    for (int wo = 0; wo < d.Wo; ++wo, ++row)
                        for (int co = 0; co < d.Co; ++co)
                            gy[static_cast<std::size_t>(row) * d.Co + co] =
                                go[((static_cast<std::size_t>(n) * d.Co + co) * d.Ho + ho) * d.Wo +
                                   wo];
            if (wants(2)) {
                float* __restrict gb = in[2].grad_mut().data();
                for (int r = 0; r < d.positions(); ++r)
                    for (int co = 0; co < d.Co; ++co)
                        gb[co] += gy[static_cast<std::size_t>(r) * d.Co + co];
            }
            if (wants(0)) {
                // gP[np, patch] = gY[np, Co] * W[Co, patch] in the native layout
                std::vector<float> gpatches(static_cast<std::size_t>(d.positions()) * d.patch(),
                                            0.f);
                gemm_accum(gy.data(), in[1].values().data(), gpatches.data(), d.positions(), d.Co,
                           d.patch());
                // scatter patches back (overlaps accumulate)
                float* gX = in[0].grad_mut().data();
                row = 0;
                for (int n = 0; n < d.N; ++n)
                    for (int ho = 0; ho < d.Ho; ++ho)
                        for (int wo = 0; wo < d.Wo; ++wo, ++row) {
                            const float* __restrict src =
                                gpatches.data() + static_cast<std::size_t>(row) * d.patch();
                            for (int ci = 0; ci < d.Ci; ++ci)
                                for (int r = 0; r < d.kh; ++r) {
                                    float* __restrict dst =
                                        gX + ((static_cast<std::size_t>(n) * d.Ci + ci) * d.H +
                                              (ho * d.s + r)) *
                                                 d.W +
                                        wo * d.s;
                                    for (int c = 0; c < d.kw; ++c) dst[c] += *src++;
                                }
                        }
            }
            if (wants(1)) {
                std::vector<float> patches(static_cast<std::size_t>(d.positions()) * d.patch());
                conv_gather_patches(in[0].values().data(), d, patches.data());
                // gW[co, patch] += sum_r gY[r, co] * P[r, patch]
                float* __restrict gK = in[1].grad_mut().data();
                for (int co = 0; co < d.Co; ++co) {
                    float* __restrict gW = gK + static_cast<std::size_t>(co) * d.patch();
                    for (int r = 0; r < d.positions(); ++r) {
                        const float gv = gy[static_cast<std::size_t>(r) * d.Co + co];
                        const float* __restrict Pr =
                            patches.data() + static_cast<std::size_t>(r) * d.patch();
                        for (int j = 0; j < d.patch(); ++j) gW[j] += gv * Pr[j];
                    }
                }
            }
            break;
        }
        case OpKind::kAdd: {
            const int n = out.size();
            for (int s2 = 0; s2 < 2; ++s2)
                if (wants(s2)) {
                    float* g = in[s2].grad_mut().data();
                    for (int i = 0; i < n; ++i) g[i] += go[i];
                }
            break;
        }
        case OpKind::kSub: {
            const int n = out.size();
            if (wants(0)) {
                float* g = in[0].grad_mut().data();
                for (int i = 0; i < n; ++i) g[i] += go[i];
            }
            if (wants(1)) {
                float* g = in[1].grad_mut().data();
                for (int i = 0; i < n; ++i) g[i] -= go[i];
            }
            break;
        }
        case OpKind::kMul: {
            const float* x = in[0].values().data();
            const float* y = in[1].values().data();
            if (in[0].shape() == in[1].shape()) {
                const int n = out.size();
                if (wants(0)) {
                    float* g = in[0].grad_mut().data();
                    for (int i = 0; i < n; ++i) g[i] += go[i] * y[i];
                }
                if (wants(1)) {
                    float* g = in[1].grad_mut().data();
                    for (int i = 0; i < n; ++i) g[i] += go[i] * x[i];
                }
            } else {
                const int m = in[0].shape()[0], n = in[0].shape()[1];
                if (wants(0)) {
                    float* g = in[0].grad_mut().data();
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < n; ++j)
                            g[static_cast<std::size_t>(i) * n + j] +=
                                go[static_cast<std::size_t>(i) * n + j] * y[i];
                }
                if (wants(1)) {
                    float* g = in[1].grad_mut().data();
                    for (int i = 0; i < m; ++i) {
                        float acc = 0.f;
                        for (int j = 0; j < n; ++j)
                            acc += go[static_cast<std::size_t>(i) * n + j] *
                                   x[static_cast<std::size_t>(i) * n + j];
                        g[i] += acc;
                    }
                }
            }
            break;
        }
        case OpKind::kAffineChannelBroadcast: {
            const auto& xs = in[0].shape();
            const int N = xs[0], C = xs[1], HW = xs[2] * xs[3];
            const float* X = in[0].values().data();
            const float* G = in[1].values().data();
            float* gX = wants(0) ? in[0].grad_mut().data() : nullptr;
            float* gG = wants(1) ? in[1].grad_mut().data() : nullptr;
            float* gB = wants(2) ? in[2].grad_mut().data() : nullptr;
            for (int nIdx = 0; nIdx < N; ++nIdx)
                for (int c = 0; c < C; ++c) {
                    const std::size_t base = (static_cast<std::size_t>(nIdx) * C + c) * HW;
                    const float scl = 1.f + G[static_cast<std::size_t>(nIdx) * C + c];
                    float accG = 0.f, accB = 0.f;
                    for (int i = 0; i < HW; ++i) {
                        const float g = go[base + i];
                        if (gX) gX[base + i] += g * scl;
                        accG += g * X[base + i];
                        accB += g;
                    }
                    if (gG) gG[static_cast<std::size_t>(nIdx) * C + c] += accG;
                    if (gB) gB[static_cast<std::size_t>(nIdx) * C + c] += accB;
                }
            break;
        }
        case OpKind::kRelu: {
            if (!wants(0)) break;
            const float* x = in[0].values().data();
            float* g = in[0].grad_mut().data();
            const int n = out.size();
            for (int i = 0; i < n; ++i)
                if (x[i] > 0.f) g[i] += go[i];
            break;
        }
        case OpKind::kTanh: {
            if (!wants(0)) break;
            const float* y = out.values().data();
            float* g = in[0].grad_mut().data();
            const int n = out.size();
            for (int i = 0; i < n; ++i) g[i] += go[i] * (1.f - y[i] * y[i]);
            break;
        }
        case OpKind::kSigmoid: {
            if (!wants(0)) break;
            const float* y = out.values().data();
            float* g = in[0].grad_mut().data();
            const int n = out.size();
            for (int i = 0; i < n; ++i) g[i] += go[i] * y[i] * (1.f - y[i]);
            break;
        }
        case OpKind::kSin: {
            if (!wants(0)) break;
            const float* x = in[0].values().data();
            float* g = in[0].grad_mut().data();
            const int n = out.size();
            for (int i = 0; i < n; ++i) g[i] += go[i] * std::cos(x[i]);
            break;
        }
        case OpKind::kCos: {
            if (!wants(0)) break;
            const float* x = in[0].values().data();
            float* g = in[0].grad_mut().data();
            const int n = out.size();
            for (int i = 0; i < n; ++i) g[i] -= go[i] * std::sin(x[i]);
            break;
        }
        case OpKind::kExp: {
            if (!wants(0)) break;
            const float* y = out.values().data();
            float* g = in[0].grad_mut().data();
            const int n = out.size();
            for (int i = 0; i < n; ++i) g[i] += go[i] * y[i];
            break;
        }
        case OpKind::kSoftmaxLastDim: {
            if (!wants(0)) break;
            const int m = out.shape()[0], n = out.shape()[1];
            const float* y = out.values().data();
            float* g = in[0].grad_mut().data();
            for (int i = 0; i < m; ++i) {
                const float* yi = y + static_cast<std::size_t>(i) * n;
                const float* gi = go + static_cast<std::size_t>(i) * n;
                float dot = 0.f;
                for (int j = 0; j < n; ++j) dot += gi[j] * yi[j];
                float* gx = g + static_cast<std::size_t>(i) * n;
                for (int j = 0; j < n; ++j) gx[j] += yi[j] * (gi[j] - dot);
            }
            break;
        }
        case OpKind::kLogSoftmaxLastDim: {
            if (!wants(0)) break;
            const int m = out.shape()[0], n = out.shape()[1];
            const float* y = out.values().data();
            float* g = in[0].grad_mut().data();
            for (int i = 0; i < m; ++i) {
                const float* yi = y + static_cast<std::size_t>(i) * n;
                const float* gi = go + static_cast<std::size_t>(i) * n;
                float gsum = 0.f;
                for (int j = 0; j < n; ++j) gsum += gi[j];
                float* gx = g + static_cast<std::size_t>(i) * n;
                for (int j = 0; j < n; ++j) gx[j] += gi[j] - std::exp(yi[j]) * gsum;
            }
            break;
        }
        case OpKind::kConcatLastDim: {
            const int m = out.shape()[0];
            const int total = out.shape()[1];
            int off = 0;
            for (auto& t : in) {
                const int c = t.shape()[1];
                if (t.requires_grad()) {
                    float* g = t.grad_mut().data();
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < c; ++j)
                            g[static_cast<std::size_t>(i) * c + j] +=
                                go[static_cast<std::size_t>(i) * total + off + j];
                }
                off += c;
            }
            break;
        }
        case OpKind::kMeanPoolSpatial: {
            if (!wants(0)) break;
            const auto& xs = in[0].shape();
            const int NC = xs[0] * xs[1], HW = xs[2] * xs[3];
            float* g = in[0].grad_mut().data();
            for (int i = 0; i < NC; ++i) {
                const float gv = go[i] / static_cast<float>(HW);
                float* gp = g + static_cast<std::size_t>(i) * HW;
                for (int j = 0; j < HW; ++j) gp[j] += gv;
            }
            break;
        }
        case OpKind::kReshape: {
            if (!wants(0)) break;
            float* g = in[0].grad_mut().data();
            const int n = out.size();
            for (int i = 0; i < n; ++i) g[i] += go[i];
            break;
        }
        case OpKind::kSliceCols: {
            if (!wants(0)) break;
            const int m = in[0].shape()[0], n = in[0].shape()[1], w = a.i1 - a.i0;
            float* g = in[0].grad_mut().data();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < w; ++j)
                    g[static_cast<std::size_t>(i) * n + a.i0 + j] +=
                        go[static_cast<std::size_t>(i) * w + j];
            break;
        }
        case OpKind::kClamp: {
            if (!wants(0)) break;
            const float* x = in[0].values().data();
            float* g = in[0].grad_mut().data();
            const int n = out.size();
            for (int i = 0; i < n; ++i)
                if (x[i] > a.f0 && x[i] < a.f1) g[i] += go[i];
            break;
        }
        case OpKind::kMinimum: {
            const float* x = in[0].values().data();
            const float* y = in[1].values().data();
            const int n = out.size();
            if (wants(0)) {
                float* g = in[0].grad_mut().data();
                for (int i = 0; i < n; ++i)
                    if (x[i] <= y[i]) g[i] += go[i];
            }
            if (wants(1)) {
                float* g = in[1].grad_mut().data();
                for (int i = 0; i < n; ++i)
                    if (x[i] > y[i]) g[i] += go[i];
            }
            break;
        }
        case OpKind::kSumLastDim: {
            if (!wants(0)) break;
            const int m = in[0].shape()[0], n = in[0].shape()[1];
            float* g = in[0].grad_mut().data();
            for (int i = 0; i < m; ++i) {
                const float gv = go[i];
                float* gi = g + static_cast<std::size_t>(i) * n;
                for (int j = 0; j < n; ++j) gi[j] += gv;
            }
            break;
        }
        case OpKind::kSumAll:
        case OpKind::kMeanAll: {
            if (!wants(0)) break;
            const int n = in[0].size();
            const float gv =
                kind == OpKind::kSumAll ? go[0] : go[0] / static_cast<float>(n);
            float* g = in[0].grad_mut().data();
            for (int i = 0; i < n; ++i) g[i] += gv;
            break;
        }
        case OpKind::kScale: {
            if (!wants(0)) break;
            const int n = out.size();
            float* g = in[0].grad_mut().data();
            for (int i = 0; i < n; ++i) g[i] += a.f0 * go[i];
            break;
        }
        case OpKind::kGatherCols: {
            if (!wants(0)) break;
            const int m = in[0].shape()[0], n = in[0].shape()[1];
            float* g = in[0].grad_mut().data();
            for (int i = 0; i < m; ++i)
                g[static_cast<std::size_t>(i) * n + a.indices[i]] += go[i];
            break;
        }
        case OpKind::kCategoricalNll: {
            if (!wants(0)) break;
            const int m = in[0].shape()[0], n = in[0].shape()[1];
            const float* X = in[0].values().data();
            float* g = in[0].grad_mut().data();
            for (int i = 0; i < m; ++i) {
                const float* xi = X + static_cast<std::size_t>(i) * n;
                float mx = xi[0];
                for (int j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
                float denom = 0.f;
                for (int j = 0; j < n; ++j) denom += std::exp(xi[j] - mx);
                float* gi = g + static_cast<std::size_t>(i) * n;
                const float gv = go[i];
                for (int j = 0; j < n; ++j) {
                    const float p = std::exp(xi[j] - mx) / denom;
                    gi[j] += gv * (p - (j == a.indices[i] ? 1.f : 0.f));
                }
            }
            break;
        }
        case OpKind::kBceWithLogits: {
            if (!wants(0)) break;
            const int m = in[0].shape()[0];
            const float* x = in[0].values().data();
            float* g = in[0].grad_mut().data();
            for (int i = 0; i < m; ++i) {
                const float s = 1.f / (1.f + std::exp(-x[i]));
                g[i] += go[i] * (s - a.floats[i]);
            }
            break;
        }
    }
}

double values_norm(const Tensor& t) {
    double acc = 0.0;
    for (float x : t.values()) acc += static_cast<double>(x) * x;
    return std::sqrt(acc);
}

}  // namespace

// ---- Graph ----

Tensor Graph::op_forward(OpKind kind, std::vector<Tensor> inputs, OpAttrs attrs) {
    Shape out_shape = infer_shape(kind, inputs, attrs);
    Tensor out = Tensor::zeros(std::move(out_shape));
    forward_kernel(kind, inputs, out, attrs);

    // NaN/Inf is a hard error: a double accumulator catches any non-finite
    // entry (it propagates into the sum) without a per-element branch.
    double s = 0.0;
    for (float x : out.values()) s += x;
    if (!std::isfinite(s)) {
        std::ostringstream os;
        os << op_name(kind) << ": non-finite output; input norms:";
        for (const auto& t : inputs) os << " " << values_norm(t);
        throw NumericFault(os.str());
    }

    if (grad_enabled_) {
        bool any = false;
        for (const auto& t : inputs) any = any || t.requires_grad();
        if (any) {
            out.set_requires_grad(true);
            tape_.push_back(Step{kind, std::move(inputs), out, std::move(attrs)});
        }
    }
    return out;
}

void Graph::backward(const Tensor& loss) {
    SACF_REQUIRE(loss.defined() && loss.size() == 1, "backward: loss must be scalar");
    if (!tape_.empty()) {
        // seed dLoss/dLoss = 1
        Tensor seed = loss;
        seed.grad_mut()[0] = 1.f;
        for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
            if (!it->out.has_grad()) continue;  // no path from this output to the loss
            backward_kernel(it->kind, it->in, it->out, it->attrs);
        }
    }
    tape_.clear();
}

// ---- wrappers ----

Tensor matmul(Graph& g, const Tensor& a, const Tensor& b) {
    return g.op_forward(OpKind::kMatmul, {a, b});
}
Tensor linear(Graph& g, const Tensor& x, const Tensor& w, const Tensor& b) {
    return g.op_forward(OpKind::kLinear, {x, w, b});
}
Tensor conv2d_valid(Graph& g, const Tensor& x, const Tensor& w, const Tensor& b, int stride) {
    OpAttrs a;
    a.i0 = stride;
    return g.op_forward(OpKind::kConv2dValid, {x, w, b}, std::move(a));
}
Tensor add(Graph& g, const Tensor& a, const Tensor& b) { return g.op_forward(OpKind::kAdd, {a, b}); }
Tensor sub(Graph& g, const Tensor& a, const Tensor& b) { return g.op_forward(OpKind::kSub, {a, b}); }
Tensor mul(Graph& g, const Tensor& a, const Tensor& b) { return g.op_forward(OpKind::kMul, {a, b}); }
Tensor affine_channel_broadcast(Graph& g, const Tensor& x, const Tensor& gamma, const Tensor& beta) {
    return g.op_forward(OpKind::kAffineChannelBroadcast, {x, gamma, beta});
}
Tensor relu(Graph& g, const Tensor& x) { return g.op_forward(OpKind::kRelu, {x}); }
Tensor tanh_op(Graph& g, const Tensor& x) { return g.op_forward(OpKind::kTanh, {x}); }
Tensor sigmoid(Graph& g, const Tensor& x) { return g.op_forward(OpKind::kSigmoid, {x}); }
Tensor sin_op(Graph& g, const Tensor& x) { return g.op_forward(OpKind::kSin, {x}); }
Tensor cos_op(Graph& g, const Tensor& x) { return g.op_forward(OpKind::kCos, {x}); }
Tensor exp_op(Graph& g, const Tensor& x) { return g.op_forward(OpKind::kExp, {x}); }
Tensor softmax_lastdim(Graph& g, const Tensor& x) {
    return g.op_forward(OpKind::kSoftmaxLastDim, {x});
}
Tensor log_softmax_lastdim(Graph& g, const Tensor& x) {
    return g.op_forward(OpKind::kLogSoftmaxLastDim, {x});
}
Tensor concat_lastdim(Graph& g, std::vector<Tensor> xs) {
    return g.op_forward(OpKind::kConcatLastDim, std::move(xs));
}
Tensor mean_pool_spatial(Graph& g, const Tensor& x) {
    return g.op_forward(OpKind::kMeanPoolSpatial, {x});
}
Tensor reshape(Graph& g, const Tensor& x, Shape target) {
    OpAttrs a;
    a.target_shape = std::move(target);
    return g.op_forward(OpKind::kReshape, {x}, std::move(a));
}
Tensor slice_cols(Graph& g, const Tensor& x, int c0, int c1) {
    OpAttrs a;
    a.i0 = c0;
    a.i1 = c1;
    return g.op_forward(OpKind::kSliceCols, {x}, std::move(a));
}
Tensor clamp(Graph& g, const Tensor& x, float lo, float hi) {
    OpAttrs a;
    a.f0 = lo;
    a.f1 = hi;
    return g.op_forward(OpKind::kClamp, {x}, std::move(a));
}
Tensor minimum(Graph& g, const Tensor& a, const Tensor& b) {
    return g.op_forward(OpKind::kMinimum, {a, b});
}
Tensor sum_lastdim(Graph& g, const Tensor& x) { return g.op_forward(OpKind::kSumLastDim, {x}); }
Tensor sum_all(Graph& g, const Tensor& x) { return g.op_forward(OpKind::kSumAll, {x}); }
Tensor mean_all(Graph& g, const Tensor& x) { return g.op_forward(OpKind::kMeanAll, {x}); }
Tensor scale(Graph& g, const Tensor& x, float a, float b) {
    OpAttrs at;
    at.f0 = a;
    at.f1 = b;
    return g.op_forward(OpKind::kScale, {x}, std::move(at));
}
Tensor gather_cols(Graph& g, const Tensor& x, std::vector<int> indices) {
    OpAttrs a;
    a.indices = std::move(indices);
    return g.op_forward(OpKind::kGatherCols, {x}, std::move(a));
}
Tensor categorical_nll(Graph& g, const Tensor& logits, std::vector<int> targets) {
    OpAttrs a;
    a.indices = std::move(targets);
    return g.op_forward(OpKind::kCategoricalNll, {logits}, std::move(a));
}
Tensor bce_with_logits(Graph& g, const Tensor& logit, std::vector<float> targets) {
    OpAttrs a;
    a.floats = std::move(targets);
    return g.op_forward(OpKind::kBceWithLogits, {logit}, std::move(a));
}

// ---- finite differences ----

namespace {

float eval_scalar(const std::function<Tensor(Graph&)>& f) {
    Graph g;
    Graph::NoGradScope ng(g);
    Tensor out = f(g);
    SACF_REQUIRE(out.size() == 1, "finite_difference_check: f must be scalar-valued");
    return out.scalar_value();
}

float fd_loop(const std::function<Tensor(Graph&)>& f, std::span<Tensor> params,
              std::span<const std::vector<float>> analytic, const FdCheckOptions& opts) {
    SACF_REQUIRE(opts.h > 0.f, "finite_difference_check: h must be > 0");
    const float base0 = eval_scalar(f);
    const float base1 = eval_scalar(f);
    SACF_REQUIRE(base0 == base1, "finite_difference_check: f is not deterministic");

    Rng rng(opts.seed ^ 0x5fd1ce5u);
    float max_err = 0.f;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = params[pi];
        const int n = p.size();
        std::vector<int> coords;
        if (n <= opts.max_coords_per_param) {
            coords.resize(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
        } else {
            for (int i = 0; i < opts.max_coords_per_param; ++i)
                coords.push_back(rng.uniform_int(0, n));
        }
        for (int c : coords) {
            float* v = &p.values_mut()[static_cast<std::size_t>(c)];
            const float keep = *v;
            *v = keep + opts.h;
            const float fp = eval_scalar(f);
            *v = keep - opts.h;
            const float fm = eval_scalar(f);
            *v = keep;
            const float cd = (fp - fm) / (2.f * opts.h);
            const float an = analytic[pi][static_cast<std::size_t>(c)];
            const float err = std::abs(an - cd) / std::max(1.f, std::abs(cd));
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

}  // namespace

float fd_max_rel_error(const std::function<Tensor(Graph&)>& f, std::span<Tensor> params,
                       std::span<const std::vector<float>> analytic, FdCheckOptions opts) {
    return fd_loop(f, params, analytic, opts);
}

float finite_difference_check(const std::function<Tensor(Graph&)>& f, std::span<Tensor> params,
                              FdCheckOptions opts) {
    for (auto& p : params) {
        p.set_requires_grad(true);
        p.clear_grad();
    }
    Graph g;
    Tensor out = f(g);
    SACF_REQUIRE(out.size() == 1, "finite_difference_check: f must be scalar-valued");
    g.backward(out);

    std::vector<std::vector<float>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) {
        if (p.has_grad())
            analytic.emplace_back(p.grad().begin(), p.grad().end());
        else
            analytic.emplace_back(static_cast<std::size_t>(p.size()), 0.f);
    }
    return fd_loop(f, params, analytic, opts);
}

}  // namespace sacf::ad
