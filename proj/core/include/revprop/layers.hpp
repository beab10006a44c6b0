#pragma once

#include <cstddef>
#include <optional>
#include <utility>

#include "revprop/ops.hpp"
#include "revprop/tensor.hpp"

/// The two sublayer functions coupled by a reversible block -- attention
/// (F) and MLP (G) -- plus the stage-boundary layers of the hierarchical
/// model. Neither sublayer carries a residual connection: the additive
/// identity path lives in the coupling, not here. With all parameters
/// zero both sublayers are exactly the zero map.
namespace revprop {

/// LayerNorm epsilon used by both sublayers (pre-norm placement).
inline constexpr double kLayerNormEps = 1e-5;

// ----- evaluation counters (test instrumentation) -----

struct EvalCounters {
  std::size_t attention_forward = 0;
  std::size_t mlp_forward = 0;
  std::size_t attention_vjp = 0;
  std::size_t mlp_vjp = 0;
};

/// Installs a thread-local counter sink for the lifetime of the scope.
class EvalCounterScope {
 public:
  explicit EvalCounterScope(EvalCounters& sink);
  ~EvalCounterScope();
  EvalCounterScope(const EvalCounterScope&) = delete;
  EvalCounterScope& operator=(const EvalCounterScope&) = delete;

 private:
  EvalCounters* previous_;
};

// ----- attention sublayer (F) -----

struct AttentionParams {
  Tensor w_qkv;    // [d, 3d], no bias
  Tensor w_out;    // [d, d], no bias
  Tensor ln_gamma; // [d]
  Tensor ln_beta;  // [d]
  std::size_t heads = 1;
  std::optional<std::size_t> window;  // tokens per attention window; unset = full

  std::size_t width() const { return w_qkv.dim(0); }
};

struct AttentionCache {
  ops::LayerNormCache ln;
  Tensor h;      // normalized input, [B, N, d]
  Tensor q, k, v;
  Tensor probs;  // [B, heads, windows, W, W]
  Tensor att;    // head outputs before the output projection, [B, N, d]

  std::size_t byte_size() const {
    return ln.byte_size() + h.byte_size() + q.byte_size() + k.byte_size() + v.byte_size() +
           probs.byte_size() + att.byte_size();
  }
};

struct AttentionGrads {
  Tensor d_w_qkv;
  Tensor d_w_out;
  Tensor d_ln_gamma;
  Tensor d_ln_beta;
};

struct AttentionForward {
  Tensor y;
  AttentionCache cache;
};

/// y = Proj(MultiHeadSelfAttn(LayerNorm(x))). When `window` is set the
/// attention is computed independently per contiguous token window;
/// window == N is the full-attention path (same code, one window).
AttentionForward attention_forward(const Tensor& x, const AttentionParams& p);

struct AttentionVjp {
  Tensor d_x;
  AttentionGrads d_params;
};

AttentionVjp attention_vjp(const AttentionCache& cache, const AttentionParams& p,
                           const Tensor& d_y);

// ----- MLP sublayer (G) -----

struct MlpParams {
  Tensor w1;       // [d, h]
  Tensor b1;       // [h]
  Tensor w2;       // [h, d]
  Tensor b2;       // [d]
  Tensor ln_gamma; // [d]
  Tensor ln_beta;  // [d]

  std::size_t width() const { return w1.dim(0); }
};

struct MlpCache {
  ops::LayerNormCache ln;
  Tensor h;  // normalized input
  Tensor u;  // pre-activation
  Tensor a;  // gelu(u)

  std::size_t byte_size() const {
    return ln.byte_size() + h.byte_size() + u.byte_size() + a.byte_size();
  }
};

struct MlpGrads {
  Tensor d_w1;
  Tensor d_b1;
  Tensor d_w2;
  Tensor d_b2;
  Tensor d_ln_gamma;
  Tensor d_ln_beta;
};

struct MlpForward {
  Tensor y;
  MlpCache cache;
};

/// y = W2 * gelu(W1 * LayerNorm(x) + b1) + b2.
MlpForward mlp_forward(const Tensor& x, const MlpParams& p);

struct MlpVjp {
  Tensor d_x;
  MlpGrads d_params;
};

MlpVjp mlp_vjp(const MlpCache& cache, const MlpParams& p, const Tensor& d_y);

// ----- stage boundary (fusion + patch merging) -----

enum class FusionKind { average, mlp };

struct BoundaryParams {
  Tensor merge_w;                  // [(r*d), d_next]
  FusionKind fusion_kind = FusionKind::average;
  std::optional<Tensor> fusion_w;  // [2d, d], present iff fusion_kind == mlp
  std::size_t reduction = 2;       // r: tokens merged per group
};

struct PatchMergeResult {
  Tensor y;        // [B, N/r, d_next]
  Tensor grouped;  // [B, N/r, r*d], kept for the merge_w cotangent
};

/// Concatenate each group of r adjacent tokens, then project by merge_w.
PatchMergeResult patch_merge(const Tensor& x, const BoundaryParams& p);

struct PatchMergeVjp {
  Tensor d_x;
  Tensor d_merge_w;
};

PatchMergeVjp patch_merge_vjp(const Tensor& grouped, const BoundaryParams& p, const Tensor& d_y);

struct FuseResult {
  Tensor y;
  Tensor concat;  // [B, N, 2d]; defined only for the mlp kind
};

/// average: (i1 + i2) / 2. mlp: Proj(concat(i1, i2)) by fusion_w.
FuseResult fuse(const Tensor& i1, const Tensor& i2, const BoundaryParams& p);

struct FuseVjp {
  Tensor d_i1;
  Tensor d_i2;
  std::optional<Tensor> d_fusion_w;  // present for the mlp kind
};

FuseVjp fuse_vjp(const FuseResult& cache, const BoundaryParams& p, const Tensor& d_y);

}  // namespace revprop
