#pragma once

#include <cstddef>
#include <vector>

#include "revprop/rng.hpp"
#include "revprop/tensor.hpp"

/// Deterministic dense kernels plus their vector-Jacobian products.
///
/// Every reduction accumulates left-to-right over the inner index (and
/// the core library is built with FP contraction off), so repeated calls
/// on identical inputs are bit-identical. Callers that need reverse-mode
/// cotangents keep the per-primitive cache from the forward call and
/// hand it to the matching *_vjp function.
namespace revprop::ops {

// ----- element-wise -----

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// dst += src; dst must be exclusively owned by the caller.
void accumulate(Tensor& dst, const Tensor& src);

// ----- matmul family (fixed left-to-right accumulation over the inner dim) -----

/// a [..., k] x b [k, n] -> [..., n]; leading dims of `a` are flattened.
Tensor matmul(const Tensor& a, const Tensor& b);
/// a^T b: a [..., m], b [..., n] with equal flattened row counts -> [m, n].
Tensor matmul_tn(const Tensor& a, const Tensor& b);
/// a b^T: a [..., k] x b [n, k] -> [..., n].
Tensor matmul_nt(const Tensor& a, const Tensor& b);

struct MatmulCache {
  Tensor a;
  Tensor b;
  std::size_t byte_size() const { return a.byte_size() + b.byte_size(); }
};
struct MatmulVjp {
  Tensor d_a;
  Tensor d_b;
};
MatmulVjp matmul_vjp(const MatmulCache& cache, const Tensor& d_out);

// ----- softmax over the last dim -----

Tensor row_softmax(const Tensor& x);

struct SoftmaxCache {
  Tensor y;  // forward output
  std::size_t byte_size() const { return y.byte_size(); }
};
Tensor row_softmax_vjp(const SoftmaxCache& cache, const Tensor& d_out);

// ----- GELU (tanh approximation) -----
//
//   gelu(x) = 0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 * x^3)))
//
// The same closed form backs both the forward and the VJP.

Tensor gelu(const Tensor& x);

struct GeluCache {
  Tensor x;  // forward input
  std::size_t byte_size() const { return x.byte_size(); }
};
Tensor gelu_vjp(const GeluCache& cache, const Tensor& d_out);

// ----- layer norm over the last dim (population variance) -----

struct LayerNormCache {
  Tensor x_hat;    // normalized input, same shape as x
  Tensor inv_std;  // 1/sqrt(var + eps) per row
  std::size_t byte_size() const { return x_hat.byte_size() + inv_std.byte_size(); }
};
struct LayerNormResult {
  Tensor y;
  LayerNormCache cache;
};
LayerNormResult layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

struct LayerNormVjp {
  Tensor d_x;
  Tensor d_gamma;
  Tensor d_beta;
};
LayerNormVjp layer_norm_vjp(const LayerNormCache& cache, const Tensor& gamma, const Tensor& d_out);

// ----- shape helpers -----

/// Copy of columns [offset, offset+len) of the last dim.
Tensor slice_last(const Tensor& x, std::size_t offset, std::size_t len);
/// Concatenate along the last dim; all parts share leading dims.
Tensor concat_last(const std::vector<const Tensor*>& parts);
/// [B, N, d] -> [B, N/r, r*d]: adjacent token groups concatenated.
Tensor group_tokens(const Tensor& x, std::size_t r);
/// Inverse of group_tokens.
Tensor ungroup_tokens(const Tensor& x, std::size_t r);
/// [B, N, d] -> [B, d] mean over tokens.
Tensor mean_tokens(const Tensor& x);
/// VJP of mean_tokens: [B, d] -> [B, N, d], each token gets d/N.
Tensor spread_tokens(const Tensor& d_pooled, std::size_t n_tokens);

// ----- random fills -----

Tensor randn(std::vector<std::size_t> dims, Dtype dt, Rng& rng, double sigma = 1.0);
Tensor trunc_normal(std::vector<std::size_t> dims, Dtype dt, Rng& rng, double sigma);

// ----- numeric summaries -----

double max_abs(const Tensor& a);
/// max_i |a_i - b_i| / max(max_abs(b), floor); shapes must match.
double max_rel_diff(const Tensor& a, const Tensor& b, double floor = 1e-30);

}  // namespace revprop::ops
