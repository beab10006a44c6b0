#include "revprop/layers.hpp"

#include <cmath>
#include <string>

#include "revprop/errors.hpp"

namespace revprop {

namespace {

thread_local EvalCounters* g_eval_counters = nullptr;

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

template <class T>
Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  const std::size_t cols = x.dim(x.rank() - 1);
  require(v.rank() == 1 && v.dim(0) == cols, "bias length does not match last dim");
  Tensor out = x;
  auto vo = out.values<T>();
  auto vv = v.values<T>();
  const std::size_t rows = x.numel() / cols;
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = vo.data() + r * cols;
    for (std::size_t j = 0; j < cols; ++j) row[j] += vv[j];
  }
  return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  if (x.dtype() == Dtype::f32) return add_rowvec<float>(x, v);
  return add_rowvec<double>(x, v);
}

Tensor col_sum(const Tensor& x) {
  const std::size_t cols = x.dim(x.rank() - 1);
  const std::size_t rows = x.numel() / cols;
  Tensor out = Tensor::zeros({cols}, x.dtype());
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto vx = x.values<T>();
    auto vo = out.values<T>();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* row = vx.data() + r * cols;
      for (std::size_t j = 0; j < cols; ++j) vo[j] += row[j];
    }
  });
  return out;
}

/// Copy rows [t0, t0+rows) x cols [c0, c0+cols) of a [B, N, d] tensor
/// into a fresh [rows, cols] matrix.
Tensor gather_block(const Tensor& src, std::size_t b, std::size_t t0, std::size_t rows,
                    std::size_t c0, std::size_t cols) {
  const std::size_t n = src.dim(1), d = src.dim(2);
  Tensor out = Tensor::zeros({rows, cols}, src.dtype());
  dispatch_dtype(src.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto vs = src.values<T>();
    auto vo = out.values<T>();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* srow = vs.data() + ((b * n + t0 + r) * d + c0);
      std::copy_n(srow, cols, vo.data() + r * cols);
    }
  });
  return out;
}

void scatter_block(Tensor& dst, const Tensor& blk, std::size_t b, std::size_t t0,
                   std::size_t c0) {
  const std::size_t n = dst.dim(1), d = dst.dim(2);
  const std::size_t rows = blk.dim(0), cols = blk.dim(1);
  dispatch_dtype(dst.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto vd = dst.values<T>();
    auto vb = blk.values<T>();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(vb.data() + r * cols, cols, vd.data() + ((b * n + t0 + r) * d + c0));
    }
  });
}

Tensor probs_block(const Tensor& probs, std::size_t flat_window, std::size_t w) {
  Tensor out = Tensor::zeros({w, w}, probs.dtype());
  dispatch_dtype(probs.dtype(), [&](auto tag) {
    using T = decltype(tag);
    std::copy_n(probs.values<T>().data() + flat_window * w * w, w * w, out.values<T>().data());
  });
  return out;
}

void probs_store(Tensor& probs, const Tensor& blk, std::size_t flat_window, std::size_t w) {
  dispatch_dtype(probs.dtype(), [&](auto tag) {
    using T = decltype(tag);
    std::copy_n(blk.values<T>().data(), w * w, probs.values<T>().data() + flat_window * w * w);
  });
}

struct AttentionShape {
  std::size_t b, n, d, heads, head_dim, window, n_windows;
};

AttentionShape attention_shape(const Tensor& x, const AttentionParams& p) {
  require(x.rank() == 3, "attention: expected [B, N, d] input");
  AttentionShape s{};
  s.b = x.dim(0);
  s.n = x.dim(1);
  s.d = x.dim(2);
  require(p.w_qkv.rank() == 2 && p.w_qkv.dim(0) == s.d && p.w_qkv.dim(1) == 3 * s.d,
          "attention: w_qkv must be [d, 3d]");
  require(p.w_out.rank() == 2 && p.w_out.dim(0) == s.d && p.w_out.dim(1) == s.d,
          "attention: w_out must be [d, d]");
  require(p.heads >= 1 && s.d % p.heads == 0, "attention: width not divisible by heads");
  s.heads = p.heads;
  s.head_dim = s.d / p.heads;
  s.window = p.window.value_or(s.n);
  require(s.window >= 1 && s.n % s.window == 0,
          "attention: sequence length not divisible by window");
  s.n_windows = s.n / s.window;
  return s;
}

}  // namespace

EvalCounterScope::EvalCounterScope(EvalCounters& sink) : previous_(g_eval_counters) {
  g_eval_counters = &sink;
}

EvalCounterScope::~EvalCounterScope() { g_eval_counters = previous_; }

AttentionForward attention_forward(const Tensor& x, const AttentionParams& p) {
  if (g_eval_counters) ++g_eval_counters->attention_forward;
  const AttentionShape s = attention_shape(x, p);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(s.head_dim));

  auto ln = ops::layer_norm(x, p.ln_gamma, p.ln_beta, kLayerNormEps);
  Tensor qkv = ops::matmul(ln.y, p.w_qkv);
  AttentionCache cache;
  cache.ln = std::move(ln.cache);
  cache.h = std::move(ln.y);
  cache.q = ops::slice_last(qkv, 0, s.d);
  cache.k = ops::slice_last(qkv, s.d, s.d);
  cache.v = ops::slice_last(qkv, 2 * s.d, s.d);
  cache.probs = Tensor::zeros({s.b, s.heads, s.n_windows, s.window, s.window}, x.dtype());
  cache.att = Tensor::zeros_like(x);

  std::size_t flat = 0;
  for (std::size_t b = 0; b < s.b; ++b) {
    for (std::size_t hd = 0; hd < s.heads; ++hd) {
      for (std::size_t w = 0; w < s.n_windows; ++w, ++flat) {
        const std::size_t t0 = w * s.window;
        const std::size_t c0 = hd * s.head_dim;
        Tensor qh = gather_block(cache.q, b, t0, s.window, c0, s.head_dim);
        Tensor kh = gather_block(cache.k, b, t0, s.window, c0, s.head_dim);
        Tensor vh = gather_block(cache.v, b, t0, s.window, c0, s.head_dim);
        Tensor scores = ops::scale(ops::matmul_nt(qh, kh), inv_sqrt);
        Tensor a = ops::row_softmax(scores);
        probs_store(cache.probs, a, flat, s.window);
        Tensor oh = ops::matmul(a, vh);
        scatter_block(cache.att, oh, b, t0, c0);
      }
    }
  }
  Tensor y = ops::matmul(cache.att, p.w_out);
  return AttentionForward{std::move(y), std::move(cache)};
}

AttentionVjp attention_vjp(const AttentionCache& cache, const AttentionParams& p,
                           const Tensor& d_y) {
  if (g_eval_counters) ++g_eval_counters->attention_vjp;
  require(cache.att.same_shape(d_y), "attention_vjp: cotangent shape mismatch with cache");
  const AttentionShape s = attention_shape(cache.att, p);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(s.head_dim));

  Tensor d_att = ops::matmul_nt(d_y, p.w_out);
  Tensor d_w_out = ops::matmul_tn(cache.att, d_y);

  Tensor d_q = Tensor::zeros_like(cache.q);
  Tensor d_k = Tensor::zeros_like(cache.k);
  Tensor d_v = Tensor::zeros_like(cache.v);

  std::size_t flat = 0;
  for (std::size_t b = 0; b < s.b; ++b) {
    for (std::size_t hd = 0; hd < s.heads; ++hd) {
      for (std::size_t w = 0; w < s.n_windows; ++w, ++flat) {
        const std::size_t t0 = w * s.window;
        const std::size_t c0 = hd * s.head_dim;
        Tensor d_oh = gather_block(d_att, b, t0, s.window, c0, s.head_dim);
        Tensor a = probs_block(cache.probs, flat, s.window);
        Tensor qh = gather_block(cache.q, b, t0, s.window, c0, s.head_dim);
        Tensor kh = gather_block(cache.k, b, t0, s.window, c0, s.head_dim);
        Tensor vh = gather_block(cache.v, b, t0, s.window, c0, s.head_dim);

        Tensor d_a = ops::matmul_nt(d_oh, vh);
        Tensor d_vh = ops::matmul_tn(a, d_oh);
        Tensor d_scores = ops::scale(ops::row_softmax_vjp({std::move(a)}, d_a), inv_sqrt);
        Tensor d_qh = ops::matmul(d_scores, kh);
        Tensor d_kh = ops::matmul_tn(d_scores, qh);

        scatter_block(d_q, d_qh, b, t0, c0);
        scatter_block(d_k, d_kh, b, t0, c0);
        scatter_block(d_v, d_vh, b, t0, c0);
      }
    }
  }

  Tensor d_qkv = ops::concat_last({&d_q, &d_k, &d_v});
  Tensor d_h = ops::matmul_nt(d_qkv, p.w_qkv);
  Tensor d_w_qkv = ops::matmul_tn(cache.h, d_qkv);
  auto ln = ops::layer_norm_vjp(cache.ln, p.ln_gamma, d_h);

  AttentionVjp out;
  out.d_x = std::move(ln.d_x);
  out.d_params = AttentionGrads{std::move(d_w_qkv), std::move(d_w_out), std::move(ln.d_gamma),
                                std::move(ln.d_beta)};
  return out;
}

MlpForward mlp_forward(const Tensor& x, const MlpParams& p) {
  if (g_eval_counters) ++g_eval_counters->mlp_forward;
  require(x.rank() >= 2, "mlp: expected at least rank-2 input");
  const std::size_t d = x.dim(x.rank() - 1);
  require(p.w1.rank() == 2 && p.w1.dim(0) == d, "mlp: w1 must be [d, h]");
  const std::size_t h = p.w1.dim(1);
  require(p.w2.rank() == 2 && p.w2.dim(0) == h && p.w2.dim(1) == d, "mlp: w2 must be [h, d]");

  auto ln = ops::layer_norm(x, p.ln_gamma, p.ln_beta, kLayerNormEps);
  Tensor u = add_rowvec(ops::matmul(ln.y, p.w1), p.b1);
  Tensor a = ops::gelu(u);
  Tensor y = add_rowvec(ops::matmul(a, p.w2), p.b2);

  MlpForward out;
  out.cache = MlpCache{std::move(ln.cache), std::move(ln.y), std::move(u), std::move(a)};
  out.y = std::move(y);
  return out;
}

MlpVjp mlp_vjp(const MlpCache& cache, const MlpParams& p, const Tensor& d_y) {
  if (g_eval_counters) ++g_eval_counters->mlp_vjp;
  require(cache.h.dims() == d_y.dims(), "mlp_vjp: cotangent shape mismatch with cache");

  Tensor d_a = ops::matmul_nt(d_y, p.w2);
  Tensor d_w2 = ops::matmul_tn(cache.a, d_y);
  Tensor d_b2 = col_sum(d_y);
  Tensor d_u = ops::gelu_vjp({cache.u}, d_a);
  Tensor d_h = ops::matmul_nt(d_u, p.w1);
  Tensor d_w1 = ops::matmul_tn(cache.h, d_u);
  Tensor d_b1 = col_sum(d_u);
  auto ln = ops::layer_norm_vjp(cache.ln, p.ln_gamma, d_h);

  MlpVjp out;
  out.d_x = std::move(ln.d_x);
  out.d_params = MlpGrads{std::move(d_w1), std::move(d_b1), std::move(d_w2), std::move(d_b2),
                          std::move(ln.d_gamma), std::move(ln.d_beta)};
  return out;
}

PatchMergeResult patch_merge(const Tensor& x, const BoundaryParams& p) {
  Tensor grouped = ops::group_tokens(x, p.reduction);
  require(p.merge_w.rank() == 2 && p.merge_w.dim(0) == grouped.dim(2),
          "patch_merge: merge_w must be [r*d, d_next]");
  Tensor y = ops::matmul(grouped, p.merge_w);
  return PatchMergeResult{std::move(y), std::move(grouped)};
}

PatchMergeVjp patch_merge_vjp(const Tensor& grouped, const BoundaryParams& p, const Tensor& d_y) {
  Tensor d_grouped = ops::matmul_nt(d_y, p.merge_w);
  Tensor d_x = ops::ungroup_tokens(std::move(d_grouped), p.reduction);
  Tensor d_merge_w = ops::matmul_tn(grouped, d_y);
  return PatchMergeVjp{std::move(d_x), std::move(d_merge_w)};
}

FuseResult fuse(const Tensor& i1, const Tensor& i2, const BoundaryParams& p) {
  require(i1.same_shape(i2), "fuse: inputs must share shape and dtype");
  if (p.fusion_kind == FusionKind::average) {
    return FuseResult{ops::scale(ops::add(i1, i2), 0.5), Tensor{}};
  }
  if (!p.fusion_w.has_value()) {
    throw ContractError("fuse: mlp fusion requires fusion_w");
  }
  Tensor concat = ops::concat_last({&i1, &i2});
  Tensor y = ops::matmul(concat, *p.fusion_w);
  return FuseResult{std::move(y), std::move(concat)};
}

FuseVjp fuse_vjp(const FuseResult& cache, const BoundaryParams& p, const Tensor& d_y) {
  if (p.fusion_kind == FusionKind::average) {
    Tensor half = ops::scale(d_y, 0.5);
    return FuseVjp{half, std::move(half), std::nullopt};
  }
  if (!p.fusion_w.has_value()) {
    throw ContractError("fuse_vjp: mlp fusion requires fusion_w");
  }
  const std::size_t d = d_y.dim(d_y.rank() - 1);
  Tensor d_concat = ops::matmul_nt(d_y, *p.fusion_w);
  Tensor d_i1 = ops::slice_last(d_concat, 0, d);
  Tensor d_i2 = ops::slice_last(d_concat, d, d);
  Tensor d_fusion_w = ops::matmul_tn(cache.concat, d_y);
  return FuseVjp{std::move(d_i1), std::move(d_i2), std::move(d_fusion_w)};
}

}  // namespace revprop
