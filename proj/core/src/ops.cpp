#include "revprop/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace revprop::ops {

namespace {

constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluCubic = 0.044715;

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

std::string dims_str(const Tensor& t) {
  std::string s = "[";
  for (std::size_t i = 0; i < t.rank(); ++i) {
    if (i) s += "x";
    s += std::to_string(t.dim(i));
  }
  return s + "]";
}

struct RowView {
  std::size_t rows;
  std::size_t cols;
};

RowView as_rows(const Tensor& t) {
  require(t.rank() >= 1 && t.numel() > 0, "expected a non-empty tensor");
  const std::size_t cols = t.dim(t.rank() - 1);
  return {t.numel() / cols, cols};
}

template <class T, class F>
Tensor zip_elementwise(const Tensor& a, const Tensor& b, F&& f) {
  Tensor out = Tensor::zeros_like(a);
  auto va = a.values<T>();
  auto vb = b.values<T>();
  auto vo = out.values<T>();
  for (std::size_t i = 0; i < va.size(); ++i) vo[i] = f(va[i], vb[i]);
  return out;
}

template <class T>
void matmul_kernel(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
                   std::size_t k, std::size_t n) {
  // ikj order: each c[i,j] accumulates over kk in ascending order, which
  // keeps the result identical to the textbook ijk loop bit for bit.
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c.data() + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T aik = a[i * k + kk];
      const T* bk = b.data() + kk * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
    }
  }
}

template <class T>
void matmul_tn_kernel(std::span<const T> a, std::span<const T> b, std::span<T> c,
                      std::size_t rows, std::size_t m, std::size_t n) {
  // c[i,j] = sum_r a[r,i] * b[r,j], ascending r.
  for (std::size_t r = 0; r < rows; ++r) {
    const T* ar = a.data() + r * m;
    const T* br = b.data() + r * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T ari = ar[i];
      T* ci = c.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += ari * br[j];
    }
  }
}

template <class T>
void matmul_nt_kernel(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
                      std::size_t k, std::size_t n) {
  // c[i,j] = sum_kk a[i,kk] * b[j,kk], ascending kk.
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a.data() + i * k;
    T* ci = c.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const T* bj = b.data() + j * k;
      T acc = T(0);
      for (std::size_t kk = 0; kk < k; ++kk) acc += ai[kk] * bj[kk];
      ci[j] = acc;
    }
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "add: shape/dtype mismatch " + dims_str(a) + " vs " + dims_str(b));
  if (a.dtype() == Dtype::f32) return zip_elementwise<float>(a, b, [](float x, float y) { return x + y; });
  return zip_elementwise<double>(a, b, [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "sub: shape/dtype mismatch " + dims_str(a) + " vs " + dims_str(b));
  if (a.dtype() == Dtype::f32) return zip_elementwise<float>(a, b, [](float x, float y) { return x - y; });
  return zip_elementwise<double>(a, b, [](double x, double y) { return x - y; });
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = Tensor::zeros_like(a);
  dispatch_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto va = a.values<T>();
    auto vo = out.values<T>();
    const T st = static_cast<T>(s);
    for (std::size_t i = 0; i < va.size(); ++i) vo[i] = va[i] * st;
  });
  return out;
}

void accumulate(Tensor& dst, const Tensor& src) {
  require(dst.same_shape(src), "accumulate: shape/dtype mismatch");
  dispatch_dtype(dst.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto vd = dst.values<T>();
    auto vs = src.values<T>();
    for (std::size_t i = 0; i < vd.size(); ++i) vd[i] += vs[i];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(b.rank() == 2, "matmul: rhs must be rank 2, got " + dims_str(b));
  require(a.dtype() == b.dtype(), "matmul: dtype mismatch");
  const auto [m, k] = as_rows(a);
  require(k == b.dim(0), "matmul: inner dims disagree " + dims_str(a) + " vs " + dims_str(b));
  const std::size_t n = b.dim(1);
  std::vector<std::size_t> out_dims(a.dims().begin(), a.dims().end() - 1);
  out_dims.push_back(n);
  Tensor c = Tensor::zeros(std::move(out_dims), a.dtype());
  dispatch_dtype(a.dtype(), [&, m = m, k = k](auto tag) {
    using T = decltype(tag);
    matmul_kernel<T>(a.values<T>(), b.values<T>(), c.values<T>(), m, k, n);
  });
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require(a.dtype() == b.dtype(), "matmul_tn: dtype mismatch");
  const auto [ra, m] = as_rows(a);
  const auto [rb, n] = as_rows(b);
  require(ra == rb, "matmul_tn: row counts disagree " + dims_str(a) + " vs " + dims_str(b));
  Tensor c = Tensor::zeros({m, n}, a.dtype());
  dispatch_dtype(a.dtype(), [&, ra = ra, m = m, n = n](auto tag) {
    using T = decltype(tag);
    matmul_tn_kernel<T>(a.values<T>(), b.values<T>(), c.values<T>(), ra, m, n);
  });
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require(b.rank() == 2, "matmul_nt: rhs must be rank 2, got " + dims_str(b));
  require(a.dtype() == b.dtype(), "matmul_nt: dtype mismatch");
  const auto [m, k] = as_rows(a);
  require(k == b.dim(1), "matmul_nt: inner dims disagree " + dims_str(a) + " vs " + dims_str(b));
  const std::size_t n = b.dim(0);
  std::vector<std::size_t> out_dims(a.dims().begin(), a.dims().end() - 1);
  out_dims.push_back(n);
  Tensor c = Tensor::zeros(std::move(out_dims), a.dtype());
  dispatch_dtype(a.dtype(), [&, m = m, k = k](auto tag) {
    using T = decltype(tag);
    matmul_nt_kernel<T>(a.values<T>(), b.values<T>(), c.values<T>(), m, k, n);
  });
  return c;
}

MatmulVjp matmul_vjp(const MatmulCache& cache, const Tensor& d_out) {
  const auto [m, k] = as_rows(cache.a);
  require(d_out.rank() >= 1 && d_out.numel() == m * cache.b.dim(1),
          "matmul_vjp: cotangent shape does not match the cached forward");
  return MatmulVjp{matmul_nt(d_out, cache.b), matmul_tn(cache.a, d_out)};
}

Tensor row_softmax(const Tensor& x) {
  const auto [rows, cols] = as_rows(x);
  Tensor out = Tensor::zeros_like(x);
  dispatch_dtype(x.dtype(), [&, rows = rows, cols = cols](auto tag) {
    using T = decltype(tag);
    auto vx = x.values<T>();
    auto vo = out.values<T>();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xr = vx.data() + r * cols;
      T* yr = vo.data() + r * cols;
      T mx = xr[0];
      for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
      T sum = T(0);
      for (std::size_t j = 0; j < cols; ++j) {
        yr[j] = std::exp(xr[j] - mx);
        sum += yr[j];
      }
      const T inv = T(1) / sum;
      for (std::size_t j = 0; j < cols; ++j) yr[j] *= inv;
    }
  });
  return out;
}

Tensor row_softmax_vjp(const SoftmaxCache& cache, const Tensor& d_out) {
  require(cache.y.same_shape(d_out), "row_softmax_vjp: cotangent shape mismatch");
  const auto [rows, cols] = as_rows(cache.y);
  Tensor dx = Tensor::zeros_like(cache.y);
  dispatch_dtype(cache.y.dtype(), [&, rows = rows, cols = cols](auto tag) {
    using T = decltype(tag);
    auto vy = cache.y.values<T>();
    auto vd = d_out.values<T>();
    auto vo = dx.values<T>();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* yr = vy.data() + r * cols;
      const T* dr = vd.data() + r * cols;
      T* xr = vo.data() + r * cols;
      T dot = T(0);
      for (std::size_t j = 0; j < cols; ++j) dot += yr[j] * dr[j];
      for (std::size_t j = 0; j < cols; ++j) xr[j] = yr[j] * (dr[j] - dot);
    }
  });
  return dx;
}

Tensor gelu(const Tensor& x) {
  Tensor out = Tensor::zeros_like(x);
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto vx = x.values<T>();
    auto vo = out.values<T>();
    const T c = static_cast<T>(kGeluScale);
    const T a = static_cast<T>(kGeluCubic);
    for (std::size_t i = 0; i < vx.size(); ++i) {
      const T v = vx[i];
      vo[i] = T(0.5) * v * (T(1) + std::tanh(c * (v + a * v * v * v)));
    }
  });
  return out;
}

Tensor gelu_vjp(const GeluCache& cache, const Tensor& d_out) {
  require(cache.x.same_shape(d_out), "gelu_vjp: cotangent shape mismatch");
  Tensor dx = Tensor::zeros_like(cache.x);
  dispatch_dtype(cache.x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto vx = cache.x.values<T>();
    auto vd = d_out.values<T>();
    auto vo = dx.values<T>();
    const T c = static_cast<T>(kGeluScale);
    const T a = static_cast<T>(kGeluCubic);
    for (std::size_t i = 0; i < vx.size(); ++i) {
      const T v = vx[i];
      const T t = std::tanh(c * (v + a * v * v * v));
      const T sech2 = T(1) - t * t;
      const T slope = T(0.5) * (T(1) + t) + T(0.5) * v * sech2 * c * (T(1) + T(3) * a * v * v);
      vo[i] = slope * vd[i];
    }
  });
  return dx;
}

LayerNormResult layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const auto [rows, cols] = as_rows(x);
  require(gamma.rank() == 1 && gamma.dim(0) == cols, "layer_norm: gamma must be [d]");
  require(beta.rank() == 1 && beta.dim(0) == cols, "layer_norm: beta must be [d]");
  require(gamma.dtype() == x.dtype() && beta.dtype() == x.dtype(), "layer_norm: dtype mismatch");
  require(eps > 0.0, "layer_norm: eps must be positive");

  std::vector<std::size_t> lead(x.dims().begin(), x.dims().end() - 1);
  if (lead.empty()) lead.push_back(1);
  LayerNormResult res{Tensor::zeros_like(x), {Tensor::zeros_like(x), Tensor::zeros(lead, x.dtype())}};
  dispatch_dtype(x.dtype(), [&, rows = rows, cols = cols](auto tag) {
    using T = decltype(tag);
    auto vx = x.values<T>();
    auto vg = gamma.values<T>();
    auto vb = beta.values<T>();
    auto vy = res.y.values<T>();
    auto vh = res.cache.x_hat.values<T>();
    auto vs = res.cache.inv_std.values<T>();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xr = vx.data() + r * cols;
      T mean = T(0);
      for (std::size_t j = 0; j < cols; ++j) mean += xr[j];
      mean /= static_cast<T>(cols);
      T var = T(0);
      for (std::size_t j = 0; j < cols; ++j) {
        const T d = xr[j] - mean;
        var += d * d;
      }
      var /= static_cast<T>(cols);
      const T inv_std = T(1) / std::sqrt(var + static_cast<T>(eps));
      vs[r] = inv_std;
      T* hr = vh.data() + r * cols;
      T* yr = vy.data() + r * cols;
      for (std::size_t j = 0; j < cols; ++j) {
        hr[j] = (xr[j] - mean) * inv_std;
        yr[j] = hr[j] * vg[j] + vb[j];
      }
    }
  });
  return res;
}

LayerNormVjp layer_norm_vjp(const LayerNormCache& cache, const Tensor& gamma,
                            const Tensor& d_out) {
  require(cache.x_hat.same_shape(d_out), "layer_norm_vjp: cotangent shape mismatch");
  const auto [rows, cols] = as_rows(cache.x_hat);
  require(gamma.rank() == 1 && gamma.dim(0) == cols, "layer_norm_vjp: gamma must be [d]");
  LayerNormVjp out{Tensor::zeros_like(cache.x_hat), Tensor::zeros_like(gamma),
                   Tensor::zeros_like(gamma)};
  dispatch_dtype(d_out.dtype(), [&, rows = rows, cols = cols](auto tag) {
    using T = decltype(tag);
    auto vh = cache.x_hat.values<T>();
    auto vs = cache.inv_std.values<T>();
    auto vg = gamma.values<T>();
    auto vd = d_out.values<T>();
    auto vx = out.d_x.values<T>();
    auto vdg = out.d_gamma.values<T>();
    auto vdb = out.d_beta.values<T>();
    const T inv_n = T(1) / static_cast<T>(cols);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* hr = vh.data() + r * cols;
      const T* dr = vd.data() + r * cols;
      T* xr = vx.data() + r * cols;
      T g_mean = T(0);
      T gh_mean = T(0);
      for (std::size_t j = 0; j < cols; ++j) {
        const T gj = dr[j] * vg[j];
        g_mean += gj;
        gh_mean += gj * hr[j];
      }
      g_mean *= inv_n;
      gh_mean *= inv_n;
      for (std::size_t j = 0; j < cols; ++j) {
        const T gj = dr[j] * vg[j];
        xr[j] = (gj - g_mean - hr[j] * gh_mean) * vs[r];
        vdg[j] += dr[j] * hr[j];
        vdb[j] += dr[j];
      }
    }
  });
  return out;
}

Tensor slice_last(const Tensor& x, std::size_t offset, std::size_t len) {
  const auto [rows, cols] = as_rows(x);
  require(offset + len <= cols, "slice_last: range out of bounds");
  std::vector<std::size_t> out_dims(x.dims().begin(), x.dims().end() - 1);
  out_dims.push_back(len);
  Tensor out = Tensor::zeros(std::move(out_dims), x.dtype());
  dispatch_dtype(x.dtype(), [&, rows = rows, cols = cols](auto tag) {
    using T = decltype(tag);
    auto vx = x.values<T>();
    auto vo = out.values<T>();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(vx.data() + r * cols + offset, len, vo.data() + r * len);
    }
  });
  return out;
}

Tensor concat_last(const std::vector<const Tensor*>& parts) {
  require(!parts.empty(), "concat_last: no inputs");
  const auto [rows, cols0] = as_rows(*parts[0]);
  std::size_t total = 0;
  for (const Tensor* p : parts) {
    const auto [r, c] = as_rows(*p);
    require(r == rows && p->dtype() == parts[0]->dtype(),
            "concat_last: parts disagree on leading dims or dtype");
    total += c;
  }
  std::vector<std::size_t> out_dims(parts[0]->dims().begin(), parts[0]->dims().end() - 1);
  out_dims.push_back(total);
  Tensor out = Tensor::zeros(std::move(out_dims), parts[0]->dtype());
  dispatch_dtype(out.dtype(), [&, rows = rows](auto tag) {
    using T = decltype(tag);
    auto vo = out.values<T>();
    std::size_t col_off = 0;
    for (const Tensor* p : parts) {
      const std::size_t c = p->dim(p->rank() - 1);
      auto vp = p->values<T>();
      for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(vp.data() + r * c, c, vo.data() + r * total + col_off);
      }
      col_off += c;
    }
  });
  return out;
}

Tensor group_tokens(const Tensor& x, std::size_t r) {
  require(x.rank() == 3, "group_tokens: expected [B, N, d], got " + dims_str(x));
  const std::size_t b = x.dim(0), n = x.dim(1), d = x.dim(2);
  require(r >= 1 && n % r == 0, "group_tokens: token count not divisible by r");
  // Row-major [B, N, d] data is already laid out as [B, N/r, r*d].
  return x.reshaped({b, n / r, r * d});
}

Tensor ungroup_tokens(const Tensor& x, std::size_t r) {
  require(x.rank() == 3, "ungroup_tokens: expected [B, N/r, r*d], got " + dims_str(x));
  const std::size_t b = x.dim(0), g = x.dim(1), rd = x.dim(2);
  require(r >= 1 && rd % r == 0, "ungroup_tokens: last dim not divisible by r");
  return x.reshaped({b, g * r, rd / r});
}

Tensor mean_tokens(const Tensor& x) {
  require(x.rank() == 3, "mean_tokens: expected [B, N, d], got " + dims_str(x));
  const std::size_t b = x.dim(0), n = x.dim(1), d = x.dim(2);
  Tensor out = Tensor::zeros({b, d}, x.dtype());
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto vx = x.values<T>();
    auto vo = out.values<T>();
    const T inv = T(1) / static_cast<T>(n);
    for (std::size_t bi = 0; bi < b; ++bi) {
      T* orow = vo.data() + bi * d;
      for (std::size_t t = 0; t < n; ++t) {
        const T* xr = vx.data() + (bi * n + t) * d;
        for (std::size_t j = 0; j < d; ++j) orow[j] += xr[j];
      }
      for (std::size_t j = 0; j < d; ++j) orow[j] *= inv;
    }
  });
  return out;
}

Tensor spread_tokens(const Tensor& d_pooled, std::size_t n_tokens) {
  require(d_pooled.rank() == 2, "spread_tokens: expected [B, d]");
  const std::size_t b = d_pooled.dim(0), d = d_pooled.dim(1);
  Tensor out = Tensor::zeros({b, n_tokens, d}, d_pooled.dtype());
  dispatch_dtype(d_pooled.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto vp = d_pooled.values<T>();
    auto vo = out.values<T>();
    const T inv = T(1) / static_cast<T>(n_tokens);
    for (std::size_t bi = 0; bi < b; ++bi) {
      for (std::size_t t = 0; t < n_tokens; ++t) {
        T* orow = vo.data() + (bi * n_tokens + t) * d;
        const T* prow = vp.data() + bi * d;
        for (std::size_t j = 0; j < d; ++j) orow[j] = prow[j] * inv;
      }
    }
  });
  return out;
}

Tensor randn(std::vector<std::size_t> dims, Dtype dt, Rng& rng, double sigma) {
  Tensor t = Tensor::zeros(std::move(dims), dt);
  for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, rng.next_normal() * sigma);
  return t;
}

Tensor trunc_normal(std::vector<std::size_t> dims, Dtype dt, Rng& rng, double sigma) {
  Tensor t = Tensor::zeros(std::move(dims), dt);
  for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, rng.next_trunc_normal(sigma));
  return t;
}

double max_abs(const Tensor& a) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.get(i)));
  return m;
}

double max_rel_diff(const Tensor& a, const Tensor& b, double floor) {
  require(a.same_shape(b), "max_rel_diff: shape mismatch");
  const double denom = std::max(max_abs(b), floor);
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    m = std::max(m, std::abs(a.get(i) - b.get(i)));
  }
  return m / denom;
}

}  // namespace revprop::ops
