#pragma once

// Differentiable tensor operations. Every op validates shapes eagerly and,
// when recording, captures exactly what its backward needs.

#include <array>
#include <cmath>
#include <cstdint>
#include <random>

#include <Eigen/Core>

#include "slicerec/tensor.hpp"

namespace slicerec {

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using MatMap = Eigen::Map<RowMatrix>;

// c (M x P) = or += op(a) * op(b), where op(a) is M x K and op(b) is K x P.
// Operands are copied into 64-byte aligned scratch first: Eigen's kernels peel
// unaligned leading elements, so results on raw vector storage would depend
// on the heap address.
inline void gemm(const double* a, bool ta, const double* b, bool tb, double* c, std::size_t M, std::size_t K,
                 std::size_t P, bool accumulate) {
  using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;
  thread_local Buffer sa, sb, sc;
  auto stage = [](Buffer& buf, const double* src, std::size_t n) {
    if (buf.size() < n) buf.resize(n);
    std::copy(src, src + n, buf.data());
    return buf.data();
  };
  const double* pa = stage(sa, a, M * K);
  const double* pb = stage(sb, b, K * P);
  if (sc.size() < M * P) sc.resize(M * P);
  MatMap C(sc.data(), M, P);
  const auto A = ta ? ConstMatMap(pa, K, M) : ConstMatMap(pa, M, K);
  const auto B = tb ? ConstMatMap(pb, P, K) : ConstMatMap(pb, K, P);
  if (ta && tb) {
    C.noalias() = A.transpose() * B.transpose();
  } else if (ta) {
    C.noalias() = A.transpose() * B;
  } else if (tb) {
    C.noalias() = A * B.transpose();
  } else {
    C.noalias() = A * B;
  }
  const double* src = sc.data();
  if (accumulate) {
    for (std::size_t i = 0; i < M * P; ++i) c[i] += src[i];
  } else {
    std::copy(src, src + M * P, c);
  }
}

inline Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("shapes " + shape_str(a) + " and " + shape_str(b) +
                           " are not broadcastable");
    }
    out[i] = std::max(da, db);
  }
  return out;
}

/// Strides of `in` expressed over `out`'s index space (0 on broadcast axes).
inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const std::size_t i = in.size() - 1 - k;
    const std::size_t o = out.size() - 1 - k;
    strides[o] = in[i] == 1 ? 0 : stride;
    stride *= in[i];
  }
  return strides;
}

/// Calls fn(out_index, a_index, b_index) for every element of `out`.
template <class Fn>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, Fn&& fn) {
  const auto sa = broadcast_strides(a, out);
  const auto sb = broadcast_strides(b, out);
  const std::size_t n = shape_numel(out);
  const std::size_t rank = out.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < n; ++o) {
    fn(o, ia, ib);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

enum class BinaryKind { kAdd, kSub, kMul };

inline Tensor binary_op(const Tensor& a, const Tensor& b, BinaryKind kind) {
  const Shape out_shape = broadcast_shapes(a.shape(), b.shape());
  std::vector<double> out(shape_numel(out_shape));
  const auto& av = a.values();
  const auto& bv = b.values();
  const bool same = a.shape() == b.shape();
  auto apply = [kind](double x, double y) {
    switch (kind) {
      case BinaryKind::kAdd: return x + y;
      case BinaryKind::kSub: return x - y;
      default: return x * y;
    }
  };
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = apply(av[i], bv[i]);
  } else {
    for_each_broadcast(out_shape, a.shape(), b.shape(),
                       [&](std::size_t o, std::size_t ia, std::size_t ib) {
                         out[o] = apply(av[ia], bv[ib]);
                       });
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return make_result(out_shape, std::move(out), {a, b},
                     [ai, bi, kind, out_shape, same](TensorImpl& self) {
                       const auto& g = *self.grad;
                       auto* ga = grad_sink(ai);
                       auto* gb = grad_sink(bi);
                       auto contribute = [&](std::size_t o, std::size_t ia, std::size_t ib) {
                         switch (kind) {
                           case BinaryKind::kAdd:
                             if (ga) (*ga)[ia] += g[o];
                             if (gb) (*gb)[ib] += g[o];
                             break;
                           case BinaryKind::kSub:
                             if (ga) (*ga)[ia] += g[o];
                             if (gb) (*gb)[ib] -= g[o];
                             break;
                           case BinaryKind::kMul:
                             if (ga) (*ga)[ia] += g[o] * bi->data[ib];
                             if (gb) (*gb)[ib] += g[o] * ai->data[ia];
                             break;
                         }
                       };
                       if (same) {
                         for (std::size_t i = 0; i < g.size(); ++i) contribute(i, i, i);
                       } else {
                         for_each_broadcast(out_shape, ai->shape, bi->shape, contribute);
                       }
                     });
}

}  // namespace detail

/// Elementwise sum with numpy-style broadcasting.
inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_op(a, b, detail::BinaryKind::kAdd);
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_op(a, b, detail::BinaryKind::kSub);
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_op(a, b, detail::BinaryKind::kMul);
}

inline Tensor scale(const Tensor& x, double s) {
  std::vector<double> out(x.values());
  for (auto& v : out) v *= s;
  auto xi = x.impl();
  return detail::make_result(x.shape(), std::move(out), {x}, [xi, s](detail::TensorImpl& self) {
    if (auto* gx = detail::grad_sink(xi)) {
      const auto& g = *self.grad;
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += s * g[i];
    }
  });
}

inline Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  auto xi = x.impl();
  return detail::make_result(Shape{1}, {total}, {x}, [xi](detail::TensorImpl& self) {
    if (auto* gx = detail::grad_sink(xi)) {
      const double g = (*self.grad)[0];
      for (auto& v : *gx) v += g;
    }
  });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

/// Copy with a new shape of equal element count.
inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  auto xi = x.impl();
  return detail::make_result(std::move(shape), x.values(), {x}, [xi](detail::TensorImpl& self) {
    if (auto* gx = detail::grad_sink(xi)) {
      const auto& g = *self.grad;
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
    }
  });
}

inline std::vector<std::size_t> inverse_permutation(const std::vector<std::size_t>& perm) {
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
  return inv;
}

/// Axis permutation: output axis i is input axis perm[i].
inline Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
  const std::size_t rank = x.rank();
  if (perm.size() != rank) {
    throw DimensionError("permutation of length " + std::to_string(perm.size()) +
                         " for tensor of shape " + shape_str(x.shape()));
  }
  std::vector<bool> used(rank, false);
  for (auto p : perm) {
    if (p >= rank || used[p]) throw ParameterError("invalid axis permutation");
    used[p] = true;
  }
  const Shape& in_shape = x.shape();
  Shape out_shape(rank);
  std::vector<std::size_t> in_strides(rank), strides(rank);
  {
    std::size_t s = 1;
    for (std::size_t d = rank; d-- > 0;) {
      in_strides[d] = s;
      s *= in_shape[d];
    }
  }
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in_shape[perm[i]];
    strides[i] = in_strides[perm[i]];
  }
  // Visits output elements in order together with their input offsets.
  auto walk = [out_shape, strides, rank](auto&& fn) {
    const std::size_t n = shape_numel(out_shape);
    std::vector<std::size_t> idx(rank, 0);
    std::size_t in = 0;
    for (std::size_t o = 0; o < n; ++o) {
      fn(o, in);
      for (std::size_t d = rank; d-- > 0;) {
        ++idx[d];
        in += strides[d];
        if (idx[d] < out_shape[d]) break;
        in -= strides[d] * out_shape[d];
        idx[d] = 0;
      }
    }
  };
  std::vector<double> out(x.numel());
  const auto& xv = x.values();
  walk([&](std::size_t o, std::size_t i) { out[o] = xv[i]; });
  auto xi = x.impl();
  return detail::make_result(out_shape, std::move(out), {x}, [xi, walk](detail::TensorImpl& self) {
    if (auto* gx = detail::grad_sink(xi)) {
      const auto& g = *self.grad;
      walk([&](std::size_t o, std::size_t i) { (*gx)[i] += g[o]; });
    }
  });
}

/// Swaps the two trailing axes.
inline Tensor transpose_last(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("transpose_last needs rank >= 2");
  std::vector<std::size_t> perm(x.rank());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::swap(perm[x.rank() - 1], perm[x.rank() - 2]);
  return permute(x, perm);
}

/// Batched matrix product [..., M, K] x [..., K, P] -> [..., M, P]; leading
/// batch axes broadcast.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2 || a.shape()[a.rank() - 1] != b.shape()[b.rank() - 2]) {
    throw DimensionError("matmul shape mismatch: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const std::size_t M = a.shape()[a.rank() - 2];
  const std::size_t K = a.shape()[a.rank() - 1];
  const std::size_t P = b.shape()[b.rank() - 1];
  const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
  Shape batch;
  try {
    batch = detail::broadcast_shapes(a_batch, b_batch);
  } catch (const DimensionError&) {
    throw DimensionError("matmul batch mismatch: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  // Triples (out batch, a batch, b batch).
  std::vector<std::array<std::size_t, 3>> pairs;
  pairs.reserve(shape_numel(batch));
  detail::for_each_broadcast(batch, a_batch, b_batch,
                             [&](std::size_t o, std::size_t ia, std::size_t ib) {
                               pairs.push_back({o, ia, ib});
                             });
  Shape out_shape = batch;
  out_shape.push_back(M);
  out_shape.push_back(P);
  std::vector<double> out(shape_numel(out_shape), 0.0);
  const double* ad = a.values().data();
  const double* bd = b.values().data();
  for (const auto& [o, ia, ib] : pairs) {
    detail::gemm(ad + ia * M * K, false, bd + ib * K * P, false, out.data() + o * M * P, M, K, P, false);
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return detail::make_result(
      std::move(out_shape), std::move(out), {a, b}, [ai, bi, pairs, M, K, P](detail::TensorImpl& self) {
        const double* g = self.grad->data();
        auto* ga = detail::grad_sink(ai);
        auto* gb = detail::grad_sink(bi);
        for (const auto& [o, ia, ib] : pairs) {
          const double* go = g + o * M * P;
          if (ga) detail::gemm(go, false, bi->data.data() + ib * K * P, true, ga->data() + ia * M * K, M, P, K, true);
          if (gb) detail::gemm(ai->data.data() + ia * M * K, true, go, false, gb->data() + ib * K * P, K, M, P, true);
        }
      });
}

/// Softmax over the trailing axis, max-subtracted.
inline Tensor softmax_rows(const Tensor& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  std::vector<double> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * n;
    double* y = out.data() + r * n;
    double mx = in[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, in[i]);
    if (!std::isfinite(mx)) throw NumericError("softmax_rows: non-finite input");
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = std::exp(in[i] - mx);
      total += y[i];
    }
    for (std::size_t i = 0; i < n; ++i) y[i] /= total;
  }
  auto xi = x.impl();
  return detail::make_result(x.shape(), std::move(out), {x}, [xi, n, rows](detail::TensorImpl& self) {
    auto* gx = detail::grad_sink(xi);
    if (!gx) return;
    const auto& g = *self.grad;
    const auto& y = self.data;
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += g[r * n + i] * y[r * n + i];
      for (std::size_t i = 0; i < n; ++i) (*gx)[r * n + i] += y[r * n + i] * (g[r * n + i] - dot);
    }
  });
}

/// GELU, tanh approximation.
inline Tensor gelu(const Tensor& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  std::vector<double> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = xv[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v)));
  }
  auto xi = x.impl();
  return detail::make_result(x.shape(), std::move(out), {x}, [xi](detail::TensorImpl& self) {
    auto* gx = detail::grad_sink(xi);
    if (!gx) return;
    const auto& g = *self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xi->data[i];
      const double t = std::tanh(kC * (v + kA * v * v * v));
      const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * v * v);
      (*gx)[i] += g[i] * d;
    }
  });
}

/// Inverted dropout. Identity when not training or p == 0.
inline Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng, bool training) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ParameterError("dropout probability must lie in [0, 1), got " + std::to_string(p));
  }
  if (!training || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> mask(x.numel());
  std::vector<double> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = unit(rng) < p ? 0.0 : keep_scale;
    out[i] = xv[i] * mask[i];
  }
  auto xi = x.impl();
  return detail::make_result(x.shape(), std::move(out), {x},
                             [xi, mask = std::move(mask)](detail::TensorImpl& self) {
                               if (auto* gx = detail::grad_sink(xi)) {
                                 const auto& g = *self.grad;
                                 for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * mask[i];
                               }
                             });
}

inline constexpr double kLayerNormEps = 1e-5;

/// Normalises the trailing axis to zero mean / unit variance, then applies
/// the per-feature affine (gamma, beta).
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = kLayerNormEps) {
  const std::size_t D = x.shape().back();
  if (gamma.shape() != Shape{D} || beta.shape() != Shape{D}) {
    throw DimensionError("layer_norm affine shapes " + shape_str(gamma.shape()) + ", " +
                         shape_str(beta.shape()) + " do not match feature size " + std::to_string(D));
  }
  const std::size_t rows = x.numel() / D;
  std::vector<double> xhat(x.numel()), rstd(rows), out(x.numel());
  const auto& xv = x.values();
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * D;
    double mu = 0.0;
    for (std::size_t i = 0; i < D; ++i) mu += in[i];
    mu /= static_cast<double>(D);
    double var = 0.0;
    for (std::size_t i = 0; i < D; ++i) var += (in[i] - mu) * (in[i] - mu);
    var /= static_cast<double>(D);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < D; ++i) {
      xhat[r * D + i] = (in[i] - mu) * rstd[r];
      out[r * D + i] = xhat[r * D + i] * gv[i] + bv[i];
    }
  }
  auto xi = x.impl();
  auto gi = gamma.impl();
  auto bi = beta.impl();
  return detail::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [xi, gi, bi, D, rows, xhat = std::move(xhat), rstd = std::move(rstd)](detail::TensorImpl& self) {
        const auto& g = *self.grad;
        auto* gx = detail::grad_sink(xi);
        auto* gg = detail::grad_sink(gi);
        auto* gb = detail::grad_sink(bi);
        std::vector<double> dxhat(D);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gr = g.data() + r * D;
          const double* xh = xhat.data() + r * D;
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t i = 0; i < D; ++i) {
            if (gg) (*gg)[i] += gr[i] * xh[i];
            if (gb) (*gb)[i] += gr[i];
            dxhat[i] = gr[i] * gi->data[i];
            m1 += dxhat[i];
            m2 += dxhat[i] * xh[i];
          }
          if (!gx) continue;
          m1 /= static_cast<double>(D);
          m2 /= static_cast<double>(D);
          for (std::size_t i = 0; i < D; ++i) {
            (*gx)[r * D + i] += rstd[r] * (dxhat[i] - m1 - xh[i] * m2);
          }
        }
      });
}

namespace detail {

struct ConvGeometry {
  std::size_t n1, n2, n3, cin, cout;
  std::size_t voxels() const { return n1 * n2 * n3; }
  std::size_t patch() const { return 27 * cin; }
};

/// im2col for rows [begin, end) of a zero-padded 3x3x3 neighbourhood.
inline void im2col_rows(const ConvGeometry& geo, const double* x, std::size_t begin, std::size_t end,
                        double* col) {
  const std::size_t patch = geo.patch();
  for (std::size_t v = begin; v < end; ++v) {
    const std::size_t i = v / (geo.n2 * geo.n3);
    const std::size_t j = (v / geo.n3) % geo.n2;
    const std::size_t k = v % geo.n3;
    double* row = col + (v - begin) * patch;
    for (int a = 0; a < 3; ++a) {
      const auto si = static_cast<std::ptrdiff_t>(i) + a - 1;
      for (int b = 0; b < 3; ++b) {
        const auto sj = static_cast<std::ptrdiff_t>(j) + b - 1;
        for (int c = 0; c < 3; ++c) {
          const auto sk = static_cast<std::ptrdiff_t>(k) + c - 1;
          double* dst = row + static_cast<std::size_t>((a * 3 + b) * 3 + c) * geo.cin;
          if (si < 0 || sj < 0 || sk < 0 || si >= static_cast<std::ptrdiff_t>(geo.n1) ||
              sj >= static_cast<std::ptrdiff_t>(geo.n2) || sk >= static_cast<std::ptrdiff_t>(geo.n3)) {
            std::fill(dst, dst + geo.cin, 0.0);
          } else {
            const double* src = x + ((static_cast<std::size_t>(si) * geo.n2 + static_cast<std::size_t>(sj)) * geo.n3 +
                                     static_cast<std::size_t>(sk)) * geo.cin;
            std::copy(src, src + geo.cin, dst);
          }
        }
      }
    }
  }
}

inline void col2im_rows(const ConvGeometry& geo, const double* col, std::size_t begin, std::size_t end,
                        double* dx) {
  const std::size_t patch = geo.patch();
  for (std::size_t v = begin; v < end; ++v) {
    const std::size_t i = v / (geo.n2 * geo.n3);
    const std::size_t j = (v / geo.n3) % geo.n2;
    const std::size_t k = v % geo.n3;
    const double* row = col + (v - begin) * patch;
    for (int a = 0; a < 3; ++a) {
      const auto si = static_cast<std::ptrdiff_t>(i) + a - 1;
      if (si < 0 || si >= static_cast<std::ptrdiff_t>(geo.n1)) continue;
      for (int b = 0; b < 3; ++b) {
        const auto sj = static_cast<std::ptrdiff_t>(j) + b - 1;
        if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(geo.n2)) continue;
        for (int c = 0; c < 3; ++c) {
          const auto sk = static_cast<std::ptrdiff_t>(k) + c - 1;
          if (sk < 0 || sk >= static_cast<std::ptrdiff_t>(geo.n3)) continue;
          const double* src = row + static_cast<std::size_t>((a * 3 + b) * 3 + c) * geo.cin;
          double* dst = dx + ((static_cast<std::size_t>(si) * geo.n2 + static_cast<std::size_t>(sj)) * geo.n3 +
                              static_cast<std::size_t>(sk)) * geo.cin;
          for (std::size_t ch = 0; ch < geo.cin; ++ch) dst[ch] += src[ch];
        }
      }
    }
  }
}

// Rows per im2col chunk, bounding the scratch buffer to ~2M doubles.
inline std::size_t conv_chunk_rows(const ConvGeometry& geo) {
  return std::max<std::size_t>(1, (std::size_t{1} << 21) / geo.patch());
}

}  // namespace detail

/// 3x3x3 cross-correlation with zero padding 1 (spatial shape preserved).
/// x: [N1,N2,N3,Cin], w: [3,3,3,Cin,Cout], bias: [Cout].
inline Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (x.rank() != 4) throw DimensionError("conv3d input must be [N1,N2,N3,C], got " + shape_str(x.shape()));
  if (w.rank() != 5 || w.dim(0) != 3 || w.dim(1) != 3 || w.dim(2) != 3) {
    throw DimensionError("conv3d kernel must be [3,3,3,Cin,Cout], got " + shape_str(w.shape()));
  }
  if (w.dim(3) != x.dim(3)) {
    throw DimensionError("conv3d channel mismatch: input " + shape_str(x.shape()) + ", kernel " +
                         shape_str(w.shape()));
  }
  if (bias.shape() != Shape{w.dim(4)}) {
    throw DimensionError("conv3d bias " + shape_str(bias.shape()) + " does not match kernel " +
                         shape_str(w.shape()));
  }
  const detail::ConvGeometry geo{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(4)};
  const std::size_t nvox = geo.voxels();
  const std::size_t chunk = detail::conv_chunk_rows(geo);
  std::vector<double> out(nvox * geo.cout);
  std::vector<double> col(std::min(chunk, nvox) * geo.patch());
  const double* bd = bias.values().data();
  for (std::size_t begin = 0; begin < nvox; begin += chunk) {
    const std::size_t end = std::min(nvox, begin + chunk);
    const std::size_t rows = end - begin;
    detail::im2col_rows(geo, x.values().data(), begin, end, col.data());
    double* y = out.data() + begin * geo.cout;
    detail::gemm(col.data(), false, w.values().data(), false, y, rows, geo.patch(), geo.cout, false);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t o = 0; o < geo.cout; ++o) y[r * geo.cout + o] += bd[o];
  }
  auto xi = x.impl();
  auto wi = w.impl();
  auto bi = bias.impl();
  Shape out_shape{geo.n1, geo.n2, geo.n3, geo.cout};
  return detail::make_result(
      std::move(out_shape), std::move(out), {x, w, bias}, [xi, wi, bi, geo, chunk, nvox](detail::TensorImpl& self) {
        const double* g = self.grad->data();
        auto* gx = detail::grad_sink(xi);
        auto* gw = detail::grad_sink(wi);
        auto* gb = detail::grad_sink(bi);
        if (gb) {
          // Fixed summation order; Eigen's reduction order depends on alignment.
          for (std::size_t v = 0; v < nvox; ++v)
            for (std::size_t o = 0; o < geo.cout; ++o) (*gb)[o] += g[v * geo.cout + o];
        }
        if (!gx && !gw) return;
        std::vector<double> col(std::min(chunk, nvox) * geo.patch());
        for (std::size_t begin = 0; begin < nvox; begin += chunk) {
          const std::size_t end = std::min(nvox, begin + chunk);
          const std::size_t rows = end - begin;
          const double* gr = g + begin * geo.cout;
          if (gw) {
            detail::im2col_rows(geo, xi->data.data(), begin, end, col.data());
            detail::gemm(col.data(), true, gr, false, gw->data(), geo.patch(), rows, geo.cout, true);
          }
          if (gx) {
            detail::gemm(gr, false, wi->data.data(), true, col.data(), rows, geo.cout, geo.patch(), false);
            detail::col2im_rows(geo, col.data(), begin, end, gx->data());
          }
        }
      });
}

/// x[..., Din] * w[Din, Dout].
inline Tensor linear_nobias(const Tensor& x, const Tensor& w) {
  const std::size_t din = x.shape().back();
  if (w.rank() != 2 || w.dim(0) != din) {
    throw DimensionError("linear weight " + shape_str(w.shape()) + " incompatible with input " +
                         shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape.back() = w.dim(1);
  return reshape(matmul(reshape(x, {x.numel() / din, din}), w), std::move(out_shape));
}

/// x[..., Din] * w[Din, Dout] + b[Dout].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add(linear_nobias(x, w), b);
}

}  // namespace slicerec
