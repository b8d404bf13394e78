#pragma once

// Loop-only re-implementation of the model, sharing nothing with the tensor
// engine except parameter storage. Eval mode (no dropout).

#include <cmath>
#include <vector>

#include "slicerec/model.hpp"

namespace slicerec::reference {

using Vec = std::vector<double>;

struct Field {  // [n1, n2, n3, c] row-major
  std::size_t n[3];
  std::size_t c;
  Vec v;
  double& at(std::size_t i, std::size_t j, std::size_t k, std::size_t ch) { return v[((i * n[1] + j) * n[2] + k) * c + ch]; }
  double at(std::size_t i, std::size_t j, std::size_t k, std::size_t ch) const {
    return v[((i * n[1] + j) * n[2] + k) * c + ch];
  }
};

inline Field from_tensor(const Tensor& t) {
  return Field{{t.dim(0), t.dim(1), t.dim(2)}, t.dim(3), t.values()};
}

inline Field dense(const Field& x, const Tensor& w, const Tensor* b) {
  const std::size_t din = x.c, dout = w.dim(1);
  Field y{{x.n[0], x.n[1], x.n[2]}, dout, Vec(x.v.size() / din * dout, 0.0)};
  const std::size_t rows = x.v.size() / din;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < dout; ++o) {
      double s = b ? (*b)[o] : 0.0;
      for (std::size_t i = 0; i < din; ++i) s += x.v[r * din + i] * w[i * dout + o];
      y.v[r * dout + o] = s;
    }
  return y;
}

inline Field norm(const Field& x, const Tensor& g, const Tensor& b) {
  Field y = x;
  const std::size_t D = x.c;
  for (std::size_t r = 0; r < x.v.size() / D; ++r) {
    double mu = 0, var = 0;
    for (std::size_t i = 0; i < D; ++i) mu += x.v[r * D + i];
    mu /= D;
    for (std::size_t i = 0; i < D; ++i) var += (x.v[r * D + i] - mu) * (x.v[r * D + i] - mu);
    var /= D;
    for (std::size_t i = 0; i < D; ++i) y.v[r * D + i] = (x.v[r * D + i] - mu) / std::sqrt(var + 1e-5) * g[i] + b[i];
  }
  return y;
}

/// Eq. 1 applied fiber by fiber along `axis`.
inline Field attention(const Field& x, std::size_t axis, const AttentionParams& p, std::size_t H) {
  const std::size_t D = x.c, dh = D / H, L = x.n[axis];
  const Field q = dense(x, p.wq, nullptr), k = dense(x, p.wk, nullptr), v = dense(x, p.wv, nullptr);
  Field cat{{x.n[0], x.n[1], x.n[2]}, D, Vec(x.v.size(), 0.0)};
  const std::size_t o1 = axis == 0 ? 1 : 0, o2 = axis == 2 ? 1 : 2;
  for (std::size_t u = 0; u < x.n[o1]; ++u)
    for (std::size_t w = 0; w < x.n[o2]; ++w) {
      auto pos = [&](std::size_t l, std::size_t out[3]) {
        out[axis] = l;
        out[o1] = u;
        out[o2] = w;
      };
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t a = 0; a < L; ++a) {
          std::size_t pa[3];
          pos(a, pa);
          Vec s(L);
          double mx = -1e300;
          for (std::size_t b = 0; b < L; ++b) {
            std::size_t pb[3];
            pos(b, pb);
            double dot = 0;
            for (std::size_t d = 0; d < dh; ++d)
              dot += q.at(pa[0], pa[1], pa[2], h * dh + d) * k.at(pb[0], pb[1], pb[2], h * dh + d);
            s[b] = dot / std::sqrt(static_cast<double>(dh));
            mx = std::max(mx, s[b]);
          }
          double z = 0;
          for (auto& e : s) z += (e = std::exp(e - mx));
          for (std::size_t d = 0; d < dh; ++d) {
            double acc = 0;
            for (std::size_t b = 0; b < L; ++b) {
              std::size_t pb[3];
              pos(b, pb);
              acc += s[b] / z * v.at(pb[0], pb[1], pb[2], h * dh + d);
            }
            cat.at(pa[0], pa[1], pa[2], h * dh + d) = acc;
          }
        }
    }
  return dense(cat, p.wo, nullptr);
}

inline Field conv(const Field& x, const Tensor& w, const Tensor& b) {
  const std::size_t cin = x.c, cout = w.dim(4);
  Field y{{x.n[0], x.n[1], x.n[2]}, cout, Vec(x.v.size() / cin * cout, 0.0)};
  for (std::size_t i = 0; i < x.n[0]; ++i)
    for (std::size_t j = 0; j < x.n[1]; ++j)
      for (std::size_t k = 0; k < x.n[2]; ++k)
        for (std::size_t o = 0; o < cout; ++o) {
          double s = b[o];
          for (int di = -1; di <= 1; ++di)
            for (int dj = -1; dj <= 1; ++dj)
              for (int dk = -1; dk <= 1; ++dk) {
                const long ii = static_cast<long>(i) + di, jj = static_cast<long>(j) + dj, kk = static_cast<long>(k) + dk;
                if (ii < 0 || jj < 0 || kk < 0 || ii >= static_cast<long>(x.n[0]) || jj >= static_cast<long>(x.n[1]) ||
                    kk >= static_cast<long>(x.n[2]))
                  continue;
                for (std::size_t c = 0; c < cin; ++c)
                  s += x.at(ii, jj, kk, c) * w[((((di + 1) * 3 + (dj + 1)) * 3 + (dk + 1)) * cin + c) * cout + o];
              }
          y.at(i, j, k, o) = s;
        }
  return y;
}

inline double gelu(double x) {
  const double c = std::sqrt(2.0 / 3.14159265358979323846);
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

inline Field forward(const ModelState& s, const Tensor& input) {
  const auto& cfg = s.config;
  Field h = dense(from_tensor(input), s.embed_w, &s.embed_b);
  for (std::size_t i = 0; i < h.n[0]; ++i)
    for (std::size_t j = 0; j < h.n[1]; ++j)
      for (std::size_t k = 0; k < h.n[2]; ++k)
        for (std::size_t d = 0; d < h.c; ++d)
          h.at(i, j, k, d) += s.pos[0][i * h.c + d] + s.pos[1][j * h.c + d] + s.pos[2][k * h.c + d];
  for (const auto& L : s.layers) {
    for (std::size_t a = 0; a < 3; ++a) {
      const Field att = attention(norm(h, L.ln_gamma[a], L.ln_beta[a]), a, L.attn[a], cfg.heads);
      for (std::size_t n = 0; n < h.v.size(); ++n) h.v[n] += att.v[n];
    }
    Field f = conv(norm(h, L.ff_ln_gamma, L.ff_ln_beta), L.conv1_w, L.conv1_b);
    for (auto& e : f.v) e = gelu(e);
    f = conv(f, L.conv2_w, L.conv2_b);
    for (std::size_t n = 0; n < h.v.size(); ++n) h.v[n] += f.v[n];
  }
  return dense(h, s.head_w, &s.head_b);
}

/// Double loop over the boundary voxels of slice m.
inline double boundary_loss(const Tensor& pred, const Tensor& truth, std::size_t m, const Grid2<std::uint8_t>& E) {
  double total = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < E.rows(); ++i)
    for (std::size_t k = 0; k < E.cols(); ++k) {
      if (!E(i, k)) continue;
      ++count;
      for (std::size_t c = 0; c < pred.dim(3); ++c) {
        const std::size_t off = ((i * pred.dim(1) + m) * pred.dim(2) + k) * pred.dim(3) + c;
        total += (pred[off] - truth[off]) * (pred[off] - truth[off]);
      }
    }
  return total / static_cast<double>(count);
}

}  // namespace slicerec::reference
