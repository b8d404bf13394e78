#pragma once

// Axial-attention transformer over (N1,N2,N3,3) cubochoric crops.

#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "slicerec/grid.hpp"
#include "slicerec/tensor_ops.hpp"

namespace slicerec {

struct ModelConfig {
  std::size_t layers = 8;
  std::size_t heads = 8;
  std::size_t embed_dim = 128;
  std::size_t ff_dim = 512;
  double dropout_p = 0.1;
  std::size_t input_channels = 3;
  Dims3 crop_shape{64, 7, 64};

  void validate() const {
    if (heads == 0 || embed_dim == 0 || ff_dim == 0 || input_channels == 0) {
      throw ParameterError("model sizes must be positive");
    }
    if (embed_dim % heads != 0) {
      throw ParameterError("embed_dim " + std::to_string(embed_dim) + " is not divisible by heads " +
                           std::to_string(heads));
    }
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ParameterError("dropout_p must lie in [0, 1)");
    if (crop_shape[0] == 0 || crop_shape[1] == 0 || crop_shape[2] == 0) throw ParameterError("crop_shape must be positive");
  }

  bool operator==(const ModelConfig&) const = default;
};

/// Packed per-head projections: column block h of wq/wk/wv is head h.
struct AttentionParams {
  Tensor wq, wk, wv, wo;  // each [D, D]
};

struct EncoderLayerParams {
  std::array<Tensor, 3> ln_gamma, ln_beta;  // pre-attention norms, one per axis
  std::array<AttentionParams, 3> attn;
  Tensor ff_ln_gamma, ff_ln_beta;
  Tensor conv1_w, conv1_b;  // [3,3,3,D,ff], [ff]
  Tensor conv2_w, conv2_b;  // [3,3,3,ff,D], [D]
};

struct ModelState {
  ModelConfig config;
  Tensor embed_w, embed_b;  // [C, D], [D]
  std::array<Tensor, 3> pos;  // [N_a, D]
  std::vector<EncoderLayerParams> layers;
  Tensor head_w, head_b;  // [D, C], [C]

  /// Every learnable tensor with a stable dotted name, in a fixed order.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("embed.weight", embed_w);
    out.emplace_back("embed.bias", embed_b);
    for (int a = 0; a < 3; ++a) out.emplace_back("pos." + std::to_string(a), pos[a]);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string p = "layers." + std::to_string(l) + ".";
      const auto& L = layers[l];
      for (int a = 0; a < 3; ++a) {
        const std::string q = p + "axis" + std::to_string(a) + ".";
        out.emplace_back(q + "norm.gamma", L.ln_gamma[a]);
        out.emplace_back(q + "norm.beta", L.ln_beta[a]);
        out.emplace_back(q + "wq", L.attn[a].wq);
        out.emplace_back(q + "wk", L.attn[a].wk);
        out.emplace_back(q + "wv", L.attn[a].wv);
        out.emplace_back(q + "wo", L.attn[a].wo);
      }
      out.emplace_back(p + "ff.norm.gamma", L.ff_ln_gamma);
      out.emplace_back(p + "ff.norm.beta", L.ff_ln_beta);
      out.emplace_back(p + "ff.conv1.weight", L.conv1_w);
      out.emplace_back(p + "ff.conv1.bias", L.conv1_b);
      out.emplace_back(p + "ff.conv2.weight", L.conv2_w);
      out.emplace_back(p + "ff.conv2.bias", L.conv2_b);
    }
    out.emplace_back("head.weight", head_w);
    out.emplace_back("head.bias", head_b);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named_parameters()) n += t.numel();
    return n;
  }

  /// Deep copy (Tensor is a shared handle).
  ModelState clone() const {
    ModelState c = *this;
    auto src = named_parameters();
    auto dst = c.mutable_parameters();
    for (std::size_t i = 0; i < src.size(); ++i) {
      *dst[i].second = Tensor(src[i].second.shape(), src[i].second.values(), src[i].second.requires_grad());
    }
    return c;
  }

  /// Same order as named_parameters, but addressable for replacement.
  std::vector<std::pair<std::string, Tensor*>> mutable_parameters() {
    std::vector<std::pair<std::string, Tensor*>> out;
    const auto names = named_parameters();
    std::vector<Tensor*> ptrs{&embed_w, &embed_b, &pos[0], &pos[1], &pos[2]};
    for (auto& L : layers) {
      for (int a = 0; a < 3; ++a) {
        ptrs.insert(ptrs.end(), {&L.ln_gamma[a], &L.ln_beta[a], &L.attn[a].wq, &L.attn[a].wk, &L.attn[a].wv,
                                 &L.attn[a].wo});
      }
      ptrs.insert(ptrs.end(), {&L.ff_ln_gamma, &L.ff_ln_beta, &L.conv1_w, &L.conv1_b, &L.conv2_w, &L.conv2_b});
    }
    ptrs.insert(ptrs.end(), {&head_w, &head_b});
    for (std::size_t i = 0; i < ptrs.size(); ++i) out.emplace_back(names[i].first, ptrs[i]);
    return out;
  }

  void zero_grad() {
    for (auto& [name, t] : mutable_parameters()) t->zero_grad();
  }
};

/// Exact number of learnable scalars for a config.
inline std::size_t param_count(const ModelConfig& c) {
  const std::size_t D = c.embed_dim, F = c.ff_dim, C = c.input_channels;
  const std::size_t embed = C * D + D;
  const std::size_t pos = (c.crop_shape[0] + c.crop_shape[1] + c.crop_shape[2]) * D;
  const std::size_t attn = 3 * (4 * D * D + 2 * D);
  const std::size_t ff = 2 * D + 27 * D * F + F + 27 * F * D + D;
  const std::size_t head = D * C + C;
  return embed + pos + c.layers * (attn + ff) + head;
}

namespace detail {

inline Tensor uniform_init(Shape shape, double fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(fan_in);
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

}  // namespace detail

/// Fresh parameters. Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0,
/// norms (1, 0), positional tables ~ N(0, 0.02^2). Draw order follows
/// named_parameters().
inline ModelState init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const std::size_t D = config.embed_dim, F = config.ff_dim, C = config.input_channels;
  auto zeros = [](Shape s) { return Tensor(std::move(s), 0.0, true); };
  auto ones = [](Shape s) { return Tensor(std::move(s), 1.0, true); };
  ModelState s;
  s.config = config;
  s.embed_w = detail::uniform_init({C, D}, static_cast<double>(C), rng);
  s.embed_b = zeros({D});
  std::normal_distribution<double> n(0.0, 0.02);
  for (int a = 0; a < 3; ++a) {
    std::vector<double> v(config.crop_shape[a] * D);
    for (auto& x : v) x = n(rng);
    s.pos[a] = Tensor({config.crop_shape[a], D}, std::move(v), true);
  }
  for (std::size_t l = 0; l < config.layers; ++l) {
    EncoderLayerParams L;
    for (int a = 0; a < 3; ++a) {
      L.ln_gamma[a] = ones({D});
      L.ln_beta[a] = zeros({D});
      L.attn[a].wq = detail::uniform_init({D, D}, static_cast<double>(D), rng);
      L.attn[a].wk = detail::uniform_init({D, D}, static_cast<double>(D), rng);
      L.attn[a].wv = detail::uniform_init({D, D}, static_cast<double>(D), rng);
      L.attn[a].wo = detail::uniform_init({D, D}, static_cast<double>(D), rng);
    }
    L.ff_ln_gamma = ones({D});
    L.ff_ln_beta = zeros({D});
    L.conv1_w = detail::uniform_init({3, 3, 3, D, F}, 27.0 * static_cast<double>(D), rng);
    L.conv1_b = zeros({F});
    L.conv2_w = detail::uniform_init({3, 3, 3, F, D}, 27.0 * static_cast<double>(F), rng);
    L.conv2_b = zeros({D});
    s.layers.push_back(std::move(L));
  }
  s.head_w = detail::uniform_init({D, C}, static_cast<double>(D), rng);
  s.head_b = zeros({C});
  return s;
}

namespace detail {

struct AxialLayout {
  Shape split;                          // [N_1..N_K, H, dh]
  std::vector<std::size_t> seq_perm;    // -> [others..., H, L, dh]
  std::vector<std::size_t> key_perm;    // -> [others..., H, dh, L]
  std::size_t dh;
};

inline AxialLayout axial_layout(const Tensor& x, std::size_t axis, std::size_t heads) {
  if (x.rank() < 2) throw DimensionError("axial_attention input needs spatial axes and a channel axis");
  const std::size_t K = x.rank() - 1;
  if (axis >= K) {
    throw ParameterError("attention axis " + std::to_string(axis) + " invalid for " + std::to_string(K) +
                         " spatial axes");
  }
  const std::size_t D = x.shape().back();
  if (heads == 0 || D % heads != 0) throw ParameterError("embed dim must be divisible by the head count");
  AxialLayout out;
  out.dh = D / heads;
  out.split.assign(x.shape().begin(), x.shape().end() - 1);
  out.split.push_back(heads);
  out.split.push_back(out.dh);
  for (std::size_t a = 0; a < K; ++a)
    if (a != axis) out.seq_perm.push_back(a);
  out.key_perm = out.seq_perm;
  out.seq_perm.insert(out.seq_perm.end(), {K, axis, K + 1});
  out.key_perm.insert(out.key_perm.end(), {K, K + 1, axis});
  return out;
}

inline Tensor axial_weights(const Tensor& x, const AxialLayout& lay, const AttentionParams& p) {
  const Tensor q = permute(reshape(linear_nobias(x, p.wq), lay.split), lay.seq_perm);
  const Tensor k = permute(reshape(linear_nobias(x, p.wk), lay.split), lay.key_perm);
  return softmax_rows(scale(matmul(q, k), 1.0 / std::sqrt(static_cast<double>(lay.dh))));
}

}  // namespace detail

/// Attention weights [others..., H, L, L] of axial_attention; each row is a
/// distribution over the fiber.
inline Tensor axial_attention_weights(const Tensor& x, std::size_t axis, const AttentionParams& p,
                                      std::size_t heads) {
  return detail::axial_weights(x, detail::axial_layout(x, axis, heads), p);
}

/// Multi-head self-attention along spatial axis `axis` of x[N_1..N_K, D]:
/// every fiber along that axis is an independent sequence.
inline Tensor axial_attention(const Tensor& x, std::size_t axis, const AttentionParams& p, std::size_t heads) {
  const auto lay = detail::axial_layout(x, axis, heads);
  const Tensor a = detail::axial_weights(x, lay, p);
  const Tensor v = permute(reshape(linear_nobias(x, p.wv), lay.split), lay.seq_perm);
  const Tensor o = reshape(permute(matmul(a, v), inverse_permutation(lay.seq_perm)), x.shape());
  return linear_nobias(o, p.wo);
}

/// Pre-norm encoder layer: three axial attentions then the conv feedforward,
/// each as a residual branch with dropout.
inline Tensor encoder_layer(const Tensor& x, const EncoderLayerParams& L, const ModelConfig& c, std::mt19937_64& rng,
                            bool training) {
  Tensor y = x;
  for (std::size_t a = 0; a < 3; ++a) {
    const Tensor h = axial_attention(layer_norm(y, L.ln_gamma[a], L.ln_beta[a]), a, L.attn[a], c.heads);
    y = add(y, dropout(h, c.dropout_p, rng, training));
  }
  Tensor h = conv3d(layer_norm(y, L.ff_ln_gamma, L.ff_ln_beta), L.conv1_w, L.conv1_b);
  h = conv3d(gelu(h), L.conv2_w, L.conv2_b);
  return add(y, dropout(h, c.dropout_p, rng, training));
}

/// Predicts every voxel of a masked crop x[N1,N2,N3,C] (shape must equal the
/// configured crop). `rng` drives dropout and is only read when training.
inline Tensor forward(const ModelState& s, const Tensor& x, std::mt19937_64& rng, bool training) {
  const auto& c = s.config;
  const Shape expect{c.crop_shape[0], c.crop_shape[1], c.crop_shape[2], c.input_channels};
  if (x.shape() != expect) {
    throw DimensionError("model input " + shape_str(x.shape()) + " does not match configured crop " +
                         shape_str(expect));
  }
  const std::size_t D = c.embed_dim;
  Tensor h = linear(x, s.embed_w, s.embed_b);
  h = add(h, reshape(s.pos[0], {c.crop_shape[0], 1, 1, D}));
  h = add(h, reshape(s.pos[1], {1, c.crop_shape[1], 1, D}));
  h = add(h, reshape(s.pos[2], {1, 1, c.crop_shape[2], D}));
  for (const auto& L : s.layers) h = encoder_layer(h, L, c, rng, training);
  return linear(h, s.head_w, s.head_b);
}

/// Eval-mode forward without recording a graph.
inline Tensor predict(const ModelState& s, const Tensor& x) {
  NoGradGuard guard;
  std::mt19937_64 unused(0);
  return forward(s, x, unused, false);
}

/// Sum over boundary voxels E of slice m (dim 2) of the squared channel
/// error, divided by the number of boundary voxels.
inline Tensor boundary_masked_loss(const Tensor& pred, const Tensor& x_star, std::size_t m, const Grid2<std::uint8_t>& E) {
  if (pred.shape() != x_star.shape() || pred.rank() != 4) {
    throw DimensionError("loss shapes " + shape_str(pred.shape()) + " and " + shape_str(x_star.shape()) +
                         " must match and be [N1,N2,N3,C]");
  }
  const std::size_t n1 = pred.dim(0), n2 = pred.dim(1), n3 = pred.dim(2), C = pred.dim(3);
  if (m >= n2) throw DimensionError("masked slice index out of range");
  if (E.rows() != n1 || E.cols() != n3) throw DimensionError("boundary map must be (N1, N3)");
  std::vector<std::size_t> voxels;  // flat offset of channel 0
  for (std::size_t i = 0; i < n1; ++i)
    for (std::size_t k = 0; k < n3; ++k)
      if (E(i, k)) voxels.push_back(((i * n2 + m) * n3 + k) * C);
  if (voxels.empty()) throw LossError("masked slice has no boundary voxels");
  const double inv = 1.0 / static_cast<double>(voxels.size());
  const auto& p = pred.values();
  const auto& t = x_star.values();
  double total = 0.0;
  for (std::size_t off : voxels)
    for (std::size_t c = 0; c < C; ++c) total += (p[off + c] - t[off + c]) * (p[off + c] - t[off + c]);
  auto pi = pred.impl();
  auto ti = x_star.impl();
  return detail::make_result({1}, {total * inv}, {pred, x_star},
                             [pi, ti, voxels = std::move(voxels), C, inv](detail::TensorImpl& self) {
                               const double g = (*self.grad)[0] * 2.0 * inv;
                               auto* gp = detail::grad_sink(pi);
                               auto* gt = detail::grad_sink(ti);
                               for (std::size_t off : voxels)
                                 for (std::size_t c = 0; c < C; ++c) {
                                   const double d = g * (pi->data[off + c] - ti->data[off + c]);
                                   if (gp) (*gp)[off + c] += d;
                                   if (gt) (*gt)[off + c] -= d;
                                 }
                             });
}

/// X ⊙ M: copy of x with slice m along dim 2 zeroed.
inline Tensor apply_slice_mask(const Tensor& x, std::size_t m) {
  if (x.rank() != 4 || m >= x.dim(1)) throw DimensionError("mask slice out of range for " + shape_str(x.shape()));
  std::vector<double> v = x.values();
  const std::size_t n2 = x.dim(1), n3 = x.dim(2), C = x.dim(3);
  for (std::size_t i = 0; i < x.dim(0); ++i)
    for (std::size_t k = 0; k < n3; ++k)
      for (std::size_t c = 0; c < C; ++c) v[((i * n2 + m) * n3 + k) * C + c] = 0.0;
  return Tensor(x.shape(), std::move(v));
}

}  // namespace slicerec
