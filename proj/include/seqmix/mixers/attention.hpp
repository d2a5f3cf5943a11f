#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "seqmix/mixers/rotary.hpp"
#include "seqmix/ops.hpp"

namespace seqmix {

struct AttentionConfig {
  std::size_t d_model = 0;
  std::size_t n_heads = 1;
  bool causal = true;
  std::optional<std::size_t> window;  // sliding-window size w: i-w < j <= i
  Positional positional = Positional::none;
  double rotary_base = 10000.0;
  double decay_scale_base = 512.0;
  std::size_t max_seq_len = 8192;

  std::size_t d_head() const { return d_model / n_heads; }

  void validate() const {
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
      throw ConfigError("attention: d_model " + std::to_string(d_model) +
                        " not divisible by n_heads " + std::to_string(n_heads));
    if (window && (*window == 0 || *window > max_seq_len))
      throw ConfigError("attention: window " + std::to_string(*window) +
                        " outside (0, max_seq_len]");
  }
};

namespace detail {
inline constexpr double kMaskValue = -1e9;
}

// Additive attention bias combining causal, sliding-window, and key-padding
// masks. Query row i sits at absolute position q_offset + i among the keys.
template <class T>
Tensor<T> attention_bias(std::size_t n_q, std::size_t n_k, bool causal,
                         std::size_t window /*0 = unbounded*/, long long q_offset = 0,
                         const std::vector<uint8_t>* key_pad = nullptr) {
  Tensor<T> bias = Tensor<T>::zeros({n_q, n_k});
  T* b = bias.data();
  for (std::size_t i = 0; i < n_q; ++i) {
    const long long qi = q_offset + static_cast<long long>(i);
    for (std::size_t j = 0; j < n_k; ++j) {
      const long long kj = static_cast<long long>(j);
      bool masked = false;
      if (causal && kj > qi) masked = true;
      if (window > 0 && kj <= qi - static_cast<long long>(window)) masked = true;
      if (key_pad && (*key_pad)[j]) masked = true;
      if (masked) b[i * n_k + j] = static_cast<T>(detail::kMaskValue);
    }
  }
  return bias;
}

// Y = softmax(Q K^T / sqrt(d_head)) V per head, heads concatenated (Eq. 1
// shape). Rotary variants are applied to q and k per head; kv_offset places
// query row i at key position kv_offset + i (used for cross-prefix forms).
template <class T>
Tensor<T> attention_parallel(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                             const AttentionConfig& cfg, long long pos0 = 0,
                             const std::vector<uint8_t>* key_pad = nullptr) {
  cfg.validate();
  const std::size_t n_q = q.rows(), n_k = k.rows();
  if (q.cols() != cfg.d_model || k.cols() != cfg.d_model || v.cols() != cfg.d_model ||
      k.rows() != v.rows())
    throw ShapeError("attention_parallel: shapes " + shape_str(q.shape()) + ", " +
                     shape_str(k.shape()) + ", " + shape_str(v.shape()));
  const std::size_t dh = cfg.d_head();
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(double(dh)));
  RotaryConfig rc{cfg.rotary_base, cfg.decay_scale_base};
  // Query rows start at key index (n_k - n_q) when decoding a suffix.
  const long long q_offset = static_cast<long long>(n_k) - static_cast<long long>(n_q);
  Tensor<T> bias = attention_bias<T>(n_q, n_k, cfg.causal, cfg.window.value_or(0), q_offset,
                                     key_pad);
  std::vector<Tensor<T>> head_outs;
  head_outs.reserve(cfg.n_heads);
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    Tensor<T> qh = slice_cols(q, h * dh, (h + 1) * dh);
    Tensor<T> kh = slice_cols(k, h * dh, (h + 1) * dh);
    Tensor<T> vh = slice_cols(v, h * dh, (h + 1) * dh);
    qh = apply_rotary(qh, pos0 + q_offset, cfg.positional, rc, +1);
    kh = apply_rotary(kh, pos0, cfg.positional, rc, -1);
    Tensor<T> scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    scores = add(scores, bias);
    Tensor<T> attn = softmax_rows(scores);
    head_outs.push_back(matmul(attn, vh));
  }
  return cfg.n_heads == 1 ? head_outs[0] : concat_cols(head_outs);
}

// Decode-time key/value cache. Keys are stored post-rotary; next_pos counts
// every token ever inserted so windowed trimming keeps absolute positions.
template <class T>
struct KvCache {
  std::size_t d_model = 0;
  std::size_t window = 0;  // 0 = unbounded
  std::size_t next_pos = 0;
  std::vector<std::vector<T>> keys;
  std::vector<std::vector<T>> values;

  std::size_t bytes() const {
    std::size_t b = 0;
    for (const auto& r : keys) b += r.size() * sizeof(T);
    for (const auto& r : values) b += r.size() * sizeof(T);
    return b;
  }
};

// One decoding step: appends (k_i, v_i), evicts outside the window, and
// returns the same row attention_parallel would produce at this position.
template <class T>
Tensor<T> attention_step(const Tensor<T>& q_i, const Tensor<T>& k_i, const Tensor<T>& v_i,
                         KvCache<T>& cache, const AttentionConfig& cfg) {
  cfg.validate();
  if (q_i.size() != cfg.d_model || k_i.size() != cfg.d_model || v_i.size() != cfg.d_model)
    throw ContractError("attention_step: vector size " + std::to_string(q_i.size()) +
                        " vs d_model " + std::to_string(cfg.d_model));
  if (cache.d_model == 0) {
    cache.d_model = cfg.d_model;
    cache.window = cfg.window.value_or(0);
  }
  if (cache.d_model != cfg.d_model || cache.window != cfg.window.value_or(0))
    throw ContractError("attention_step: cache built for different config");

  const std::size_t dh = cfg.d_head();
  const long long pos = static_cast<long long>(cache.next_pos);
  cache.next_pos++;
  RotaryConfig rc{cfg.rotary_base, cfg.decay_scale_base};
  const double zeta =
      cfg.positional == Positional::rotary_decay ? std::exp(-1.0 / cfg.decay_scale_base) : 1.0;

  std::vector<T> krow(k_i.data(), k_i.data() + cfg.d_model);
  std::vector<T> qrow(q_i.data(), q_i.data() + cfg.d_model);
  if (cfg.positional == Positional::rotary || cfg.positional == Positional::rotary_decay) {
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      detail::rotary_row(krow.data() + h * dh, dh, double(pos), cfg.rotary_base,
                         std::pow(zeta, -double(pos)), false);
      detail::rotary_row(qrow.data() + h * dh, dh, double(pos), cfg.rotary_base,
                         std::pow(zeta, double(pos)), false);
    }
  }
  cache.keys.push_back(std::move(krow));
  cache.values.emplace_back(v_i.data(), v_i.data() + cfg.d_model);
  if (cache.window > 0 && cache.keys.size() > cache.window) {
    cache.keys.erase(cache.keys.begin());
    cache.values.erase(cache.values.begin());
  }

  const std::size_t m = cache.keys.size();
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(double(dh)));
  Tensor<T> out = Tensor<T>::zeros({cfg.d_model});
  std::vector<T> scores(m);
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    const T* qh = qrow.data() + h * dh;
    T mx = std::numeric_limits<T>::lowest();
    for (std::size_t j = 0; j < m; ++j) {
      T s = 0;
      const T* kj = cache.keys[j].data() + h * dh;
      for (std::size_t c = 0; c < dh; ++c) s += qh[c] * kj[c];
      scores[j] = s * inv_sqrt;
      mx = std::max(mx, scores[j]);
    }
    T denom = 0;
    for (std::size_t j = 0; j < m; ++j) {
      scores[j] = std::exp(scores[j] - mx);
      denom += scores[j];
    }
    T* yh = out.data() + h * dh;
    for (std::size_t j = 0; j < m; ++j) {
      const T w = scores[j] / denom;
      const T* vj = cache.values[j].data() + h * dh;
      for (std::size_t c = 0; c < dh; ++c) yh[c] += w * vj[c];
    }
  }
  return out;
}

}  // namespace seqmix
