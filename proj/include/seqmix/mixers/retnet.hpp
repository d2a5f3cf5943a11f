#pragma once

#include <cmath>
#include <vector>

#include "seqmix/ops.hpp"

namespace seqmix {

struct RetNetConfig {
  std::size_t d_model = 0;
  std::size_t n_heads = 1;
  std::vector<double> gamma;  // per head, each in (0, 1]

  // Published retention convention: gamma_h = 1 - 2^(-5-h).
  static std::vector<double> default_gammas(std::size_t n_heads) {
    std::vector<double> g(n_heads);
    for (std::size_t h = 0; h < n_heads; ++h) g[h] = 1.0 - std::pow(2.0, -5.0 - double(h));
    return g;
  }

  void validate() const {
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
      throw ConfigError("retnet: d_model not divisible by n_heads");
    if (gamma.size() != n_heads) throw ConfigError("retnet: one gamma per head required");
    for (double g : gamma)
      if (!(g > 0.0 && g <= 1.0)) throw ConfigError("retnet: gamma must lie in (0, 1]");
  }
};

namespace detail {
// Constant tensor whose row i repeats factors[i] across all columns.
template <class T>
Tensor<T> row_factors(const std::vector<T>& factors, std::size_t cols) {
  Tensor<T> out = Tensor<T>::zeros({factors.size(), cols});
  for (std::size_t i = 0; i < factors.size(); ++i)
    std::fill(out.data() + i * cols, out.data() + (i + 1) * cols, factors[i]);
  return out;
}
}  // namespace detail

// Decay matrix D[i,j] = gamma^(i-j) for j <= i, 0 above the diagonal.
template <class T>
Tensor<T> retention_decay_matrix(std::size_t n, double gamma) {
  Tensor<T> d = Tensor<T>::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j)
      d.data()[i * n + j] = static_cast<T>(std::pow(gamma, double(i - j)));
  return d;
}

// Unrolled Eq. 5: Y = ((Q K^T) . D) V, single head, no 1/sqrt(d) factor.
template <class T>
Tensor<T> retnet_parallel(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                          double gamma) {
  const std::size_t n = q.rows();
  if (k.rows() != n || v.rows() != n)
    throw ShapeError("retnet_parallel: mismatched sequence lengths");
  Tensor<T> scores = mul(matmul(q, transpose(k)), retention_decay_matrix<T>(n, gamma));
  return matmul(scores, v);
}

// One recurrence step: S' = gamma S + k v^T, y = S'^T q. S is [d_k x d_v].
template <class T>
Tensor<T> retnet_step(const Tensor<T>& q_i, const Tensor<T>& k_i, const Tensor<T>& v_i,
                      std::vector<T>& S, double gamma) {
  const std::size_t dk = k_i.size(), dv = v_i.size();
  if (S.empty()) S.assign(dk * dv, T(0));
  if (S.size() != dk * dv) throw ContractError("retnet_step: state size mismatch");
  const T g = static_cast<T>(gamma);
  const T* kv = k_i.data();
  const T* vv = v_i.data();
  for (std::size_t s = 0; s < dk; ++s)
    for (std::size_t c = 0; c < dv; ++c) S[s * dv + c] = g * S[s * dv + c] + kv[s] * vv[c];
  Tensor<T> y = Tensor<T>::zeros({dv});
  const T* qv = q_i.data();
  for (std::size_t s = 0; s < dk; ++s)
    for (std::size_t c = 0; c < dv; ++c) y.data()[c] += S[s * dv + c] * qv[s];
  return y;
}

// Chunkwise-recurrent retention: parallel masked form inside each chunk plus
// a decayed carry of the running state across chunks. Equal to both the
// parallel and stepwise forms for any chunk size.
template <class T>
Tensor<T> retnet_chunkwise(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                           double gamma, std::size_t chunk_size) {
  if (chunk_size == 0) throw ConfigError("retnet_chunkwise: chunk_size must be positive");
  const std::size_t n = q.rows(), dk = q.cols(), dv = v.cols();
  Tensor<T> state = Tensor<T>::zeros({dk, dv});  // S after the previous chunk
  std::vector<Tensor<T>> outs;
  for (std::size_t s0 = 0; s0 < n; s0 += chunk_size) {
    const std::size_t s1 = std::min(n, s0 + chunk_size);
    const std::size_t len = s1 - s0;
    Tensor<T> qc = slice_rows(q, s0, s1);
    Tensor<T> kc = slice_rows(k, s0, s1);
    Tensor<T> vc = slice_rows(v, s0, s1);

    Tensor<T> intra =
        matmul(mul(matmul(qc, transpose(kc)), retention_decay_matrix<T>(len, gamma)), vc);

    // Cross-chunk term: y_t += gamma^(t+1) S_prev^T q_t.
    std::vector<T> qdecay(len);
    for (std::size_t t = 0; t < len; ++t)
      qdecay[t] = static_cast<T>(std::pow(gamma, double(t + 1)));
    Tensor<T> cross = mul(matmul(qc, state), detail::row_factors(qdecay, dv));
    outs.push_back(add(intra, cross));

    // S_new = gamma^len S_prev + sum_t gamma^(len-1-t) k_t v_t^T.
    std::vector<T> kdecay(len);
    for (std::size_t t = 0; t < len; ++t)
      kdecay[t] = static_cast<T>(std::pow(gamma, double(len - 1 - t)));
    Tensor<T> kscaled = mul(kc, detail::row_factors(kdecay, dk));
    state = add(scale(state, static_cast<T>(std::pow(gamma, double(len)))),
                matmul(transpose(kscaled), vc));
  }
  return outs.size() == 1 ? outs[0] : concat_rows(outs);
}

}  // namespace seqmix
