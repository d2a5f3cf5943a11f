#pragma once

#include <atomic>
#include <vector>

#include "seqmix/ops.hpp"

namespace seqmix {

enum class FeatureMap { identity, elu_plus_one };

// elu(x) + 1: positive feature map used by kernelized attention.
template <class T>
Tensor<T> elu_plus_one(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  kernels::map(x.data(), out.data(), x.size(),
               [](T v) { return v > T(0) ? v + T(1) : std::exp(v); });
  if (Tape<T>::active() && x.requires_grad()) {
    out.set_requires_grad(true);
    Tape<T>::active()->record("elu_plus_one", [x, out]() mutable {
      const auto& g = out.grad();
      T* gx = detail::grad_ptr(x);
      const T* xv = x.data();
      for (std::size_t i = 0; i < g.size(); ++i)
        gx[i] += g[i] * (xv[i] > T(0) ? T(1) : std::exp(xv[i]));
    });
  }
  return out;
}

template <class T>
Tensor<T> apply_feature_map(const Tensor<T>& x, FeatureMap phi) {
  return phi == FeatureMap::identity ? x : elu_plus_one(x);
}

inline constexpr double kNormalizerEps = 1e-6;

// Count of normalizer clamps since the last reset; surfaced in diagnostics.
std::uint64_t linear_attention_clamp_count();
void reset_linear_attention_clamp_count();
void bump_linear_attention_clamp_count();

namespace detail {
template <class T>
T clamp_denominator(T den) {
  if (std::abs(den) < T(kNormalizerEps)) {
    bump_linear_attention_clamp_count();
    return den < T(0) ? T(-kNormalizerEps) : T(kNormalizerEps);
  }
  return den;
}
}  // namespace detail

// y = num / max(|den|, eps), den treated as a constant when clamped.
template <class T>
Tensor<T> div_by_scalar_clamped(const Tensor<T>& num, const Tensor<T>& den) {
  if (den.size() != 1) throw ContractError("div_by_scalar_clamped: denominator not scalar");
  const T d = detail::clamp_denominator(den.item());
  const bool clamped = d != den.item();
  Tensor<T> out = Tensor<T>::zeros(num.shape());
  const T inv = T(1) / d;
  kernels::map(num.data(), out.data(), num.size(), [inv](T v) { return v * inv; });
  if (Tape<T>::active() && (num.requires_grad() || den.requires_grad())) {
    out.set_requires_grad(true);
    Tape<T>::active()->record("div_by_scalar_clamped", [num, den, out, d, inv,
                                                        clamped]() mutable {
      const auto& g = out.grad();
      if (num.requires_grad()) {
        T* gn = detail::grad_ptr(num);
        for (std::size_t i = 0; i < g.size(); ++i) gn[i] += g[i] * inv;
      }
      if (den.requires_grad() && !clamped) {
        T acc = 0;
        const T* nv = num.data();
        for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * nv[i];
        detail::grad_ptr(den)[0] += -acc / (d * d);
      }
    });
  }
  return out;
}

// Running state of the recurrent form: S_i = S_{i-1} + phi(k_i) v_i^T,
// z_i = z_{i-1} + phi(k_i), both zero at sequence start.
template <class T>
struct LinearAttentionState {
  std::size_t r = 0, d = 0;
  std::vector<T> S;  // r x d
  std::vector<T> z;  // r

  static LinearAttentionState zeros(std::size_t r, std::size_t d) {
    LinearAttentionState st;
    st.r = r;
    st.d = d;
    st.S.assign(r * d, T(0));
    st.z.assign(r, T(0));
    return st;
  }
  std::size_t bytes() const { return (S.size() + z.size()) * sizeof(T); }
};

// Causal kernelized attention via running sums over j <= i:
//   y_i = S_i^T phi(q_i) / (z_i^T phi(q_i)),
// with the denominator omitted when normalize = false.
template <class T>
Tensor<T> linear_attention_parallel(const Tensor<T>& q, const Tensor<T>& k,
                                    const Tensor<T>& v, FeatureMap phi,
                                    bool normalize = true) {
  const std::size_t n = q.rows(), d = v.cols();
  if (k.rows() != n || v.rows() != n || k.cols() != q.cols())
    throw ShapeError("linear_attention_parallel: shapes " + shape_str(q.shape()) + ", " +
                     shape_str(k.shape()) + ", " + shape_str(v.shape()));
  Tensor<T> fq = apply_feature_map(q, phi);
  Tensor<T> fk = apply_feature_map(k, phi);
  const std::size_t r = fq.cols();
  Tensor<T> S = Tensor<T>::zeros({r, d});
  Tensor<T> z = Tensor<T>::zeros({r, 1});
  std::vector<Tensor<T>> rows;
  rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor<T> fki = slice_rows(fk, i, i + 1);           // [1 x r]
    Tensor<T> vi = slice_rows(v, i, i + 1);             // [1 x d]
    S = add(S, matmul(transpose(fki), vi));             // + phi(k_i) v_i^T
    z = add(z, transpose(fki));                         // + phi(k_i)
    Tensor<T> fqi = slice_rows(fq, i, i + 1);           // [1 x r]
    Tensor<T> num = matmul(fqi, S);                     // [1 x d] = (S^T phi(q_i))^T
    rows.push_back(normalize ? div_by_scalar_clamped(num, matmul(fqi, z)) : num);
  }
  return concat_rows(rows);
}

// One recurrent step (Eq. 4 update followed by the Eq. 3 readout).
template <class T>
Tensor<T> linear_attention_step(const Tensor<T>& q_i, const Tensor<T>& k_i,
                                const Tensor<T>& v_i, LinearAttentionState<T>& state,
                                FeatureMap phi, bool normalize = true) {
  const std::size_t d = v_i.size();
  std::vector<T> fk(k_i.data(), k_i.data() + k_i.size());
  std::vector<T> fq(q_i.data(), q_i.data() + q_i.size());
  if (phi == FeatureMap::elu_plus_one) {
    for (auto& x : fk) x = x > T(0) ? x + T(1) : std::exp(x);
    for (auto& x : fq) x = x > T(0) ? x + T(1) : std::exp(x);
  }
  const std::size_t r = fk.size();
  if (state.r == 0) state = LinearAttentionState<T>::zeros(r, d);
  if (state.r != r || state.d != d)
    throw ContractError("linear_attention_step: state size mismatch");
  for (std::size_t s = 0; s < r; ++s) {
    for (std::size_t c = 0; c < d; ++c) state.S[s * d + c] += fk[s] * v_i.data()[c];
    state.z[s] += fk[s];
  }
  Tensor<T> y = Tensor<T>::zeros({d});
  T den = 0;
  for (std::size_t s = 0; s < r; ++s) den += state.z[s] * fq[s];
  const T scale_by = normalize ? T(1) / detail::clamp_denominator(den) : T(1);
  T* yv = y.data();
  for (std::size_t s = 0; s < r; ++s)
    for (std::size_t c = 0; c < d; ++c) yv[c] += state.S[s * d + c] * fq[s];
  for (std::size_t c = 0; c < d; ++c) yv[c] *= scale_by;
  return y;
}

}  // namespace seqmix
