#pragma once

#include "seqmix/mixers/scan_ops.hpp"

namespace seqmix {

// Discrete input-independent SSM parameters (Eq. 6), A diagonal in v1.
template <class T>
struct SsmParams {
  Tensor<T> a;  // diagonal of A, length r
  Tensor<T> b;  // length r
  Tensor<T> c;  // length r

  static SsmParams make(Tensor<T> a, Tensor<T> b, Tensor<T> c) {
    if (b.size() != a.size() || c.size() != a.size())
      throw ConfigError("SsmParams: a, b, c must share length r");
    for (std::size_t s = 0; s < a.size(); ++s)
      if (std::abs(a.data()[s]) > T(1))
        throw ConfigError("SsmParams: |A| diagonal entry " + std::to_string(s) +
                          " exceeds 1 (spectral radius bound)");
    return SsmParams{std::move(a), std::move(b), std::move(c)};
  }

  std::size_t r() const { return a.size(); }
};

// Exact linear recurrence per input channel, H_0 = 0.
template <class T>
Tensor<T> ssm_scan(const Tensor<T>& x, const SsmParams<T>& params) {
  return ssm_scan_diag(x, params.a, params.b, params.c);
}

}  // namespace seqmix
