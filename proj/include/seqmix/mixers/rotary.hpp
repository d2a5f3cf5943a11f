#pragma once

#include <cmath>
#include <cstdint>

#include "seqmix/ops.hpp"

namespace seqmix {

enum class Positional { none, sinusoidal, rotary, rotary_decay };

struct RotaryConfig {
  double base = 10000.0;
  // rotary_decay scales q by zeta^pos and k by zeta^-pos with
  // zeta = exp(-1/decay_scale_base), so q.k picks up zeta^(m-n).
  double decay_scale_base = 512.0;
};

namespace detail {

template <class T>
void rotary_row(T* row, std::size_t d, double pos, double base, double decay, bool invert) {
  for (std::size_t j = 0; j < d / 2; ++j) {
    const double theta = pos * std::pow(base, -2.0 * double(j) / double(d));
    const double c = std::cos(theta), s = invert ? -std::sin(theta) : std::sin(theta);
    const T x0 = row[2 * j], x1 = row[2 * j + 1];
    row[2 * j] = static_cast<T>((c * x0 - s * x1) * decay);
    row[2 * j + 1] = static_cast<T>((s * x0 + c * x1) * decay);
  }
}

}  // namespace detail

// Rotates consecutive pairs of columns by position-dependent angles; row i
// gets position pos0 + i. decay_sign: +1 for queries, -1 for keys under
// rotary_decay, ignored for plain rotary. Linear in x, so the backward pass
// is the inverse rotation with the same magnitude factor.
template <class T>
Tensor<T> apply_rotary(const Tensor<T>& x, long long pos0, Positional kind,
                       const RotaryConfig& cfg = {}, int decay_sign = +1) {
  if (kind == Positional::none || kind == Positional::sinusoidal) return x;
  const std::size_t n = x.rows(), d = x.cols();
  if (d % 2 != 0)
    throw ConfigError("apply_rotary: head dimension must be even, got " + std::to_string(d));
  const double zeta =
      kind == Positional::rotary_decay ? std::exp(-1.0 / cfg.decay_scale_base) : 1.0;
  Tensor<T> out = Tensor<T>::from(x.shape(), x.values());
  for (std::size_t i = 0; i < n; ++i) {
    const double pos = double(pos0 + static_cast<long long>(i));
    const double decay = std::pow(zeta, double(decay_sign) * pos);
    detail::rotary_row(out.data() + i * d, d, pos, cfg.base, decay, false);
  }
  if (Tape<T>::active() && x.requires_grad()) {
    out.set_requires_grad(true);
    Tape<T>::active()->record("apply_rotary", [x, out, pos0, cfg, zeta, decay_sign, n,
                                               d]() mutable {
      // g_x = R(-theta) * g_y * decay  (the map is x -> decay * R(theta) x).
      std::vector<T> tmp(d);
      T* gx = detail::grad_ptr(x);
      const T* g = out.grad().data();
      for (std::size_t i = 0; i < n; ++i) {
        const double pos = double(pos0 + static_cast<long long>(i));
        const double decay = std::pow(zeta, double(decay_sign) * pos);
        std::copy(g + i * d, g + (i + 1) * d, tmp.begin());
        detail::rotary_row(tmp.data(), d, pos, cfg.base, decay, true);
        for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += tmp[j];
      }
    });
  }
  return out;
}

// Fixed sinusoidal position encoding rows [n x d], position offset pos0.
template <class T>
Tensor<T> sinusoidal_positions(std::size_t n, std::size_t d, long long pos0 = 0,
                               double base = 10000.0) {
  Tensor<T> out = Tensor<T>::zeros({n, d});
  T* v = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double pos = double(pos0 + static_cast<long long>(i));
    for (std::size_t j = 0; j < d / 2; ++j) {
      const double theta = pos * std::pow(base, -2.0 * double(j) / double(d));
      v[i * d + 2 * j] = static_cast<T>(std::sin(theta));
      v[i * d + 2 * j + 1] = static_cast<T>(std::cos(theta));
    }
  }
  return out;
}

}  // namespace seqmix
