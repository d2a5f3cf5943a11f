#pragma once

#include <cmath>
#include <vector>

#include "seqmix/ops.hpp"

namespace seqmix {

// Input-independent diagonal SSM (Eq. 6 with diagonal A), shared across the
// d input channels:
//   H_i[s,c] = a[s] H_{i-1}[s,c] + b[s] x_i[c],   y_i[c] = sum_s c[s] H_i[s,c]
template <class T>
Tensor<T> ssm_scan_diag(const Tensor<T>& x, const Tensor<T>& a, const Tensor<T>& b,
                        const Tensor<T>& c) {
  const std::size_t n = x.rows(), d = x.cols(), r = a.size();
  if (b.size() != r || c.size() != r)
    throw ShapeError("ssm_scan_diag: a/b/c lengths disagree");
  Tensor<T> out = Tensor<T>::zeros({n, d});
  // H trajectory, H_0 = 0 prepended, for the backward sweep.
  std::vector<T> traj((n + 1) * r * d, T(0));
  const T* xv = x.data();
  const T* av = a.data();
  const T* bv = b.data();
  const T* cv = c.data();
  T* yv = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    const T* hp = traj.data() + i * r * d;
    T* h = traj.data() + (i + 1) * r * d;
    for (std::size_t s = 0; s < r; ++s) {
      const T as = av[s], bs = bv[s], cs = cv[s];
      for (std::size_t col = 0; col < d; ++col) {
        const T hv = as * hp[s * d + col] + bs * xv[i * d + col];
        h[s * d + col] = hv;
        yv[i * d + col] += cs * hv;
      }
    }
  }
  if (Tape<T>::active() && (x.requires_grad() || a.requires_grad() || b.requires_grad() ||
                            c.requires_grad())) {
    out.set_requires_grad(true);
    Tape<T>::active()->record("ssm_scan_diag", [x, a, b, c, out, traj = std::move(traj), n, d,
                                                r]() mutable {
      const T* g = out.grad().data();
      const T* xv = x.data();
      const T* av = a.data();
      const T* bv = b.data();
      const T* cv = c.data();
      std::vector<T> G(r * d, T(0));  // dL/dH_i, swept backward
      for (std::size_t i = n; i-- > 0;) {
        const T* h = traj.data() + (i + 1) * r * d;
        const T* hp = traj.data() + i * r * d;
        for (std::size_t s = 0; s < r; ++s) {
          T dc_s = 0, da_s = 0, db_s = 0;
          for (std::size_t col = 0; col < d; ++col) {
            const T gy = g[i * d + col];
            G[s * d + col] += cv[s] * gy;
            dc_s += h[s * d + col] * gy;
            const T Gsc = G[s * d + col];
            da_s += Gsc * hp[s * d + col];
            db_s += Gsc * xv[i * d + col];
          }
          if (c.requires_grad()) detail::grad_ptr(c)[s] += dc_s;
          if (a.requires_grad()) detail::grad_ptr(a)[s] += da_s;
          if (b.requires_grad()) detail::grad_ptr(b)[s] += db_s;
          if (x.requires_grad()) {
            T* gx = detail::grad_ptr(x);
            for (std::size_t col = 0; col < d; ++col)
              gx[i * d + col] += G[s * d + col] * bv[s];
          }
          for (std::size_t col = 0; col < d; ++col) G[s * d + col] *= av[s];
        }
      }
    });
  }
  return out;
}

// Selective scan (Eq. 7 with zero-order-hold discretization):
//   Abar_i[s,c] = exp(delta[i,c] * a_cont[s,c])
//   H_i[s,c]    = Abar_i[s,c] H_{i-1}[s,c] + delta[i,c] B[i,s] u[i,c]
//   y_i[c]      = sum_s C[i,s] H_i[s,c]
// u, delta are [n x d]; a_cont is [r x d]; B, C are [n x r].
// Every Abar entry lies in (0,1) when delta > 0 and a_cont < 0.
template <class T>
Tensor<T> selective_scan(const Tensor<T>& u, const Tensor<T>& delta, const Tensor<T>& a_cont,
                         const Tensor<T>& B, const Tensor<T>& C) {
  const std::size_t n = u.rows(), d = u.cols();
  const std::size_t r = a_cont.rows();
  if (delta.rows() != n || delta.cols() != d || a_cont.cols() != d || B.rows() != n ||
      B.cols() != r || C.rows() != n || C.cols() != r)
    throw ShapeError("selective_scan: inconsistent operand shapes u=" + shape_str(u.shape()) +
                     " delta=" + shape_str(delta.shape()) + " a=" + shape_str(a_cont.shape()) +
                     " B=" + shape_str(B.shape()) + " C=" + shape_str(C.shape()));
  Tensor<T> out = Tensor<T>::zeros({n, d});
  std::vector<T> traj((n + 1) * r * d, T(0));  // H trajectory, H_0 = 0
  std::vector<T> abar(n * r * d);
  const T* uv = u.data();
  const T* dv = delta.data();
  const T* av = a_cont.data();
  const T* Bv = B.data();
  const T* Cv = C.data();
  T* yv = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    const T* hp = traj.data() + i * r * d;
    T* h = traj.data() + (i + 1) * r * d;
    T* ab = abar.data() + i * r * d;
    for (std::size_t s = 0; s < r; ++s) {
      const T bis = Bv[i * r + s];
      const T cis = Cv[i * r + s];
      for (std::size_t col = 0; col < d; ++col) {
        const T dt = dv[i * d + col];
        const T A = std::exp(dt * av[s * d + col]);
        ab[s * d + col] = A;
        const T hv = A * hp[s * d + col] + dt * bis * uv[i * d + col];
        h[s * d + col] = hv;
        yv[i * d + col] += cis * hv;
      }
    }
    for (std::size_t col = 0; col < d; ++col)
      if (!std::isfinite(yv[i * d + col]))
        throw NumericError("selective_scan: non-finite output at position " +
                           std::to_string(i));
  }
  const bool rg = u.requires_grad() || delta.requires_grad() || a_cont.requires_grad() ||
                  B.requires_grad() || C.requires_grad();
  if (Tape<T>::active() && rg) {
    out.set_requires_grad(true);
    Tape<T>::active()->record("selective_scan", [u, delta, a_cont, B, C, out,
                                                 traj = std::move(traj),
                                                 abar = std::move(abar), n, d, r]() mutable {
      const T* g = out.grad().data();
      const T* uv = u.data();
      const T* dv = delta.data();
      const T* av = a_cont.data();
      const T* Bv = B.data();
      const T* Cv = C.data();
      T* gu = u.requires_grad() ? detail::grad_ptr(u) : nullptr;
      T* gdelta = delta.requires_grad() ? detail::grad_ptr(delta) : nullptr;
      T* ga = a_cont.requires_grad() ? detail::grad_ptr(a_cont) : nullptr;
      T* gB = B.requires_grad() ? detail::grad_ptr(B) : nullptr;
      T* gC = C.requires_grad() ? detail::grad_ptr(C) : nullptr;
      std::vector<T> G(r * d, T(0));  // dL/dH_i
      for (std::size_t i = n; i-- > 0;) {
        const T* h = traj.data() + (i + 1) * r * d;
        const T* hp = traj.data() + i * r * d;
        const T* ab = abar.data() + i * r * d;
        for (std::size_t s = 0; s < r; ++s) {
          const T bis = Bv[i * r + s];
          T dC_is = 0, dB_is = 0;
          for (std::size_t col = 0; col < d; ++col) {
            const std::size_t sc = s * d + col;
            const T gy = g[i * d + col];
            const T cis = Cv[i * r + s];
            G[sc] += cis * gy;
            dC_is += h[sc] * gy;
            const T Gsc = G[sc];
            const T dt = dv[i * d + col];
            // H_i = Abar H_{i-1} + dt B u; Abar = exp(dt a).
            if (gdelta)
              gdelta[i * d + col] +=
                  Gsc * (ab[sc] * av[sc] * hp[sc] + bis * uv[i * d + col]);
            if (ga) ga[sc] += Gsc * ab[sc] * dt * hp[sc];
            dB_is += Gsc * dt * uv[i * d + col];
            if (gu) gu[i * d + col] += Gsc * dt * bis;
            G[sc] = Gsc * ab[sc];
          }
          if (gC) gC[i * r + s] += dC_is;
          if (gB) gB[i * r + s] += dB_is;
        }
      }
    });
  }
  return out;
}

}  // namespace seqmix
