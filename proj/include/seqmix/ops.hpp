#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "seqmix/kernels.hpp"
#include "seqmix/tensor.hpp"

namespace seqmix {

namespace detail {

// Tensor is a shared handle; grad lives in the payload, so handle constness
// does not protect it.
template <class T>
T* grad_ptr(const Tensor<T>& t) {
  return const_cast<Tensor<T>&>(t).grad().data();
}

template <class T>
T sigmoid_of(T x) {
  if (x >= T(0)) {
    T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
T softplus_of(T x) {
  if (x > T(20)) return x;
  if (x < T(-20)) return std::exp(x);
  return std::log1p(std::exp(x));
}

template <class T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
  if (k != k2)
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  Tensor<T> out = Tensor<T>::zeros({m, n});
  kernels::matmul_nn(a.data(), b.data(), out.data(), m, k, n);
  if (Tape<T>::active() && (a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    Tape<T>::active()->record("matmul", [a, b, out, m, k, n]() mutable {
      const T* g = out.grad().data();
      if (a.requires_grad())
        kernels::matmul_nt(g, b.data(), detail::grad_ptr(a), m, n, k, true);
      if (b.requires_grad())
        kernels::matmul_tn(a.data(), g, detail::grad_ptr(b), k, m, n, true);
    });
  }
  return out;
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor<T> out = Tensor<T>::zeros({n, m});
  const T* src = a.data();
  T* dst = out.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
  if (Tape<T>::active() && a.requires_grad()) {
    out.set_requires_grad(true);
    Tape<T>::active()->record("transpose", [a, out, m, n]() mutable {
      const T* g = out.grad().data();
      T* ga = detail::grad_ptr(a);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "add");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  kernels::zip(a.data(), b.data(), out.data(), a.size(), [](T x, T y) { return x + y; });
  if (Tape<T>::active() && (a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    Tape<T>::active()->record("add", [a, b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) {
        T* ga = detail::grad_ptr(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        T* gb = detail::grad_ptr(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "sub");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  kernels::zip(a.data(), b.data(), out.data(), a.size(), [](T x, T y) { return x - y; });
  if (Tape<T>::active() && (a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    Tape<T>::active()->record("sub", [a, b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) {
        T* ga = detail::grad_ptr(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        T* gb = detail::grad_ptr(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "mul");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  kernels::zip(a.data(), b.data(), out.data(), a.size(), [](T x, T y) { return x * y; });
  if (Tape<T>::active() && (a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    Tape<T>::active()->record("mul", [a, b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) {
        T* ga = detail::grad_ptr(a);
        const T* bv = b.data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
      }
      if (b.requires_grad()) {
        T* gb = detail::grad_ptr(b);
        const T* av = a.data();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  kernels::map(a.data(), out.data(), a.size(), [c](T x) { return c * x; });
  if (Tape<T>::active() && a.requires_grad()) {
    out.set_requires_grad(true);
    Tape<T>::active()->record("scale", [a, out, c]() mutable {
      const auto& g = out.grad();
      T* ga = detail::grad_ptr(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
  }
  return out;
}

// Broadcast a length-n vector over every row of a [m x n] matrix.
template <class T>
Tensor<T> add_rowvec(const Tensor<T>& a, const Tensor<T>& v) {
  const std::size_t m = a.rows(), n = a.cols();
  if (v.size() != n)
    throw ShapeError("add_rowvec: vector " + shape_str(v.shape()) + " vs matrix " +
                     shape_str(a.shape()));
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const T* av = a.data();
  const T* vv = v.data();
  T* ov = out.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) ov[i * n + j] = av[i * n + j] + vv[j];
  if (Tape<T>::active() && (a.requires_grad() || v.requires_grad())) {
    out.set_requires_grad(true);
    Tape<T>::active()->record("add_rowvec", [a, v, out, m, n]() mutable {
      const T* g = out.grad().data();
      if (a.requires_grad()) {
        T* ga = detail::grad_ptr(a);
        for (std::size_t i = 0; i < m * n; ++i) ga[i] += g[i];
      }
      if (v.requires_grad()) {
        T* gv = detail::grad_ptr(v);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gv[j] += g[i * n + j];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  kernels::map(a.data(), out.data(), a.size(), [](T x) { return x > T(0) ? x : T(0); });
  if (Tape<T>::active() && a.requires_grad()) {
    out.set_requires_grad(true);
    Tape<T>::active()->record("relu", [a, out]() mutable {
      const auto& g = out.grad();
      T* ga = detail::grad_ptr(a);
      const T* av = a.data();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (av[i] > T(0)) ga[i] += g[i];
    });
  }
  return out;
}

template <class T>
Tensor<T> silu(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  kernels::map(a.data(), out.data(), a.size(),
               [](T x) { return x * detail::sigmoid_of(x); });
  if (Tape<T>::active() && a.requires_grad()) {
    out.set_requires_grad(true);
    Tape<T>::active()->record("silu", [a, out]() mutable {
      const auto& g = out.grad();
      T* ga = detail::grad_ptr(a);
      const T* av = a.data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T s = detail::sigmoid_of(av[i]);
        ga[i] += g[i] * s * (T(1) + av[i] * (T(1) - s));
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> exp(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  kernels::map(a.data(), out.data(), a.size(), [](T x) { return std::exp(x); });
  if (Tape<T>::active() && a.requires_grad()) {
    out.set_requires_grad(true);
    Tape<T>::active()->record("exp", [a, out]() mutable {
      const auto& g = out.grad();
      T* ga = detail::grad_ptr(a);
      const T* ov = out.data();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * ov[i];
    });
  }
  return out;
}

template <class T>
Tensor<T> softplus(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  kernels::map(a.data(), out.data(), a.size(), [](T x) { return detail::softplus_of(x); });
  if (Tape<T>::active() && a.requires_grad()) {
    out.set_requires_grad(true);
    Tape<T>::active()->record("softplus", [a, out]() mutable {
      const auto& g = out.grad();
      T* ga = detail::grad_ptr(a);
      const T* av = a.data();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * detail::sigmoid_of(av[i]);
    });
  }
  return out;
}

// swiglu(gate, val) = silu(gate) * val, the gated half of a SwiGLU layer.
template <class T>
Tensor<T> swiglu(const Tensor<T>& gate, const Tensor<T>& val) {
  detail::check_same_shape(gate, val, "swiglu");
  Tensor<T> out = Tensor<T>::zeros(gate.shape());
  kernels::zip(gate.data(), val.data(), out.data(), gate.size(),
               [](T gx, T vx) { return gx * detail::sigmoid_of(gx) * vx; });
  if (Tape<T>::active() && (gate.requires_grad() || val.requires_grad())) {
    out.set_requires_grad(true);
    Tape<T>::active()->record("swiglu", [gate, val, out]() mutable {
      const auto& g = out.grad();
      const T* gv = gate.data();
      const T* vv = val.data();
      if (gate.requires_grad()) {
        T* gg = detail::grad_ptr(gate);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const T s = detail::sigmoid_of(gv[i]);
          gg[i] += g[i] * vv[i] * s * (T(1) + gv[i] * (T(1) - s));
        }
      }
      if (val.requires_grad()) {
        T* gval = detail::grad_ptr(val);
        for (std::size_t i = 0; i < g.size(); ++i)
          gval[i] += g[i] * gv[i] * detail::sigmoid_of(gv[i]);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> rmsnorm(const Tensor<T>& x, const Tensor<T>& w, T eps = T(1e-6)) {
  const std::size_t m = x.rows(), n = x.cols();
  if (w.size() != n)
    throw ShapeError("rmsnorm: weight " + shape_str(w.shape()) + " vs " + shape_str(x.shape()));
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  std::vector<T> inv_rms(m);
  const T* xv = x.data();
  const T* wv = w.data();
  T* ov = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    T ss = 0;
    for (std::size_t j = 0; j < n; ++j) ss += xv[i * n + j] * xv[i * n + j];
    const T inv = T(1) / std::sqrt(ss / T(n) + eps);
    inv_rms[i] = inv;
    for (std::size_t j = 0; j < n; ++j) ov[i * n + j] = xv[i * n + j] * inv * wv[j];
  }
  if (Tape<T>::active() && (x.requires_grad() || w.requires_grad())) {
    out.set_requires_grad(true);
    Tape<T>::active()->record("rmsnorm", [x, w, out, inv_rms = std::move(inv_rms), m,
                                          n]() mutable {
      const T* g = out.grad().data();
      const T* xv = x.data();
      const T* wv = w.data();
      for (std::size_t i = 0; i < m; ++i) {
        const T inv = inv_rms[i];
        // dxhat = g * w; dx = (dxhat - xhat * mean(dxhat . xhat)) * inv
        T dot = 0;
        for (std::size_t j = 0; j < n; ++j)
          dot += g[i * n + j] * wv[j] * xv[i * n + j] * inv;
        dot /= T(n);
        if (x.requires_grad()) {
          T* gx = detail::grad_ptr(x);
          for (std::size_t j = 0; j < n; ++j)
            gx[i * n + j] += (g[i * n + j] * wv[j] - xv[i * n + j] * inv * dot) * inv;
        }
        if (w.requires_grad()) {
          T* gw = detail::grad_ptr(w);
          for (std::size_t j = 0; j < n; ++j) gw[j] += g[i * n + j] * xv[i * n + j] * inv;
        }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                    T eps = T(1e-5)) {
  const std::size_t m = x.rows(), n = x.cols();
  if (w.size() != n || b.size() != n)
    throw ShapeError("layernorm: weight/bias size mismatch for " + shape_str(x.shape()));
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  std::vector<T> mu(m), inv_sigma(m);
  const T* xv = x.data();
  const T* wv = w.data();
  const T* bv = b.data();
  T* ov = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    T mean = 0;
    for (std::size_t j = 0; j < n; ++j) mean += xv[i * n + j];
    mean /= T(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const T dxx = xv[i * n + j] - mean;
      var += dxx * dxx;
    }
    var /= T(n);
    const T inv = T(1) / std::sqrt(var + eps);
    mu[i] = mean;
    inv_sigma[i] = inv;
    for (std::size_t j = 0; j < n; ++j)
      ov[i * n + j] = (xv[i * n + j] - mean) * inv * wv[j] + bv[j];
  }
  if (Tape<T>::active() && (x.requires_grad() || w.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    Tape<T>::active()->record("layernorm", [x, w, b, out, mu = std::move(mu),
                                            inv_sigma = std::move(inv_sigma), m, n]() mutable {
      const T* g = out.grad().data();
      const T* xv = x.data();
      const T* wv = w.data();
      for (std::size_t i = 0; i < m; ++i) {
        const T inv = inv_sigma[i];
        T m1 = 0, m2 = 0;
        for (std::size_t j = 0; j < n; ++j) {
          const T xhat = (xv[i * n + j] - mu[i]) * inv;
          const T dxhat = g[i * n + j] * wv[j];
          m1 += dxhat;
          m2 += dxhat * xhat;
        }
        m1 /= T(n);
        m2 /= T(n);
        if (x.requires_grad()) {
          T* gx = detail::grad_ptr(x);
          for (std::size_t j = 0; j < n; ++j) {
            const T xhat = (xv[i * n + j] - mu[i]) * inv;
            gx[i * n + j] += (g[i * n + j] * wv[j] - m1 - xhat * m2) * inv;
          }
        }
        if (w.requires_grad()) {
          T* gw = detail::grad_ptr(w);
          for (std::size_t j = 0; j < n; ++j)
            gw[j] += g[i * n + j] * (xv[i * n + j] - mu[i]) * inv;
        }
        if (b.requires_grad()) {
          T* gb = detail::grad_ptr(b);
          for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax / loss
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  const std::size_t m = x.rows(), n = x.cols();
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  kernels::softmax_rows(x.data(), out.data(), m, n);
  if (Tape<T>::active() && x.requires_grad()) {
    out.set_requires_grad(true);
    Tape<T>::active()->record("softmax_rows", [x, out, m, n]() mutable {
      const T* g = out.grad().data();
      const T* y = out.data();
      T* gx = detail::grad_ptr(x);
      for (std::size_t i = 0; i < m; ++i) {
        T dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
        for (std::size_t j = 0; j < n; ++j)
          gx[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
      }
    });
  }
  return out;
}

// Per-row cross entropy: loss[i] = logsumexp(logits[i]) - logits[i][target[i]].
template <class T>
Tensor<T> cross_entropy_rows(const Tensor<T>& logits, const std::vector<int>& targets) {
  const std::size_t m = logits.rows(), v = logits.cols();
  if (targets.size() != m)
    throw ContractError("cross_entropy_rows: " + std::to_string(targets.size()) +
                        " targets for " + std::to_string(m) + " rows");
  for (int t : targets)
    if (t < 0 || static_cast<std::size_t>(t) >= v)
      throw ContractError("cross_entropy_rows: target id " + std::to_string(t) +
                          " outside vocab " + std::to_string(v));
  Tensor<T> probs = Tensor<T>::zeros(logits.shape());
  kernels::softmax_rows(logits.data(), probs.data(), m, v);
  Tensor<T> out = Tensor<T>::zeros({m});
  const T* lv = logits.data();
  T* ov = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    T mx = lv[i * v];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, lv[i * v + j]);
    T sum = 0;
    for (std::size_t j = 0; j < v; ++j) sum += std::exp(lv[i * v + j] - mx);
    ov[i] = mx + std::log(sum) - lv[i * v + targets[i]];
  }
  if (Tape<T>::active() && logits.requires_grad()) {
    out.set_requires_grad(true);
    Tape<T>::active()->record("cross_entropy_rows", [logits, probs, out, targets, m,
                                                     v]() mutable {
      const T* g = out.grad().data();
      const T* pv = probs.data();
      T* gl = detail::grad_ptr(logits);
      for (std::size_t i = 0; i < m; ++i) {
        const T gi = g[i];
        for (std::size_t j = 0; j < v; ++j) gl[i * v + j] += gi * pv[i * v + j];
        gl[i * v + targets[i]] -= gi;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> embedding_lookup(const Tensor<T>& table, const std::vector<int>& ids) {
  const std::size_t v = table.rows(), d = table.cols(), n = ids.size();
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      throw ContractError("embedding_lookup: id " + std::to_string(id) + " outside table " +
                          shape_str(table.shape()));
  Tensor<T> out = Tensor<T>::zeros({n, d});
  const T* tv = table.data();
  T* ov = out.data();
  for (std::size_t i = 0; i < n; ++i)
    std::memcpy(ov + i * d, tv + static_cast<std::size_t>(ids[i]) * d, d * sizeof(T));
  if (Tape<T>::active() && table.requires_grad()) {
    out.set_requires_grad(true);
    Tape<T>::active()->record("embedding_lookup", [table, out, ids, d]() mutable {
      const T* g = out.grad().data();
      T* gt = detail::grad_ptr(table);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        T* row = gt + static_cast<std::size_t>(ids[i]) * d;
        for (std::size_t j = 0; j < d; ++j) row[j] += g[i * d + j];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: empty input list");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p.cols() != n)
      throw ShapeError("concat_rows: column mismatch " + shape_str(p.shape()));
    m += p.rows();
    rg = rg || p.requires_grad();
  }
  Tensor<T> out = Tensor<T>::zeros({m, n});
  T* ov = out.data();
  std::size_t r = 0;
  for (const auto& p : parts) {
    std::memcpy(ov + r * n, p.data(), p.size() * sizeof(T));
    r += p.rows();
  }
  if (Tape<T>::active() && rg) {
    out.set_requires_grad(true);
    Tape<T>::active()->record("concat_rows", [parts, out, n]() mutable {
      const T* g = out.grad().data();
      std::size_t r = 0;
      for (auto& p : parts) {
        if (p.requires_grad()) {
          T* gp = detail::grad_ptr(p);
          for (std::size_t i = 0; i < p.size(); ++i) gp[i] += g[r * n + i];
        }
        r += p.rows();
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: empty input list");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p.rows() != m) throw ShapeError("concat_cols: row mismatch " + shape_str(p.shape()));
    n += p.cols();
    rg = rg || p.requires_grad();
  }
  Tensor<T> out = Tensor<T>::zeros({m, n});
  T* ov = out.data();
  std::size_t c0 = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p.cols();
    const T* pv = p.data();
    for (std::size_t i = 0; i < m; ++i)
      std::memcpy(ov + i * n + c0, pv + i * pc, pc * sizeof(T));
    c0 += pc;
  }
  if (Tape<T>::active() && rg) {
    out.set_requires_grad(true);
    Tape<T>::active()->record("concat_cols", [parts, out, m, n]() mutable {
      const T* g = out.grad().data();
      std::size_t c0 = 0;
      for (auto& p : parts) {
        const std::size_t pc = p.cols();
        if (p.requires_grad()) {
          T* gp = detail::grad_ptr(p);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < pc; ++j) gp[i * pc + j] += g[i * n + c0 + j];
        }
        c0 += pc;
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t r0, std::size_t r1) {
  const std::size_t m = x.rows(), n = x.cols();
  if (r0 >= r1 || r1 > m)
    throw ShapeError("slice_rows: range [" + std::to_string(r0) + ", " + std::to_string(r1) +
                     ") outside " + shape_str(x.shape()));
  Tensor<T> out = Tensor<T>::zeros({r1 - r0, n});
  std::memcpy(out.data(), x.data() + r0 * n, (r1 - r0) * n * sizeof(T));
  if (Tape<T>::active() && x.requires_grad()) {
    out.set_requires_grad(true);
    Tape<T>::active()->record("slice_rows", [x, out, r0, n]() mutable {
      const T* g = out.grad().data();
      T* gx = detail::grad_ptr(x);
      for (std::size_t i = 0; i < out.size(); ++i) gx[r0 * n + i] += g[i];
    });
  }
  return out;
}

template <class T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t c0, std::size_t c1) {
  const std::size_t m = x.rows(), n = x.cols();
  if (c0 >= c1 || c1 > n)
    throw ShapeError("slice_cols: range [" + std::to_string(c0) + ", " + std::to_string(c1) +
                     ") outside " + shape_str(x.shape()));
  const std::size_t w = c1 - c0;
  Tensor<T> out = Tensor<T>::zeros({m, w});
  const T* xv = x.data();
  T* ov = out.data();
  for (std::size_t i = 0; i < m; ++i)
    std::memcpy(ov + i * w, xv + i * n + c0, w * sizeof(T));
  if (Tape<T>::active() && x.requires_grad()) {
    out.set_requires_grad(true);
    Tape<T>::active()->record("slice_cols", [x, out, c0, m, n, w]() mutable {
      const T* g = out.grad().data();
      T* gx = detail::grad_ptr(x);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) gx[i * n + c0 + j] += g[i * w + j];
    });
  }
  return out;
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, std::vector<std::size_t> shape) {
  Tensor<T> out = Tensor<T>::from(std::move(shape), x.values());
  if (out.size() != x.size())
    throw ShapeError("reshape: element count changed, " + shape_str(x.shape()) + " -> " +
                     shape_str(out.shape()));
  if (Tape<T>::active() && x.requires_grad()) {
    out.set_requires_grad(true);
    Tape<T>::active()->record("reshape", [x, out]() mutable {
      const auto& g = out.grad();
      T* gx = detail::grad_ptr(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  const T* xv = x.data();
  for (std::size_t i = 0; i < x.size(); ++i) s += xv[i];
  Tensor<T> out = Tensor<T>::scalar(s);
  if (Tape<T>::active() && x.requires_grad()) {
    out.set_requires_grad(true);
    Tape<T>::active()->record("sum", [x, out]() mutable {
      const T g = out.grad()[0];
      T* gx = detail::grad_ptr(x);
      for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dropout / convolution
// ---------------------------------------------------------------------------

// Inverted dropout. p = 0 or train = false is an exact passthrough: the
// input tensor is returned unchanged and nothing is recorded.
template <class T>
Tensor<T> dropout(const Tensor<T>& x, double p, Prng& rng, bool train = true) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: p must lie in [0, 1)");
  if (!train || p == 0.0) return x;
  const T keep_scale = T(1.0 / (1.0 - p));
  std::vector<T> mask(x.size());
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask[i] = rng.next_double() < p ? T(0) : keep_scale;
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const T* xv = x.data();
  T* ov = out.data();
  for (std::size_t i = 0; i < mask.size(); ++i) ov[i] = xv[i] * mask[i];
  if (Tape<T>::active() && x.requires_grad()) {
    out.set_requires_grad(true);
    Tape<T>::active()->record("dropout", [x, out, mask = std::move(mask)]() mutable {
      const auto& g = out.grad();
      T* gx = detail::grad_ptr(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
    });
  }
  return out;
}

inline constexpr std::size_t kMaxConvWidth = 16;

// Depthwise causal 1-D convolution over x [n x d] with kernel [w x d]:
//   y[i,c] = sum_t kernel[t,c] * x[i-t,c],  zero-padded on the left.
template <class T>
Tensor<T> causal_depthwise_conv1d(const Tensor<T>& x, const Tensor<T>& kernel) {
  const std::size_t n = x.rows(), d = x.cols(), w = kernel.rows();
  if (kernel.cols() != d)
    throw ShapeError("causal_depthwise_conv1d: kernel " + shape_str(kernel.shape()) +
                     " vs input " + shape_str(x.shape()));
  if (w < 1 || w > kMaxConvWidth)
    throw ConfigError("causal_depthwise_conv1d: kernel width " + std::to_string(w) +
                      " exceeds max " + std::to_string(kMaxConvWidth));
  Tensor<T> out = Tensor<T>::zeros({n, d});
  kernels::causal_dwconv(x.data(), kernel.data(), out.data(), n, d, w);
  if (Tape<T>::active() && (x.requires_grad() || kernel.requires_grad())) {
    out.set_requires_grad(true);
    Tape<T>::active()->record("causal_depthwise_conv1d", [x, kernel, out, n, d, w]() mutable {
      // Kernel accumulates into both buffers; route unwanted side to scratch.
      std::vector<T> scratch_x, scratch_k;
      T* dx = x.requires_grad() ? detail::grad_ptr(x)
                                : (scratch_x.assign(n * d, T(0)), scratch_x.data());
      T* dk = kernel.requires_grad() ? detail::grad_ptr(kernel)
                                     : (scratch_k.assign(w * d, T(0)), scratch_k.data());
      kernels::causal_dwconv_backward(x.data(), kernel.data(), out.grad().data(), dx, dk, n, d,
                                      w);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Non-differentiable utilities
// ---------------------------------------------------------------------------

// Index of the row maximum; ties break toward the lower index.
template <class T>
std::size_t argmax_row(const Tensor<T>& x, std::size_t row) {
  const std::size_t n = x.cols();
  const T* v = x.data() + row * n;
  std::size_t best = 0;
  for (std::size_t j = 1; j < n; ++j)
    if (v[j] > v[best]) best = j;
  return best;
}

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "max_abs_diff");
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

template <class T>
bool all_finite(const Tensor<T>& a) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!std::isfinite(a.data()[i])) return false;
  return true;
}

}  // namespace seqmix
