#pragma once

#include <deque>

#include "seqmix/mixers/scan_ops.hpp"
#include "seqmix/prng.hpp"

namespace seqmix {

// Full parameter set of one Mamba block. The sequence-mixing core
// (conv -> silu -> selection -> scan) lives here; the in/gate/out
// projections and dropout are applied by the owning model block.
template <class T>
struct MambaLayerParams {
  std::size_t d_model = 0;
  std::size_t r = 16;          // state size per channel
  std::size_t expand = 2;
  std::size_t conv_width = 4;
  double dropout_p = 0.0;

  Tensor<T> w_in;        // d_model x d_inner
  Tensor<T> w_gate;      // d_model x d_inner
  Tensor<T> conv_kernel; // conv_width x d_inner
  Tensor<T> conv_bias;   // d_inner
  Tensor<T> w_B;         // d_inner x r
  Tensor<T> w_C;         // d_inner x r
  Tensor<T> w_delta;     // d_inner x d_inner
  Tensor<T> b_delta;     // d_inner
  Tensor<T> a_log;       // r x d_inner; A_cont = -exp(a_log) < 0
  Tensor<T> w_out;       // d_inner x d_model

  std::size_t d_inner() const { return expand * d_model; }

  static MambaLayerParams init(std::size_t d_model, Prng& rng, std::size_t r = 16,
                               std::size_t expand = 2, std::size_t conv_width = 4,
                               double dropout_p = 0.0) {
    MambaLayerParams p;
    p.d_model = d_model;
    p.r = r;
    p.expand = expand;
    p.conv_width = conv_width;
    p.dropout_p = dropout_p;
    const std::size_t di = p.d_inner();
    const double s_model = 1.0 / std::sqrt(double(d_model));
    const double s_inner = 1.0 / std::sqrt(double(di));
    const double s_conv = 1.0 / std::sqrt(double(conv_width));
    p.w_in = Tensor<T>::uniform({d_model, di}, -s_model, s_model, rng, true);
    p.w_gate = Tensor<T>::uniform({d_model, di}, -s_model, s_model, rng, true);
    p.conv_kernel = Tensor<T>::uniform({conv_width, di}, -s_conv, s_conv, rng, true);
    p.conv_bias = Tensor<T>::zeros({di}, true);
    p.w_B = Tensor<T>::uniform({di, r}, -s_inner, s_inner, rng, true);
    p.w_C = Tensor<T>::uniform({di, r}, -s_inner, s_inner, rng, true);
    p.w_delta = Tensor<T>::uniform({di, di}, -s_inner, s_inner, rng, true);
    // Bias chosen so softplus(b) lands log-uniformly in [1e-3, 1e-1],
    // the reference timestep-init range.
    p.b_delta = Tensor<T>::zeros({di}, true);
    for (std::size_t c = 0; c < di; ++c) {
      const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
      p.b_delta.data()[c] = static_cast<T>(std::log(std::expm1(dt)));
    }
    // A_cont = -exp(a_log) initialized to -(1..r) per channel.
    p.a_log = Tensor<T>::zeros({r, di}, true);
    for (std::size_t s = 0; s < r; ++s)
      for (std::size_t c = 0; c < di; ++c)
        p.a_log.data()[s * di + c] = static_cast<T>(std::log(double(s + 1)));
    p.w_out = Tensor<T>::uniform({di, d_model}, -s_inner, s_inner, rng, true);
    return p;
  }
};

// Selective-scan forward over the inner stream (Eq. 7 with ZOH): causal
// depthwise conv, SiLU, input-dependent B/C/delta projections, then the
// diagonal selective recurrence. x is [n x d_inner].
template <class T>
Tensor<T> mamba_selective_scan(const Tensor<T>& x, const MambaLayerParams<T>& p) {
  if (x.cols() != p.d_inner())
    throw ShapeError("mamba_selective_scan: input " + shape_str(x.shape()) +
                     " vs d_inner " + std::to_string(p.d_inner()));
  Tensor<T> u = silu(add_rowvec(causal_depthwise_conv1d(x, p.conv_kernel), p.conv_bias));
  Tensor<T> B = matmul(u, p.w_B);
  Tensor<T> C = matmul(u, p.w_C);
  Tensor<T> delta = softplus(add_rowvec(matmul(u, p.w_delta), p.b_delta));
  Tensor<T> a_cont = scale(exp(p.a_log), T(-1));
  return selective_scan(u, delta, a_cont, B, C);
}

// Constant-size decode state: scan state H plus the last conv_width-1
// pre-conv inputs.
template <class T>
struct MambaState {
  std::size_t r = 0, d_inner = 0, conv_width = 0;
  std::vector<T> H;                    // r x d_inner
  std::deque<std::vector<T>> conv_buf; // at most conv_width-1 rows, oldest first

  static MambaState zeros(std::size_t r, std::size_t d_inner, std::size_t conv_width) {
    MambaState st;
    st.r = r;
    st.d_inner = d_inner;
    st.conv_width = conv_width;
    st.H.assign(r * d_inner, T(0));
    return st;
  }

  std::size_t bytes() const {
    std::size_t b = H.size() * sizeof(T);
    // The buffer is bounded by conv_width-1 whether or not it is full yet.
    b += (conv_width > 0 ? conv_width - 1 : 0) * d_inner * sizeof(T);
    return b;
  }
};

// One recurrent step matching position i of mamba_selective_scan.
template <class T>
Tensor<T> mamba_step(const Tensor<T>& x_i, MambaState<T>& state,
                     const MambaLayerParams<T>& p) {
  const std::size_t di = p.d_inner(), r = p.r, w = p.conv_width;
  if (x_i.size() != di) throw ContractError("mamba_step: input size mismatch");
  if (state.r == 0) state = MambaState<T>::zeros(r, di, w);
  if (state.r != r || state.d_inner != di || state.conv_width != w)
    throw ContractError("mamba_step: state built for different parameters");

  // Conv tap t = 0 hits the current input, t >= 1 reaches into the buffer.
  std::vector<T> u(di);
  const T* kv = p.conv_kernel.data();
  for (std::size_t c = 0; c < di; ++c) u[c] = kv[c] * x_i.data()[c] + p.conv_bias.data()[c];
  for (std::size_t t = 1; t < w; ++t) {
    if (t > state.conv_buf.size()) break;
    const std::vector<T>& past = state.conv_buf[state.conv_buf.size() - t];
    for (std::size_t c = 0; c < di; ++c) u[c] += kv[t * di + c] * past[c];
  }
  for (std::size_t c = 0; c < di; ++c) u[c] = u[c] * detail::sigmoid_of(u[c]);

  std::vector<T> B(r, T(0)), C(r, T(0)), delta(di);
  for (std::size_t s = 0; s < r; ++s) {
    T bs = 0, cs = 0;
    for (std::size_t c = 0; c < di; ++c) {
      bs += u[c] * p.w_B.data()[c * r + s];
      cs += u[c] * p.w_C.data()[c * r + s];
    }
    B[s] = bs;
    C[s] = cs;
  }
  for (std::size_t c = 0; c < di; ++c) {
    T acc = p.b_delta.data()[c];
    for (std::size_t k = 0; k < di; ++k) acc += u[k] * p.w_delta.data()[k * di + c];
    delta[c] = detail::softplus_of(acc);
  }

  Tensor<T> y = Tensor<T>::zeros({di});
  T* yv = y.data();
  for (std::size_t s = 0; s < r; ++s) {
    const T bs = B[s], cs = C[s];
    T* hs = state.H.data() + s * di;
    const T* as = p.a_log.data() + s * di;
    for (std::size_t c = 0; c < di; ++c) {
      const T a_cont = -std::exp(as[c]);
      const T abar = std::exp(delta[c] * a_cont);
      hs[c] = abar * hs[c] + delta[c] * bs * u[c];
      yv[c] += cs * hs[c];
    }
  }

  if (w > 1) {
    state.conv_buf.emplace_back(x_i.data(), x_i.data() + di);
    if (state.conv_buf.size() > w - 1) state.conv_buf.pop_front();
  }
  return y;
}

}  // namespace seqmix
