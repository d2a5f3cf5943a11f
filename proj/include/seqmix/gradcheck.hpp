#pragma once

#include <functional>
#include <vector>

#include "seqmix/ops.hpp"
#include "seqmix/tensor.hpp"

namespace seqmix {

// Max over all coordinates of |autodiff - central difference| over
// (|central difference| + 1e-12). f must return a scalar tensor. Run at
// double precision for meaningful tolerances.
template <class T>
double grad_check(const std::function<Tensor<T>(std::vector<Tensor<T>>&)>& f,
                  std::vector<Tensor<T>> inputs, double eps = 1e-5) {
  if (eps < 1e-7 || eps > 1e-3)
    throw ContractError("grad_check: eps must lie in [1e-7, 1e-3]");
  for (auto& t : inputs) t.set_requires_grad(true);

  Tape<T> tape;
  {
    typename Tape<T>::Scope scope(tape);
    Tensor<T> loss = f(inputs);
    if (loss.size() != 1) throw ContractError("grad_check: f must be scalar-valued");
    tape.backward(loss);
  }
  std::vector<std::vector<T>> auto_grads;
  auto_grads.reserve(inputs.size());
  for (auto& t : inputs) auto_grads.push_back(t.grad());

  double worst = 0.0;
  typename Tape<T>::NoGrad off;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    T* v = inputs[i].data();
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      const T saved = v[j];
      v[j] = saved + static_cast<T>(eps);
      const double up = static_cast<double>(f(inputs).item());
      v[j] = saved - static_cast<T>(eps);
      const double down = static_cast<double>(f(inputs).item());
      v[j] = saved;
      const double fd = (up - down) / (2.0 * eps);
      const double ad = static_cast<double>(auto_grads[i][j]);
      const double rel = std::abs(ad - fd) / (std::abs(fd) + 1e-12);
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

// Single-input form.
template <class T>
double grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& x,
                  double eps = 1e-5) {
  return grad_check<T>(
      [&](std::vector<Tensor<T>>& in) { return f(in[0]); },
      std::vector<Tensor<T>>{x}, eps);
}

}  // namespace seqmix
