#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "seqmix/tensor.hpp"

namespace seqmix {

// Inverse-square-root schedule: lr(t) = peak * min(t/warmup, sqrt(warmup/t)).
inline double inverse_sqrt_lr(double peak, std::size_t step, std::size_t warmup) {
  if (step == 0) return 0.0;
  const double t = double(step), w = double(warmup > 0 ? warmup : 1);
  return peak * std::min(t / w, std::sqrt(w / t));
}

// Adam with decoupled weight decay; beta1 0.9, beta2 0.98, eps 1e-9.
template <class T>
class AdamW {
 public:
  struct Settings {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-9;
    double weight_decay = 0.001;
    double clip_norm = 1.0;  // global grad-norm clip; 0 disables
  };

  explicit AdamW(Settings s = {}) : s_(s) {}

  const Settings& settings() const { return s_; }
  std::size_t step_count() const { return t_; }

  // Returns the pre-clip global gradient norm.
  double step(std::vector<std::pair<std::string, Tensor<T>>>& params, double lr) {
    if (m_.empty()) {
      for (auto& [name, p] : params) {
        m_.emplace_back(p.size(), T(0));
        v_.emplace_back(p.size(), T(0));
      }
    }
    double sq = 0.0;
    for (auto& [name, p] : params) {
      if (!p.has_grad()) continue;
      const auto& g = p.grad();
      for (std::size_t i = 0; i < g.size(); ++i) sq += double(g[i]) * double(g[i]);
    }
    const double norm = std::sqrt(sq);
    const double gscale = (s_.clip_norm > 0 && norm > s_.clip_norm) ? s_.clip_norm / norm : 1.0;

    ++t_;
    const double bc1 = 1.0 - std::pow(s_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(s_.beta2, double(t_));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      Tensor<T>& p = params[pi].second;
      if (!p.has_grad()) continue;
      const auto& g = p.grad();
      auto& m = m_[pi];
      auto& v = v_[pi];
      T* w = p.data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double gi = double(g[i]) * gscale;
        m[i] = static_cast<T>(s_.beta1 * double(m[i]) + (1.0 - s_.beta1) * gi);
        v[i] = static_cast<T>(s_.beta2 * double(v[i]) + (1.0 - s_.beta2) * gi * gi);
        const double mhat = double(m[i]) / bc1;
        const double vhat = double(v[i]) / bc2;
        double wi = double(w[i]);
        wi -= lr * s_.weight_decay * wi;  // decoupled decay
        wi -= lr * mhat / (std::sqrt(vhat) + s_.eps);
        w[i] = static_cast<T>(wi);
      }
    }
    return norm;
  }

  void zero_grads(std::vector<std::pair<std::string, Tensor<T>>>& params) {
    for (auto& [name, p] : params) p.zero_grad();
  }

  // Flat moment vectors for checkpointing (resume-exact training).
  std::vector<std::pair<std::string, std::vector<T>>> state_arrays(
      const std::vector<std::pair<std::string, Tensor<T>>>& params) const {
    std::vector<std::pair<std::string, std::vector<T>>> out;
    for (std::size_t i = 0; i < m_.size(); ++i) {
      out.emplace_back("opt.m." + params[i].first, m_[i]);
      out.emplace_back("opt.v." + params[i].first, v_[i]);
    }
    return out;
  }

  void load_state(const std::vector<std::pair<std::string, Tensor<T>>>& params,
                  const std::function<std::vector<T>(const std::string&)>& fetch,
                  std::size_t step_count) {
    m_.clear();
    v_.clear();
    for (const auto& [name, p] : params) {
      m_.push_back(fetch("opt.m." + name));
      v_.push_back(fetch("opt.v." + name));
      if (m_.back().size() != p.size() || v_.back().size() != p.size())
        throw DataError("optimizer state size mismatch for " + name);
    }
    t_ = step_count;
  }

 private:
  Settings s_;
  std::size_t t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

}  // namespace seqmix
