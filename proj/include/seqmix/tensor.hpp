#pragma once

#include <atomic>
#include <cassert>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "seqmix/errors.hpp"
#include "seqmix/prng.hpp"

namespace seqmix {

// Live tensor payload bytes, used by the inference-cost benchmarks.
// Parameters stay resident, so "peak - baseline" isolates state + activations.
class MemoryMeter {
 public:
  static int64_t current_bytes() { return current_.load(std::memory_order_relaxed); }
  static int64_t peak_bytes() { return peak_.load(std::memory_order_relaxed); }
  static void reset_peak() { peak_.store(current_.load()); }

  static void add(int64_t b) {
    int64_t c = current_.fetch_add(b) + b;
    int64_t p = peak_.load(std::memory_order_relaxed);
    while (c > p && !peak_.compare_exchange_weak(p, c)) {
    }
  }
  static void sub(int64_t b) { current_.fetch_sub(b); }

 private:
  inline static std::atomic<int64_t> current_{0};
  inline static std::atomic<int64_t> peak_{0};
};

template <class T>
struct TensorData {
  std::vector<std::size_t> shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty until backward touches it
  bool requires_grad = false;

  TensorData(std::vector<std::size_t> s, std::vector<T> v, bool rg)
      : shape(std::move(s)), values(std::move(v)), requires_grad(rg) {
    MemoryMeter::add(static_cast<int64_t>(values.size() * sizeof(T)));
  }
  ~TensorData() {
    MemoryMeter::sub(static_cast<int64_t>((values.size() + grad.size()) * sizeof(T)));
  }
  TensorData(const TensorData&) = delete;
  TensorData& operator=(const TensorData&) = delete;
};

inline std::string shape_str(const std::vector<std::size_t>& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major tensor. Value-semantic handle over shared storage;
// tensors are treated as immutable once an op has produced them.
// 1-D tensors act as row vectors [1 x n] where a matrix is expected.
template <class T>
class Tensor {
 public:
  using Data = TensorData<T>;

  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
    std::size_t n = count(shape);
    return Tensor(std::make_shared<Data>(std::move(shape), std::vector<T>(n, T(0)),
                                         requires_grad));
  }

  static Tensor full(std::vector<std::size_t> shape, T v, bool requires_grad = false) {
    std::size_t n = count(shape);
    return Tensor(std::make_shared<Data>(std::move(shape), std::vector<T>(n, v),
                                         requires_grad));
  }

  static Tensor from(std::vector<std::size_t> shape, std::vector<T> values,
                     bool requires_grad = false) {
    if (count(shape) != values.size())
      throw ShapeError("tensor shape " + shape_str(shape) + " does not match " +
                       std::to_string(values.size()) + " values");
    return Tensor(std::make_shared<Data>(std::move(shape), std::move(values), requires_grad));
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  // Uniform init in [lo, hi]. Draws doubles so float and double tensors
  // consume the stream identically.
  static Tensor uniform(std::vector<std::size_t> shape, double lo, double hi, Prng& rng,
                        bool requires_grad = false) {
    std::size_t n = count(shape);
    std::vector<T> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<T>(rng.uniform(lo, hi));
    return Tensor(std::make_shared<Data>(std::move(shape), std::move(v), requires_grad));
  }

  bool defined() const { return static_cast<bool>(d_); }
  const std::vector<std::size_t>& shape() const { return d_->shape; }
  std::size_t dim() const { return d_->shape.size(); }
  std::size_t size() const { return d_->values.size(); }

  std::size_t rows() const { return dim() == 1 ? 1 : d_->shape[0]; }
  std::size_t cols() const { return dim() == 1 ? d_->shape[0] : d_->shape[1]; }

  const T* data() const { return d_->values.data(); }
  T* data() { return d_->values.data(); }
  const std::vector<T>& values() const { return d_->values; }

  T item() const {
    if (size() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    return d_->values[0];
  }
  T at(std::size_t r, std::size_t c) const { return d_->values[r * cols() + c]; }

  bool requires_grad() const { return d_ && d_->requires_grad; }
  void set_requires_grad(bool rg) { d_->requires_grad = rg; }

  // Grad buffer, allocated and zeroed on first touch.
  std::vector<T>& grad() {
    if (d_->grad.empty()) {
      d_->grad.assign(d_->values.size(), T(0));
      MemoryMeter::add(static_cast<int64_t>(d_->grad.size() * sizeof(T)));
    }
    return d_->grad;
  }
  const std::vector<T>& grad() const { return const_cast<Tensor*>(this)->grad(); }
  bool has_grad() const { return d_ && !d_->grad.empty(); }
  void zero_grad() {
    if (d_ && !d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), T(0));
  }

  std::shared_ptr<Data> payload() const { return d_; }

  bool same_storage(const Tensor& o) const { return d_ == o.d_; }

 private:
  explicit Tensor(std::shared_ptr<Data> d) : d_(std::move(d)) {}

  static std::size_t count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t s : shape) {
      if (s == 0) throw ShapeError("zero dimension in shape " + shape_str(shape));
      n *= s;
    }
    return n;
  }

  std::shared_ptr<Data> d_;
};

// Reverse-mode tape: ops append nodes in execution order, which is already
// topological, so backward is a single reverse sweep visiting each node once.
template <class T>
class Tape {
 public:
  struct Node {
    const char* op;
    std::function<void()> backward;
  };

  void record(const char* op, std::function<void()> fn) {
    nodes_.push_back(Node{op, std::move(fn)});
  }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. The tape is
  // consumed: a second backward over it is a contract error.
  void backward(Tensor<T> loss) {
    if (loss.size() != 1)
      throw ContractError("backward requires a scalar loss, got " + shape_str(loss.shape()));
    if (nodes_.empty()) throw ContractError("backward on an empty or consumed tape");
    loss.grad()[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
    clear();
  }

  static Tape*& active_slot() {
    thread_local Tape* t = nullptr;
    return t;
  }
  static Tape* active() { return active_slot(); }

  // RAII activation; ops record onto the innermost active tape.
  class Scope {
   public:
    explicit Scope(Tape& t) : prev_(active_slot()) { active_slot() = &t; }
    ~Scope() { active_slot() = prev_; }
    Scope(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  // Suppresses recording (inference paths).
  class NoGrad {
   public:
    NoGrad() : prev_(active_slot()) { active_slot() = nullptr; }
    ~NoGrad() { active_slot() = prev_; }
    NoGrad(const NoGrad&) = delete;

   private:
    Tape* prev_;
  };

 private:
  std::vector<Node> nodes_;
};

template <class T>
bool grad_wanted(const Tensor<T>& t) {
  return Tape<T>::active() != nullptr && t.requires_grad();
}

}  // namespace seqmix
