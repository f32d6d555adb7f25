#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "pycat/error.hpp"

namespace pycat {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  uint64_t id = 0;
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // scratch buffer, only populated during backward
  bool requires_grad = false;
};

using NodePtr = std::shared_ptr<Node>;

}  // namespace detail

/// Dense row-major N-d array of doubles. Copies are shallow handles onto the
/// same node; values are treated as immutable once an op has consumed them,
/// except for leaves updated between tapes (parameters).
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  // Negative axes count from the back.
  int64_t size(int axis) const;
  int64_t numel() const;

  std::span<const double> values() const;
  std::span<double> mutable_values();
  double item() const;
  double at(std::initializer_list<int64_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  uint64_t id() const;

  // Fresh leaf holding a copy of the values.
  Tensor detach() const;
  Tensor clone(bool requires_grad) const;

  const detail::NodePtr& node() const { return node_; }
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}

 private:
  detail::NodePtr node_;
};

/// Gradients keyed by node id, as returned by backward().
class Gradients {
 public:
  bool contains(const Tensor& t) const { return grads_.count(t.id()) != 0; }
  // Zero tensor of the right shape when `t` received no gradient.
  Tensor of(const Tensor& t) const;
  const std::unordered_map<uint64_t, Tensor>& by_id() const { return grads_; }
  void set(uint64_t id, Tensor g) { grads_[id] = std::move(g); }
  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<uint64_t, Tensor> grads_;
};

/// Ordered record of differentiable operations. Ops only record while a tape
/// is active on the current thread and at least one input requires grad.
class Tape {
 public:
  // grad_in[i] is null when input i does not require grad.
  using BackwardFn =
      std::function<void(std::span<const double> grad_out, std::span<double* const> grad_in)>;

  void record(std::vector<detail::NodePtr> inputs, detail::NodePtr output, BackwardFn fn);
  std::size_t size() const { return records_.size(); }
  bool produced(const Tensor& t) const { return producer_.count(t.id()) != 0; }
  void clear();

  // Reverse sweep from a scalar loss. Returns gradients for every
  // requires_grad leaf reachable on the tape (and the loss itself).
  Gradients backward(const Tensor& loss);

 private:
  struct Record {
    std::vector<detail::NodePtr> inputs;
    detail::NodePtr output;
    BackwardFn fn;
  };
  std::vector<Record> records_;
  std::unordered_map<uint64_t, std::size_t> producer_;
};

Tape* active_tape();

class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Suspends recording for its lifetime.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

Gradients backward(const Tensor& loss);

// Builds an op result and records it on the active tape when needed. Used by
// every differentiable op, including those defined outside this header.
Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   Tape::BackwardFn fn);

// ---------------------------------------------------------------------------
// Elementwise and broadcasting

enum class BinaryKind { add, sub, mul, div };

Shape broadcast_shapes(const Shape& a, const Shape& b);
Tensor elementwise(const Tensor& a, const Tensor& b, BinaryKind kind);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a);
Tensor operator+(const Tensor& a, double b);
Tensor operator-(const Tensor& a, double b);
Tensor operator*(const Tensor& a, double b);
Tensor operator/(const Tensor& a, double b);
Tensor operator+(double a, const Tensor& b);
Tensor operator-(double a, const Tensor& b);
Tensor operator*(double a, const Tensor& b);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor square(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor gelu(const Tensor& x);  // exact erf form

// ---------------------------------------------------------------------------
// Contractions and reductions

Tensor matmul(const Tensor& a, const Tensor& b);

enum class ReduceKind { sum, mean, max };

Tensor reduce(const Tensor& x, int axis, ReduceKind kind, bool keepdim = false);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x, int axis, bool keepdim = false);
Tensor mean(const Tensor& x, int axis, bool keepdim = false);
Tensor max(const Tensor& x, int axis, bool keepdim = false);

Tensor softmax(const Tensor& x, int axis);
Tensor log_softmax(const Tensor& x, int axis);

// ---------------------------------------------------------------------------
// Shape manipulation

// One entry may be -1.
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& dims);
Tensor transpose(const Tensor& x, int a, int b);
Tensor narrow(const Tensor& x, int axis, int64_t start, int64_t length);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor index_select(const Tensor& x, int axis, const std::vector<int64_t>& indices);

// out.flat[i] = x.flat[(*indices)[i]]; backward scatter-adds.
Tensor gather(const Tensor& x, std::shared_ptr<const std::vector<int64_t>> indices, Shape out_shape);

int normalize_axis(int axis, int rank);

}  // namespace pycat
