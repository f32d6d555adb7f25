#include "pycat/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <new>
#include <numeric>
#include <sstream>

namespace pycat {

using detail::Node;
using detail::NodePtr;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMat>;
using MatMap = Eigen::Map<RowMat>;

std::atomic<uint64_t> g_next_id{1};
thread_local Tape* g_active_tape = nullptr;

NodePtr new_node(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
    throw DimensionError("tensor of shape " + shape_str(shape) + " cannot hold " +
                         std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<Node>();
  node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

// Splits a shape around `axis` into (outer, n, inner).
struct AxisSplit {
  int64_t outer = 1;
  int64_t n = 1;
  int64_t inner = 1;
};

AxisSplit split_at(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

std::vector<int64_t> contiguous_strides(const Shape& shape) {
  std::vector<int64_t> strides(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
    strides[i] = strides[i + 1] * shape[i + 1];
  }
  return strides;
}

// Strides of `in` viewed through the broadcast shape `out` (0 on broadcast dims).
std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  const auto in_strides = contiguous_strides(in);
  std::vector<int64_t> strides(out.size(), 0);
  const int offset = static_cast<int>(out.size() - in.size());
  for (std::size_t d = 0; d < in.size(); ++d) {
    if (in[d] != 1) strides[d + offset] = in_strides[d];
  }
  return strides;
}

// Calls f(i, ia, ib) for every output element of a broadcast binary op.
template <class F>
void broadcast_loop(const Shape& out, const std::vector<int64_t>& sa, const std::vector<int64_t>& sb,
                    F&& f) {
  const int r = static_cast<int>(out.size());
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  const int64_t total = shape_numel(out);
  if (total == 0) return;
  const int64_t last = out[r - 1];
  const int64_t la = sa[r - 1];
  const int64_t lb = sb[r - 1];
  std::vector<int64_t> idx(r, 0);
  int64_t ia = 0;
  int64_t ib = 0;
  for (int64_t i = 0; i < total; i += last) {
    for (int64_t j = 0; j < last; ++j) f(i + j, ia + j * la, ib + j * lb);
    for (int d = r - 2; d >= 0; --d) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

// Linear offsets of `in` for every element of broadcast shape `out`.
std::vector<int64_t> broadcast_offsets(const Shape& in, const Shape& out) {
  std::vector<int64_t> offsets(shape_numel(out));
  const auto s = broadcast_strides(in, out);
  const std::vector<int64_t> zero(out.size(), 0);
  broadcast_loop(out, s, zero, [&](int64_t i, int64_t ia, int64_t) { offsets[i] = ia; });
  return offsets;
}

template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& x, Fwd fwd, Bwd dfdx) {
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  Tensor xin = x;
  auto yvals = std::make_shared<std::vector<double>>(out);
  return make_result(x.shape(), std::move(out), {x},
                     [xin, yvals, dfdx](std::span<const double> g, std::span<double* const> gin) {
                       if (!gin[0]) return;
                       const auto xv2 = xin.values();
                       const auto& yv = *yvals;
                       for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * dfdx(xv2[i], yv[i]);
                     });
}


}  // namespace

// ---------------------------------------------------------------------------

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

int normalize_axis(int axis, int rank) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return a;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(new_node(std::move(shape), std::move(values), requires_grad)) {
  for (auto d : node_->shape) {
    if (d <= 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(node_->shape));
  }
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }
Tensor Tensor::ones(Shape shape, bool requires_grad) { return full(std::move(shape), 1.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor(Shape{}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return node_->shape;
}

int64_t Tensor::size(int axis) const { return shape()[normalize_axis(axis, rank())]; }
int64_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::values() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return node_->values;
}

std::span<double> Tensor::mutable_values() {
  if (!node_) throw ContractError("use of an undefined tensor");
  return node_->values;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->values[0];
}

double Tensor::at(std::initializer_list<int64_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw DimensionError("index rank mismatch for shape " + shape_str(s));
  int64_t off = 0;
  std::size_t d = 0;
  for (auto i : index) {
    if (i < 0 || i >= s[d]) throw DimensionError("index out of range for shape " + shape_str(s));
    off = off * s[d] + i;
    ++d;
  }
  return node_->values[off];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  if (!node_) throw ContractError("use of an undefined tensor");
  node_->requires_grad = flag;
  return *this;
}

uint64_t Tensor::id() const { return node_ ? node_->id : 0; }

Tensor Tensor::detach() const { return clone(false); }

Tensor Tensor::clone(bool requires_grad) const {
  return Tensor(shape(), std::vector<double>(values().begin(), values().end()), requires_grad);
}

Tensor Gradients::of(const Tensor& t) const {
  auto it = grads_.find(t.id());
  if (it != grads_.end()) return it->second;
  return Tensor::zeros(t.shape());
}

// ---------------------------------------------------------------------------
// Tape

void Tape::record(std::vector<NodePtr> inputs, NodePtr output, BackwardFn fn) {
  producer_[output->id] = records_.size();
  records_.push_back(Record{std::move(inputs), std::move(output), std::move(fn)});
}

void Tape::clear() {
  records_.clear();
  producer_.clear();
}

Gradients Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  auto it = producer_.find(loss.id());
  if (it == producer_.end()) throw ContractError("backward(): loss was not recorded on this tape");
  const std::size_t last = it->second;

  for (std::size_t r = 0; r <= last; ++r) {
    for (auto& in : records_[r].inputs) in->grad.clear();
    records_[r].output->grad.clear();
  }
  loss.node()->grad.assign(1, 1.0);

  std::vector<double*> ptrs;
  for (std::size_t r = last + 1; r-- > 0;) {
    auto& rec = records_[r];
    auto& out = rec.output;
    if (out->grad.empty()) continue;
    ptrs.assign(rec.inputs.size(), nullptr);
    for (std::size_t i = 0; i < rec.inputs.size(); ++i) {
      auto& in = rec.inputs[i];
      if (!in->requires_grad) continue;
      if (in->grad.empty()) in->grad.assign(in->values.size(), 0.0);
      ptrs[i] = in->grad.data();
    }
    rec.fn(out->grad, ptrs);
    if (out.get() != loss.node().get()) std::vector<double>().swap(out->grad);
  }

  Gradients result;
  for (std::size_t r = 0; r <= last; ++r) {
    for (auto& in : records_[r].inputs) {
      if (!in->requires_grad || producer_.count(in->id) || result.by_id().count(in->id)) continue;
      std::vector<double> g = std::move(in->grad);
      if (g.empty()) g.assign(in->values.size(), 0.0);
      in->grad.clear();
      result.set(in->id, Tensor(in->shape, std::move(g)));
    }
  }
  result.set(loss.id(), Tensor(loss.shape(), {1.0}));
  loss.node()->grad.clear();
  return result;
}

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

Gradients backward(const Tensor& loss) {
  Tape* tape = active_tape();
  if (!tape) throw ContractError("backward() called with no active tape");
  return tape->backward(loss);
}

Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   Tape::BackwardFn fn) {
  Tape* tape = active_tape();
  bool needs_grad = false;
  for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  auto node = new_node(std::move(shape), std::move(values), false);
  if (tape && needs_grad) {
    node->requires_grad = true;
    std::vector<NodePtr> in_nodes;
    in_nodes.reserve(inputs.size());
    for (const auto& in : inputs) in_nodes.push_back(in.node());
    tape->record(std::move(in_nodes), node, std::move(fn));
  }
  return Tensor(std::move(node));
}

// ---------------------------------------------------------------------------
// Elementwise

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("shapes " + shape_str(a) + " and " + shape_str(b) + " do not broadcast");
    }
    out[i] = std::max(da, db);
  }
  return out;
}

Tensor elementwise(const Tensor& a, const Tensor& b, BinaryKind kind) {
  const Shape out_shape = broadcast_shapes(a.shape(), b.shape());
  const auto sa = broadcast_strides(a.shape(), out_shape);
  const auto sb = broadcast_strides(b.shape(), out_shape);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(shape_numel(out_shape));
  const bool same = a.shape() == b.shape();
  auto run = [&](auto op) {
    if (same) {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = op(av[i], bv[i]);
    } else {
      broadcast_loop(out_shape, sa, sb, [&](int64_t i, int64_t ia, int64_t ib) { out[i] = op(av[ia], bv[ib]); });
    }
  };
  switch (kind) {
    case BinaryKind::add: run([](double x, double y) { return x + y; }); break;
    case BinaryKind::sub: run([](double x, double y) { return x - y; }); break;
    case BinaryKind::mul: run([](double x, double y) { return x * y; }); break;
    case BinaryKind::div: run([](double x, double y) { return x / y; }); break;
  }
  Tensor ain = a;
  Tensor bin = b;
  return make_result(out_shape, std::move(out), {a, b},
                     [ain, bin, kind, out_shape, sa, sb, same](std::span<const double> g,
                                                               std::span<double* const> gin) {
                       const auto av2 = ain.values();
                       const auto bv2 = bin.values();
                       double* ga = gin[0];
                       double* gb = gin[1];
                       auto step = [&](int64_t i, int64_t ia, int64_t ib) {
                         const double gi = g[i];
                         switch (kind) {
                           case BinaryKind::add:
                             if (ga) ga[ia] += gi;
                             if (gb) gb[ib] += gi;
                             break;
                           case BinaryKind::sub:
                             if (ga) ga[ia] += gi;
                             if (gb) gb[ib] -= gi;
                             break;
                           case BinaryKind::mul:
                             if (ga) ga[ia] += gi * bv2[ib];
                             if (gb) gb[ib] += gi * av2[ia];
                             break;
                           case BinaryKind::div:
                             if (ga) ga[ia] += gi / bv2[ib];
                             if (gb) gb[ib] -= gi * av2[ia] / (bv2[ib] * bv2[ib]);
                             break;
                         }
                       };
                       if (same) {
                         for (std::size_t i = 0; i < g.size(); ++i) step(i, i, i);
                       } else {
                         broadcast_loop(out_shape, sa, sb, step);
                       }
                     });
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(a, b, BinaryKind::add); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(a, b, BinaryKind::sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(a, b, BinaryKind::mul); }
Tensor div(const Tensor& a, const Tensor& b) { return elementwise(a, b, BinaryKind::div); }

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
Tensor operator-(const Tensor& a) {
  return unary_op(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}
Tensor operator+(const Tensor& a, double b) {
  return unary_op(a, [b](double x) { return x + b; }, [](double, double) { return 1.0; });
}
Tensor operator-(const Tensor& a, double b) { return a + (-b); }
Tensor operator*(const Tensor& a, double b) {
  return unary_op(a, [b](double x) { return x * b; }, [b](double, double) { return b; });
}
Tensor operator/(const Tensor& a, double b) { return a * (1.0 / b); }
Tensor operator+(double a, const Tensor& b) { return b + a; }
Tensor operator-(double a, const Tensor& b) {
  return unary_op(b, [a](double x) { return a - x; }, [](double, double) { return -1.0; });
}
Tensor operator*(double a, const Tensor& b) { return b * a; }

Tensor exp(const Tensor& x) {
  return unary_op(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary_op(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
  return unary_op(x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& x) {
  return unary_op(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor abs(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor relu(const Tensor& x) {
  return unary_op(x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary_op(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  return unary_op(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [](double v, double) {
        return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
      });
}

// ---------------------------------------------------------------------------
// matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError("matmul needs rank >= 2 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const int64_t m = a.size(-2);
  const int64_t k = a.size(-1);
  const int64_t n = b.size(-1);
  if (b.size(-2) != k) {
    throw DimensionError("matmul inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const Shape abatch(a.shape().begin(), a.shape().end() - 2);
  const Shape bbatch(b.shape().begin(), b.shape().end() - 2);
  const Shape batch = broadcast_shapes(abatch, bbatch);
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> out(shape_numel(out_shape), 0.0);
  const auto av = a.values();
  const auto bv = b.values();
  Tensor ain = a;
  Tensor bin = b;

  if (bbatch.empty()) {
    // Every batch of `a` hits the same matrix: one tall GEMM.
    const int64_t rows = shape_numel(abatch) * m;
    MatMap(out.data(), rows, n).noalias() = ConstMatMap(av.data(), rows, k) * ConstMatMap(bv.data(), k, n);
    return make_result(out_shape, std::move(out), {a, b},
                       [ain, bin, rows, k, n](std::span<const double> g, std::span<double* const> gin) {
                         ConstMatMap G(g.data(), rows, n);
                         if (gin[0]) {
                           MatMap(gin[0], rows, k).noalias() += G * ConstMatMap(bin.values().data(), k, n).transpose();
                         }
                         if (gin[1]) {
                           MatMap(gin[1], k, n).noalias() += ConstMatMap(ain.values().data(), rows, k).transpose() * G;
                         }
                       });
  }

  auto aoff = std::make_shared<std::vector<int64_t>>(broadcast_offsets(abatch, batch));
  auto boff = std::make_shared<std::vector<int64_t>>(broadcast_offsets(bbatch, batch));
  const int64_t nb = static_cast<int64_t>(aoff->size());
  for (int64_t i = 0; i < nb; ++i) {
    MatMap(out.data() + i * m * n, m, n).noalias() =
        ConstMatMap(av.data() + (*aoff)[i] * m * k, m, k) * ConstMatMap(bv.data() + (*boff)[i] * k * n, k, n);
  }
  return make_result(out_shape, std::move(out), {a, b},
                     [ain, bin, aoff, boff, nb, m, k, n](std::span<const double> g, std::span<double* const> gin) {
                       const auto av2 = ain.values();
                       const auto bv2 = bin.values();
                       for (int64_t i = 0; i < nb; ++i) {
                         ConstMatMap G(g.data() + i * m * n, m, n);
                         if (gin[0]) {
                           MatMap(gin[0] + (*aoff)[i] * m * k, m, k).noalias() +=
                               G * ConstMatMap(bv2.data() + (*boff)[i] * k * n, k, n).transpose();
                         }
                         if (gin[1]) {
                           MatMap(gin[1] + (*boff)[i] * k * n, k, n).noalias() +=
                               ConstMatMap(av2.data() + (*aoff)[i] * m * k, m, k).transpose() * G;
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor reduce(const Tensor& x, int axis, ReduceKind kind, bool keepdim) {
  const int ax = normalize_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[ax] = 1;
  } else {
    out_shape.erase(out_shape.begin() + ax);
  }
  const auto xv = x.values();
  std::vector<double> out(s.outer * s.inner, 0.0);
  const int64_t n = s.n;
  const int64_t inner = s.inner;

  if (kind == ReduceKind::max) {
    auto arg = std::make_shared<std::vector<int64_t>>(out.size(), 0);
    for (int64_t o = 0; o < s.outer; ++o) {
      for (int64_t i = 0; i < inner; ++i) {
        const int64_t base = o * n * inner + i;
        double best = xv[base];
        int64_t best_k = 0;
        for (int64_t k = 1; k < n; ++k) {
          const double v = xv[base + k * inner];
          if (v > best) {  // strict: ties keep the first index
            best = v;
            best_k = k;
          }
        }
        out[o * inner + i] = best;
        (*arg)[o * inner + i] = base + best_k * inner;
      }
    }
    return make_result(out_shape, std::move(out), {x}, [arg](std::span<const double> g, std::span<double* const> gin) {
      if (!gin[0]) return;
      for (std::size_t j = 0; j < g.size(); ++j) gin[0][(*arg)[j]] += g[j];
    });
  }

  for (int64_t o = 0; o < s.outer; ++o) {
    for (int64_t k = 0; k < n; ++k) {
      const double* src = xv.data() + (o * n + k) * inner;
      double* dst = out.data() + o * inner;
      for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  const double scale = kind == ReduceKind::mean ? 1.0 / static_cast<double>(n) : 1.0;
  if (kind == ReduceKind::mean) {
    for (auto& v : out) v *= scale;
  }
  const int64_t outer = s.outer;
  return make_result(out_shape, std::move(out), {x},
                     [outer, n, inner, scale](std::span<const double> g, std::span<double* const> gin) {
                       if (!gin[0]) return;
                       for (int64_t o = 0; o < outer; ++o) {
                         const double* src = g.data() + o * inner;
                         for (int64_t k = 0; k < n; ++k) {
                           double* dst = gin[0] + (o * n + k) * inner;
                           for (int64_t i = 0; i < inner; ++i) dst[i] += src[i] * scale;
                         }
                       }
                     });
}

Tensor sum(const Tensor& x) {
  const auto xv = x.values();
  double total = 0.0;
  for (double v : xv) total += v;
  const int64_t n = static_cast<int64_t>(xv.size());
  return make_result(Shape{}, {total}, {x}, [n](std::span<const double> g, std::span<double* const> gin) {
    if (!gin[0]) return;
    for (int64_t i = 0; i < n; ++i) gin[0][i] += g[0];
  });
}

Tensor mean(const Tensor& x) { return sum(x) * (1.0 / static_cast<double>(x.numel())); }

Tensor sum(const Tensor& x, int axis, bool keepdim) { return reduce(x, axis, ReduceKind::sum, keepdim); }
Tensor mean(const Tensor& x, int axis, bool keepdim) { return reduce(x, axis, ReduceKind::mean, keepdim); }
Tensor max(const Tensor& x, int axis, bool keepdim) { return reduce(x, axis, ReduceKind::max, keepdim); }

// ---------------------------------------------------------------------------
// Softmax

Tensor softmax(const Tensor& x, int axis) {
  const int ax = normalize_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), ax);
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  const int64_t n = s.n;
  const int64_t inner = s.inner;
  for (int64_t o = 0; o < s.outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      const int64_t base = o * n * inner + i;
      double mx = xv[base];
      for (int64_t k = 1; k < n; ++k) mx = std::max(mx, xv[base + k * inner]);
      double z = 0.0;
      for (int64_t k = 0; k < n; ++k) {
        const double e = std::exp(xv[base + k * inner] - mx);
        out[base + k * inner] = e;
        z += e;
      }
      const double invz = 1.0 / z;
      for (int64_t k = 0; k < n; ++k) out[base + k * inner] *= invz;
    }
  }
  auto y = std::make_shared<std::vector<double>>(out);
  const int64_t outer = s.outer;
  return make_result(x.shape(), std::move(out), {x},
                     [y, outer, n, inner](std::span<const double> g, std::span<double* const> gin) {
                       if (!gin[0]) return;
                       const auto& yv = *y;
                       for (int64_t o = 0; o < outer; ++o) {
                         for (int64_t i = 0; i < inner; ++i) {
                           const int64_t base = o * n * inner + i;
                           double dot = 0.0;
                           for (int64_t k = 0; k < n; ++k) dot += g[base + k * inner] * yv[base + k * inner];
                           for (int64_t k = 0; k < n; ++k) {
                             const int64_t j = base + k * inner;
                             gin[0][j] += yv[j] * (g[j] - dot);
                           }
                         }
                       }
                     });
}

Tensor log_softmax(const Tensor& x, int axis) {
  const int ax = normalize_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), ax);
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  const int64_t n = s.n;
  const int64_t inner = s.inner;
  for (int64_t o = 0; o < s.outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      const int64_t base = o * n * inner + i;
      double mx = xv[base];
      for (int64_t k = 1; k < n; ++k) mx = std::max(mx, xv[base + k * inner]);
      double z = 0.0;
      for (int64_t k = 0; k < n; ++k) z += std::exp(xv[base + k * inner] - mx);
      const double lz = mx + std::log(z);
      for (int64_t k = 0; k < n; ++k) out[base + k * inner] = xv[base + k * inner] - lz;
    }
  }
  auto y = std::make_shared<std::vector<double>>(out);
  const int64_t outer = s.outer;
  return make_result(x.shape(), std::move(out), {x},
                     [y, outer, n, inner](std::span<const double> g, std::span<double* const> gin) {
                       if (!gin[0]) return;
                       const auto& yv = *y;
                       for (int64_t o = 0; o < outer; ++o) {
                         for (int64_t i = 0; i < inner; ++i) {
                           const int64_t base = o * n * inner + i;
                           double gs = 0.0;
                           for (int64_t k = 0; k < n; ++k) gs += g[base + k * inner];
                           for (int64_t k = 0; k < n; ++k) {
                             const int64_t j = base + k * inner;
                             gin[0][j] += g[j] - std::exp(yv[j]) * gs;
                           }
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor reshape(const Tensor& x, Shape shape) {
  int infer = -1;
  int64_t known = 1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw DimensionError("reshape allows a single -1");
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) {
    if (known == 0 || x.numel() % known != 0) {
      throw DimensionError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
    }
    shape[infer] = x.numel() / known;
  }
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  const auto xv = x.values();
  return make_result(std::move(shape), std::vector<double>(xv.begin(), xv.end()), {x},
                     [](std::span<const double> g, std::span<double* const> gin) {
                       if (!gin[0]) return;
                       for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
                     });
}

Tensor gather(const Tensor& x, std::shared_ptr<const std::vector<int64_t>> indices, Shape out_shape) {
  if (shape_numel(out_shape) != static_cast<int64_t>(indices->size())) {
    throw DimensionError("gather: " + std::to_string(indices->size()) + " indices for output shape " +
                         shape_str(out_shape));
  }
  const auto xv = x.values();
  const int64_t n = static_cast<int64_t>(xv.size());
  std::vector<double> out(indices->size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const int64_t j = (*indices)[i];
    if (j < 0 || j >= n) throw DimensionError("gather index out of range");
    out[i] = xv[j];
  }
  return make_result(std::move(out_shape), std::move(out), {x},
                     [indices](std::span<const double> g, std::span<double* const> gin) {
                       if (!gin[0]) return;
                       const auto& idx = *indices;
                       for (std::size_t i = 0; i < g.size(); ++i) gin[0][idx[i]] += g[i];
                     });
}

Tensor permute(const Tensor& x, const std::vector<int>& dims) {
  const int r = x.rank();
  if (static_cast<int>(dims.size()) != r) throw DimensionError("permute: wrong number of dims");
  std::vector<int> d(r);
  std::vector<bool> seen(r, false);
  for (int i = 0; i < r; ++i) {
    d[i] = normalize_axis(dims[i], r);
    if (seen[d[i]]) throw DimensionError("permute: repeated axis");
    seen[d[i]] = true;
  }
  const auto& in_shape = x.shape();
  const auto in_strides = contiguous_strides(in_shape);
  Shape out_shape(r);
  std::vector<int64_t> strides(r);
  for (int i = 0; i < r; ++i) {
    out_shape[i] = in_shape[d[i]];
    strides[i] = in_strides[d[i]];
  }
  auto idx = std::make_shared<std::vector<int64_t>>(shape_numel(out_shape));
  const std::vector<int64_t> zero(r, 0);
  broadcast_loop(out_shape, strides, zero, [&](int64_t i, int64_t src, int64_t) { (*idx)[i] = src; });
  return gather(x, idx, out_shape);
}

Tensor transpose(const Tensor& x, int a, int b) {
  std::vector<int> dims(x.rank());
  std::iota(dims.begin(), dims.end(), 0);
  std::swap(dims[normalize_axis(a, x.rank())], dims[normalize_axis(b, x.rank())]);
  return permute(x, dims);
}

Tensor narrow(const Tensor& x, int axis, int64_t start, int64_t length) {
  const int ax = normalize_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), ax);
  if (start < 0 || length <= 0 || start + length > s.n) {
    throw DimensionError("narrow: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") outside axis of extent " + std::to_string(s.n));
  }
  Shape out_shape = x.shape();
  out_shape[ax] = length;
  const auto xv = x.values();
  std::vector<double> out(s.outer * length * s.inner);
  const int64_t block = length * s.inner;
  for (int64_t o = 0; o < s.outer; ++o) {
    std::copy_n(xv.data() + (o * s.n + start) * s.inner, block, out.data() + o * block);
  }
  const int64_t outer = s.outer;
  const int64_t n = s.n;
  const int64_t inner = s.inner;
  return make_result(out_shape, std::move(out), {x},
                     [outer, n, inner, start, block](std::span<const double> g, std::span<double* const> gin) {
                       if (!gin[0]) return;
                       for (int64_t o = 0; o < outer; ++o) {
                         double* dst = gin[0] + (o * n + start) * inner;
                         const double* src = g.data() + o * block;
                         for (int64_t i = 0; i < block; ++i) dst[i] += src[i];
                       }
                     });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const int r = parts[0].rank();
  const int ax = normalize_axis(axis, r);
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    if (p.rank() != r) throw DimensionError("concat: rank mismatch");
    for (int d = 0; d < r; ++d) {
      if (d != ax && p.shape()[d] != parts[0].shape()[d]) {
        throw DimensionError("concat: shapes " + shape_str(parts[0].shape()) + " and " + shape_str(p.shape()) +
                             " differ off-axis");
      }
    }
    out_shape[ax] += p.shape()[ax];
  }
  const AxisSplit s = split_at(out_shape, ax);
  std::vector<double> out(shape_numel(out_shape));
  std::vector<int64_t> offsets;
  std::vector<int64_t> blocks;
  int64_t off = 0;
  for (const auto& p : parts) {
    const int64_t block = p.shape()[ax] * s.inner;
    const auto pv = p.values();
    for (int64_t o = 0; o < s.outer; ++o) {
      std::copy_n(pv.data() + o * block, block, out.data() + o * s.n * s.inner + off);
    }
    offsets.push_back(off);
    blocks.push_back(block);
    off += block;
  }
  const int64_t outer = s.outer;
  const int64_t row = s.n * s.inner;
  return make_result(out_shape, std::move(out), parts,
                     [outer, row, offsets, blocks](std::span<const double> g, std::span<double* const> gin) {
                       for (std::size_t p = 0; p < gin.size(); ++p) {
                         if (!gin[p]) continue;
                         for (int64_t o = 0; o < outer; ++o) {
                           const double* src = g.data() + o * row + offsets[p];
                           double* dst = gin[p] + o * blocks[p];
                           for (int64_t i = 0; i < blocks[p]; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

Tensor index_select(const Tensor& x, int axis, const std::vector<int64_t>& indices) {
  const int ax = normalize_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape[ax] = static_cast<int64_t>(indices.size());
  auto idx = std::make_shared<std::vector<int64_t>>();
  idx->reserve(shape_numel(out_shape));
  for (int64_t o = 0; o < s.outer; ++o) {
    for (auto k : indices) {
      if (k < 0 || k >= s.n) throw DimensionError("index_select index out of range");
      for (int64_t i = 0; i < s.inner; ++i) idx->push_back((o * s.n + k) * s.inner + i);
    }
  }
  return gather(x, idx, out_shape);
}

}  // namespace pycat
