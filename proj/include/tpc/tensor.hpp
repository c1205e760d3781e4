#pragma once

// Dense 2-D tensors with reverse-mode differentiation.
//
// A Tensor is a shared handle to a node holding a row-major Eigen matrix and,
// once touched by backward(), a same-shape gradient buffer. Operations record
// themselves on the calling thread's active GradTape when at least one input
// requires a gradient; with no active tape they run as plain evaluation.
// Scalars are 1x1, vectors are 1xn (row) or nx1 (column).

#include <Eigen/Dense>

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tpc/errors.hpp"

namespace tpc {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// ---------------------------------------------------------------------------
// Arithmetic-op counters. Multiply-accumulates count as one op, elementwise
// transcendental/arith steps as one op each. Per thread.

struct FlopCounter {
  std::uint64_t matmul = 0;
  std::uint64_t attention = 0;
  std::uint64_t selection = 0;
  std::uint64_t elementwise = 0;

  std::uint64_t total() const { return matmul + attention + selection + elementwise; }
  void reset() { *this = FlopCounter{}; }
};

inline FlopCounter& flop_counter() {
  thread_local FlopCounter counter;
  return counter;
}

// ---------------------------------------------------------------------------
// Finiteness checks after every op. On by default in debug builds.

inline std::atomic<bool>& debug_checks_flag() {
#ifdef NDEBUG
  static std::atomic<bool> flag{false};
#else
  static std::atomic<bool> flag{true};
#endif
  return flag;
}
inline bool debug_checks() { return debug_checks_flag().load(std::memory_order_relaxed); }
inline void set_debug_checks(bool on) { debug_checks_flag().store(on, std::memory_order_relaxed); }

template <typename Scalar>
struct TensorNode {
  Matrix<Scalar> value;
  Matrix<Scalar> grad;  // empty until a gradient arrives
  bool requires_grad = false;
  bool leaf = true;
};

template <typename Scalar>
class GradTape;

template <typename Scalar>
class Tensor {
 public:
  using Node = TensorNode<Scalar>;
  using MatrixType = Matrix<Scalar>;

  Tensor() = default;
  explicit Tensor(MatrixType value, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Index rows, Index cols, bool requires_grad = false) {
    return Tensor(MatrixType::Zero(rows, cols), requires_grad);
  }
  static Tensor constant(Index rows, Index cols, Scalar v) {
    return Tensor(MatrixType::Constant(rows, cols, v));
  }
  static Tensor scalar(Scalar v, bool requires_grad = false) {
    return Tensor(MatrixType::Constant(1, 1, v), requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }
  std::vector<Index> shape() const { return {rows(), cols()}; }

  const MatrixType& value() const { return node_->value; }
  /// Direct write access, for initialization and optimizer updates of leaves.
  MatrixType& mutable_value() { return node_->value; }
  Scalar item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_string());
    return node_->value(0, 0);
  }
  Scalar operator()(Index r, Index c) const { return node_->value(r, c); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool is_leaf() const { return node_->leaf; }

  bool has_grad() const { return node_->grad.size() != 0; }
  const MatrixType& grad() const {
    if (!has_grad()) throw ContractError("tensor has no gradient");
    return node_->grad;
  }
  void zero_grad() { node_->grad.resize(0, 0); }

  /// Same value, no tape history.
  Tensor detach() const { return Tensor(node_->value, false); }

  std::string shape_string() const {
    std::ostringstream os;
    os << "[" << rows() << "x" << cols() << "]";
    return os.str();
  }

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node> node_;
};

template <typename Scalar>
GradTape<Scalar>*& active_tape_slot() {
  thread_local GradTape<Scalar>* tape = nullptr;
  return tape;
}

/// Ordered record of differentiable operations. Constructing a tape makes it
/// the thread's active tape until it is destroyed; tapes nest like scopes.
template <typename Scalar>
class GradTape {
 public:
  using Node = TensorNode<Scalar>;
  using MatrixType = Matrix<Scalar>;
  using BackwardFn = std::function<void(const MatrixType&)>;

  GradTape() : previous_(active_tape_slot<Scalar>()) { active_tape_slot<Scalar>() = this; }
  ~GradTape() { active_tape_slot<Scalar>() = previous_; }
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* active() { return active_tape_slot<Scalar>(); }

  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

  void record(std::shared_ptr<Node> output, std::vector<std::shared_ptr<Node>> inputs, BackwardFn fn) {
    if (consumed_) throw ContractError("recording on a tape after backward(); call reset() first");
    output->leaf = false;
    entries_.push_back(Entry{std::move(output), std::move(inputs), std::move(fn)});
  }

  /// Seeds d(loss)/d(loss) = 1 and walks the record in reverse. Leaf grads
  /// accumulate across tapes until zero_grad().
  void backward(const Tensor<Scalar>& loss) {
    if (consumed_) throw ContractError("backward() called twice on the same tape without reset()");
    if (loss.size() != 1) throw ContractError("backward() needs a scalar loss, got " + loss.shape_string());
    if (entries_.empty()) throw ContractError("backward() on an empty tape");
    if (!loss.requires_grad()) throw ContractError("loss is not connected to the tape");
    consumed_ = true;

    const auto& root = loss.node();
    if (root->grad.size() == 0) root->grad = MatrixType::Zero(1, 1);
    root->grad(0, 0) += Scalar(1);

    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (it->output->grad.size() == 0) continue;
      it->backward(it->output->grad);
    }
    for (const auto& entry : entries_) {
      for (const auto& in : entry.inputs) {
        if (in->leaf && in->requires_grad && in->grad.size() == 0) {
          in->grad = MatrixType::Zero(in->value.rows(), in->value.cols());
        }
      }
    }
  }

  void reset() {
    entries_.clear();
    consumed_ = false;
  }

 private:
  struct Entry {
    std::shared_ptr<Node> output;
    std::vector<std::shared_ptr<Node>> inputs;
    BackwardFn backward;
  };
  std::vector<Entry> entries_;
  GradTape* previous_;
  bool consumed_ = false;
};

namespace detail {

/// grad(node) += delta, allocating the buffer on first use.
template <typename Scalar, typename Expr>
void accumulate(const std::shared_ptr<TensorNode<Scalar>>& node, const Expr& delta) {
  if (!node->requires_grad) return;
  if (node->grad.size() == 0) {
    node->grad = delta;
  } else {
    node->grad += delta;
  }
}

template <typename Scalar>
void check_finite(const char* op, const Matrix<Scalar>& value, std::initializer_list<const Tensor<Scalar>*> inputs) {
  if (value.allFinite()) return;
  for (const auto* in : inputs) {
    if (!in->value().allFinite()) return;  // garbage in, garbage out
  }
  throw NumericError(std::string("non-finite output from ") + op + " on finite input");
}

/// Wraps an op result; records it on the active tape when any input needs a
/// gradient. `make_backward` is only invoked when recording happens.
template <typename Scalar, typename MakeBackward>
Tensor<Scalar> finish(const char* op, Matrix<Scalar> value, std::initializer_list<const Tensor<Scalar>*> inputs,
                      MakeBackward&& make_backward) {
  if (debug_checks()) check_finite(op, value, inputs);
  Tensor<Scalar> out(std::move(value));
  auto* tape = GradTape<Scalar>::active();
  if (tape == nullptr) return out;
  bool needs = false;
  for (const auto* in : inputs) needs = needs || in->requires_grad();
  if (!needs) return out;
  out.set_requires_grad(true);
  std::vector<std::shared_ptr<TensorNode<Scalar>>> nodes;
  nodes.reserve(inputs.size());
  for (const auto* in : inputs) nodes.push_back(in->node());
  tape->record(out.node(), std::move(nodes), make_backward());
  return out;
}

inline std::string shapes(Index r1, Index c1, Index r2, Index c2) {
  std::ostringstream os;
  os << "[" << r1 << "x" << c1 << "] vs [" << r2 << "x" << c2 << "]";
  return os.str();
}

}  // namespace detail

}  // namespace tpc
