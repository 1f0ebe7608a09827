#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "mlnlu/tensor.hpp"

namespace mlnlu {

enum class Mode { Train, Infer };
enum class Activation { Sigmoid, Tanh, Gelu };

struct Node {
  Tensord value;
  std::optional<Tensord> grad;
  bool requires_grad = false;  // leaf trainability / freeze state
  bool needs = false;          // reachable from a trainable leaf
};
using NodePtr = std::shared_ptr<Node>;

/// Handle to a value in the computation graph. Copies share the node, so a
/// Var passed around the model refers to one set of values and gradients.
class Var {
 public:
  Var() = default;

  /// Trainable leaf (a parameter) or, with requires_grad=false, a constant.
  static Var leaf(Tensord value, bool requires_grad = true) {
    Var v;
    v.n_ = std::make_shared<Node>();
    v.n_->value = std::move(value);
    v.n_->requires_grad = requires_grad;
    v.n_->needs = requires_grad;
    return v;
  }

  static Var constant(Tensord value) { return leaf(std::move(value), false); }

  bool defined() const { return n_ != nullptr; }
  const Tensord& value() const { return n_->value; }
  Tensord& value() { return n_->value; }
  const std::optional<Tensord>& grad() const { return n_->grad; }
  void clear_grad() { n_->grad.reset(); }

  bool requires_grad() const { return n_->requires_grad; }

  /// Freeze toggle. A frozen leaf never accumulates gradient, even through
  /// closures recorded before the flag changed.
  void set_requires_grad(bool rg) {
    n_->requires_grad = rg;
    n_->needs = rg;
  }

  bool needs() const { return n_->needs; }
  const Shape& shape() const { return n_->value.shape(); }
  const NodePtr& node() const { return n_; }

  static Var wrap(NodePtr n) {
    Var v;
    v.n_ = std::move(n);
    return v;
  }

 private:
  NodePtr n_;
};

inline Tensord& ensure_grad(const NodePtr& n) {
  if (!n->grad) n->grad.emplace(Tensord::zeros(n->value.shape()));
  return *n->grad;
}

/// Eager reverse-mode tape. Ops executed inside a TapeScope append a
/// backward rule; replaying the rules in reverse recording order visits
/// each recorded op exactly once.
class Tape {
 public:
  void record(std::function<void()> fn) { records_.push_back(std::move(fn)); }
  std::size_t size() const { return records_.size(); }
  void clear() { records_.clear(); }

  /// Seeds d(loss)/d(loss) = seed and replays the tape. Loss must be a
  /// scalar recorded on this tape.
  void backward(const Var& loss, double seed = 1.0);

  static Tape* active();

 private:
  friend struct TapeScope;
  std::vector<std::function<void()>> records_;
};

/// RAII activation of a tape for the current thread. No active tape means
/// pure inference: ops compute values and record nothing.
struct TapeScope {
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

namespace detail {
/// Result node wiring shared by every op: propagate `needs` and decide
/// whether the backward rule gets recorded.
Var make_result(Tensord value, std::initializer_list<const Var*> inputs,
                Tape** tape_out);
}  // namespace detail

// ---- graph ops -------------------------------------------------------
// Forward semantics are eager; each op carries its own backward rule.

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
/// M + v broadcast over rows (v.size == cols).
Var add_rowwise(const Var& m, const Var& v);
/// M + v broadcast over columns (v.size == rows).
Var add_colwise(const Var& m, const Var& v);
Var sigmoid(const Var& x);
Var tanh(const Var& x);
/// Exact Gaussian-CDF form x * Phi(x). NaN input yields NaN output.
Var gelu(const Var& x);
Var activation(const Var& x, Activation kind);
/// axis 0 reduces over rows (per column), axis 1 over columns (per row).
/// A rank-1 input with axis 0 reduces to a scalar.
Var logsumexp(const Var& x, int axis);
/// -log softmax(logits)[target] for a rank-1 logits vector.
Var softmax_cross_entropy(const Var& logits, Index target);
/// Valid 1-D convolution of each filter over the rows of `emb`, then
/// max-over-time pooling. Inputs shorter than the filter width are padded
/// with zero rows. filters: {n_f, width, d}; bias: {n_f}; result: {n_f}.
Var conv1d_maxpool(const Var& emb, const Var& filters, const Var& bias);
/// Inverted dropout: train mode masks and scales by 1/(1-p); infer mode is
/// the identity. 0 <= p < 1.
Var dropout(const Var& x, double p, Mode mode, Rng& rng);
Var concat(const std::vector<Var>& parts);
Var stack_rows(const std::vector<Var>& rows);
/// Column-wise concatenation of two matrices with equal row counts.
Var hconcat(const Var& a, const Var& b);
Var row(const Var& m, Index i);
Var col(const Var& m, Index j);
/// rows x cols sub-matrix starting at (r0, c0).
Var block(const Var& m, Index r0, Index rows, Index c0, Index cols);
Var top_rows(const Var& m, Index n);
/// Appends zero rows until the matrix has `total_rows` rows.
Var pad_rows(const Var& m, Index total_rows);
Var slice(const Var& v, Index start, Index len);
/// Embedding gather: rows of `table` at `ids`; backward scatter-adds.
Var rows_lookup(const Var& table, const std::vector<Index>& ids);
/// Weighted sum of rows of W: sum_i val_i * W.row(id_i). The sparse-feature
/// bridge into the graph.
Var sparse_combine(const Var& w, const std::vector<std::pair<Index, double>>& feats);
Var sum(const Var& x);
Var mean_rows(const Var& m);

// Tensor-level elementwise activation used by both the graph ops and plain
// numeric code.
double sigmoid_scalar(double x);
double gelu_scalar(double x);

/// Populates gradients of every reachable trainable leaf; see Tape::backward.
void backward(const Var& loss, double seed = 1.0);

}  // namespace mlnlu
