#pragma once

// Reverse-mode automatic differentiation over dense double matrices.
//
// A Graph is a tape: every operation appends a node whose inputs were
// created earlier, so creation order is a topological order and backward()
// just walks the tape in reverse. Nodes only carry gradients when they
// (transitively) depend on a leaf created with requires_grad = true, so
// frozen weights cost nothing in the backward pass.
//
// A graph is single-owner and single-threaded. Independent graphs share no
// mutable state and may be built on different threads.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "xprompt/matrix.hpp"

namespace xprompt::nk {

enum class OpKind {
  Leaf,
  MatMul,
  MatMulNT,
  Add,
  AddRow,
  Scale,
  RowwiseScale,
  BlockwiseScale,
  LayerNorm,
  Gelu,
  ConcatRows,
  EmbeddingLookup,
  MeanPool,
  Attention,
  SelectRows,
  SoftmaxCrossEntropy,
};

const char* op_name(OpKind kind);

class Graph;

// Lightweight handle to a node of a Graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  const Matrix& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;
};

// A 1x1 node produced by a loss operation, with its value cached.
struct LossScalar {
  double value = 0.0;
  Var node;
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  // Leaf owning a copy of its value.
  Var leaf(Matrix value, bool requires_grad = false);
  // Leaf that refers to storage owned elsewhere. The matrix must outlive the
  // graph and must not change while the graph is alive.
  Var borrow(const Matrix& value, bool requires_grad = false);

  const Matrix& value(std::size_t id) const;
  const Matrix& grad(std::size_t id) const;
  Matrix& grad_mut(std::size_t id);
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  OpKind kind(std::size_t id) const { return nodes_[id].kind; }
  std::span<const std::size_t> inputs(std::size_t id) const { return nodes_[id].inputs; }
  std::size_t size() const { return nodes_.size(); }

  // Populates grad of every node that tracks gradients with d loss / d node.
  // A second call without reset_gradients() throws StateError.
  void backward(const LossScalar& loss);
  bool backward_done() const { return backward_done_; }
  // Zeroes all gradients and allows another backward pass.
  void reset_gradients();

  // Appends an operation node. Used by the operation library.
  Var push(OpKind kind, std::vector<std::size_t> inputs, Matrix value, BackwardFn backward);

 private:
  struct Node {
    OpKind kind = OpKind::Leaf;
    std::vector<std::size_t> inputs;
    Matrix owned;
    const Matrix* borrowed = nullptr;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;

    const Matrix& value() const { return borrowed != nullptr ? *borrowed : owned; }
  };

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// ---------------------------------------------------------------------------
// Operations. Shape violations throw DimensionError naming the shapes.

Var matmul(Var a, Var b);
// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
// Adds a 1 x cols row to every row of x.
Var add_row(Var x, Var bias);
Var scale(Var x, double factor);

// out[i,j] = s[i] * x[i,j]; s is m x 1.
Var rowwise_scale(Var x, Var s);
// out[i,j] = z[i, j / w] * x[i,j] with w = cols / k; z is m x k.
Var blockwise_scale(Var x, Var z);

inline constexpr double kLayerNormEps = 1e-6;
// Per-row normalization followed by gain and bias (both 1 x cols).
Var layer_norm(Var x, Var gain, Var bias, double eps = kLayerNormEps);
// tanh approximation.
Var gelu(Var x);
Var concat_rows(std::span<const Var> parts);
Var concat_rows(Var top, Var bottom);
// Gathers rows of table by index.
Var embedding_lookup(Var table, std::span<const int> ids);
// Mean of rows [first_row, rows) as a 1 x cols node.
Var mean_pool(Var x, std::size_t first_row = 0);
// Multi-head scaled dot-product attention without masking. q, k, v are
// seq x e; heads must divide e.
Var attention(Var q, Var k, Var v, std::size_t heads);
Var select_rows(Var x, std::span<const std::size_t> rows);

// Mean negative log-likelihood of labels under row-wise softmax(logits).
LossScalar softmax_cross_entropy(Var logits, std::span<const int> labels);
// Treats a 1x1 node as the loss.
LossScalar as_loss(Var scalar);

}  // namespace xprompt::nk
