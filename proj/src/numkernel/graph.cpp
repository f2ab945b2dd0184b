#include "xprompt/graph.hpp"

#include "xprompt/errors.hpp"

namespace xprompt::nk {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::MatMulNT: return "matmul_nt";
    case OpKind::Add: return "add";
    case OpKind::AddRow: return "add_row";
    case OpKind::Scale: return "scale";
    case OpKind::RowwiseScale: return "rowwise_scale";
    case OpKind::BlockwiseScale: return "blockwise_scale";
    case OpKind::LayerNorm: return "layer_norm";
    case OpKind::Gelu: return "gelu";
    case OpKind::ConcatRows: return "concat_rows";
    case OpKind::EmbeddingLookup: return "embedding_lookup";
    case OpKind::MeanPool: return "mean_pool";
    case OpKind::Attention: return "attention";
    case OpKind::SelectRows: return "select_rows";
    case OpKind::SoftmaxCrossEntropy: return "softmax_cross_entropy";
  }
  return "unknown";
}

const Matrix& Var::value() const { return graph->value(id); }
const Matrix& Var::grad() const { return graph->grad(id); }
bool Var::requires_grad() const { return graph->requires_grad(id); }

Var Graph::leaf(Matrix value, bool requires_grad) {
  Node n;
  n.kind = OpKind::Leaf;
  n.owned = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Graph::borrow(const Matrix& value, bool requires_grad) {
  Node n;
  n.kind = OpKind::Leaf;
  n.borrowed = &value;
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

const Matrix& Graph::value(std::size_t id) const { return nodes_.at(id).value(); }

const Matrix& Graph::grad(std::size_t id) const {
  const Node& n = nodes_.at(id);
  if (!n.requires_grad) {
    throw StateError(std::string("node ") + std::to_string(id) + " (" + op_name(n.kind) +
                     ") does not track gradients");
  }
  if (!backward_done_) {
    throw StateError("gradients are not available before backward()");
  }
  return n.grad;
}

Matrix& Graph::grad_mut(std::size_t id) { return nodes_[id].grad; }

Var Graph::push(OpKind kind, std::vector<std::size_t> inputs, Matrix value, BackwardFn backward) {
  if (backward_done_) {
    throw StateError("cannot extend a graph after backward()");
  }
  Node n;
  n.kind = kind;
  for (std::size_t in : inputs) {
    if (nodes_[in].requires_grad) n.requires_grad = true;
  }
  n.inputs = std::move(inputs);
  n.owned = std::move(value);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

void Graph::backward(const LossScalar& loss) {
  if (loss.node.graph != this) {
    throw StateError("loss belongs to a different graph");
  }
  if (backward_done_) {
    throw StateError("backward() already ran on this graph; reset gradients first");
  }
  const Matrix& lv = value(loss.node.id);
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw DimensionError("loss node must be 1x1, got " + lv.shape_string());
  }
  for (Node& n : nodes_) {
    if (n.requires_grad) {
      n.grad = Matrix(n.value().rows(), n.value().cols());
    }
  }
  backward_done_ = true;
  if (!nodes_[loss.node.id].requires_grad) return;
  nodes_[loss.node.id].grad(0, 0) = 1.0;
  for (std::size_t i = loss.node.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.backward) n.backward(*this, i);
  }
}

void Graph::reset_gradients() {
  for (Node& n : nodes_) {
    if (n.requires_grad) n.grad.fill(0.0);
  }
  backward_done_ = false;
}

}  // namespace xprompt::nk
