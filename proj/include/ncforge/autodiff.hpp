#pragma once

// Matrix-valued reverse-mode differentiation.
//
// A Graph is a tape: every operation appends a node holding its tag, its
// parent indices and its forward value. Because parents always precede
// children, reverse insertion order is a valid reverse topological order
// and backward() visits each node exactly once.
//
// A Graph is not thread-safe; build one per batch and per thread.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "ncforge/matrix.hpp"

namespace ncf {

struct Var {
  std::size_t id = 0;
};

enum class OpTag : std::uint8_t {
  kLeaf,
  kMatmul,
  kAdd,
  kSub,
  kAddRow,
  kSubRow,
  kScale,
  kRelu,
  kSquare,
  kSum,
  kMeanRows,
  kGatherRows,
  kScaleRows,
  kSegmentMean,
  kRowNormalize,
  kGram,
  kArccos,
  kRowMinOffdiag,
  kSoftmaxCrossEntropy,
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  Var leaf(Matrix value) { return push_leaf(std::move(value), true); }
  Var constant(Matrix value) { return push_leaf(std::move(value), false); }

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  // Adjoint of a node after backward(). Nodes that do not depend on any
  // differentiable leaf report a zero matrix of the right shape.
  const Matrix& grad(Var v) const;
  OpTag tag(Var v) const { return nodes_.at(v.id).tag; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Propagates d(output)/d(node) to every node. Requires a 1x1 output
  // (ShapeError otherwise). Calling twice without reset_grads() throws
  // InvalidInput.
  void backward(Var output);
  void reset_grads();

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  // Broadcast a 1 x c row across every row of a.
  Var add_row(Var a, Var row);
  Var sub_row(Var a, Var row);
  Var scale(Var a, double s);
  Var relu(Var a);
  Var square(Var a);
  Var sum(Var a);
  Var mean_rows(Var a);
  Var gather_rows(Var a, std::vector<std::size_t> index);
  Var scale_rows(Var a, Vector weights);
  // Row s of the result is the mean of the rows i with segment[i] == s.
  // Every segment in [0, num_segments) must be non-empty.
  Var segment_mean(Var a, std::vector<std::size_t> segment, std::size_t num_segments);
  // Rows scaled to unit norm; rows with norm below `floor` become zero and
  // pass no gradient.
  Var row_normalize(Var a, double floor);
  // a * a^T
  Var gram(Var a);
  // Elementwise arccos of the argument clamped to [-1 + eps, 1 - eps]; the
  // derivative is taken at the clamped point.
  Var arccos(Var a, double eps);
  // n x n -> n x 1: per row the smallest off-diagonal entry. Ties go to the
  // smallest column index; the gradient flows to the selected entry only.
  Var row_min_offdiag(Var a);
  // Mean over rows of weight[i] * (logsumexp(z_i) - z_i[label_i]).
  Var softmax_cross_entropy(Var logits, std::vector<int> labels, Vector weights);

 private:
  struct Node {
    OpTag tag = OpTag::kLeaf;
    std::size_t lhs = 0;
    std::size_t rhs = 0;
    bool requires_grad = false;
    Matrix value;
    Matrix grad;
    double scalar = 0.0;
    std::vector<std::size_t> index;
    Vector aux;
  };

  Var push_leaf(Matrix value, bool requires_grad);
  Var push(Node node);
  const Node& node(Var v) const { return nodes_.at(v.id); }
  void propagate(std::size_t id);
  Matrix& grad_of(std::size_t id);

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace ncf
