#include "ncforge/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ncforge/error.hpp"

namespace ncf {

namespace {

void require_shape(const Matrix& m, std::size_t rows, std::size_t cols, const char* op) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ShapeError(std::string(op) + ": expected " + std::to_string(rows) + "x" +
                     std::to_string(cols) + ", got " + std::to_string(m.rows()) + "x" +
                     std::to_string(m.cols()));
  }
}

double clamp_unit(double x, double eps) { return std::clamp(x, -1.0 + eps, 1.0 - eps); }

}  // namespace

Var Graph::push_leaf(Matrix value, bool requires_grad) {
  Node n;
  n.tag = OpTag::kLeaf;
  n.requires_grad = requires_grad;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Graph::push(Node n) {
  n.requires_grad = nodes_.at(n.lhs).requires_grad || nodes_.at(n.rhs).requires_grad;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

const Matrix& Graph::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (!backward_done_) throw InvalidInput("grad(): backward() has not been run");
  return n.grad;
}

Matrix& Graph::grad_of(std::size_t id) { return nodes_[id].grad; }

void Graph::reset_grads() {
  for (Node& n : nodes_) n.grad = Matrix();
  backward_done_ = false;
}

void Graph::backward(Var output) {
  const Node& out = nodes_.at(output.id);
  if (out.value.rows() != 1 || out.value.cols() != 1) {
    throw ShapeError("backward: output must be a scalar, got " +
                     std::to_string(out.value.rows()) + "x" + std::to_string(out.value.cols()));
  }
  if (backward_done_) throw InvalidInput("backward: already run on this graph; reset_grads() first");
  for (Node& n : nodes_) n.grad = Matrix(n.value.rows(), n.value.cols());
  nodes_[output.id].grad(0, 0) = 1.0;
  for (std::size_t i = output.id + 1; i-- > 0;) {
    if (nodes_[i].requires_grad && nodes_[i].tag != OpTag::kLeaf) propagate(i);
  }
  backward_done_ = true;
}

void Graph::propagate(std::size_t id) {
  const Node& n = nodes_[id];
  const Matrix& g = n.grad;
  const Matrix& a = nodes_[n.lhs].value;
  const bool lhs_grad = nodes_[n.lhs].requires_grad;
  const bool rhs_grad = nodes_[n.rhs].requires_grad;
  switch (n.tag) {
    case OpTag::kLeaf:
      break;
    case OpTag::kMatmul: {
      const Matrix& b = nodes_[n.rhs].value;
      if (lhs_grad) grad_of(n.lhs) += matmul_nt(g, b);
      if (rhs_grad) grad_of(n.rhs) += matmul_tn(a, g);
      break;
    }
    case OpTag::kAdd:
      if (lhs_grad) grad_of(n.lhs) += g;
      if (rhs_grad) grad_of(n.rhs) += g;
      break;
    case OpTag::kSub:
      if (lhs_grad) grad_of(n.lhs) += g;
      if (rhs_grad) grad_of(n.rhs) -= g;
      break;
    case OpTag::kAddRow:
    case OpTag::kSubRow: {
      if (lhs_grad) grad_of(n.lhs) += g;
      if (rhs_grad) {
        const double sign = n.tag == OpTag::kAddRow ? 1.0 : -1.0;
        Matrix& gr = grad_of(n.rhs);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) gr(0, c) += sign * g(r, c);
      }
      break;
    }
    case OpTag::kScale: {
      Matrix& ga = grad_of(n.lhs);
      for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += n.scalar * g.data()[i];
      break;
    }
    case OpTag::kRelu: {
      Matrix& ga = grad_of(n.lhs);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (a.data()[i] > 0.0) ga.data()[i] += g.data()[i];
      }
      break;
    }
    case OpTag::kSquare: {
      Matrix& ga = grad_of(n.lhs);
      for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += 2.0 * a.data()[i] * g.data()[i];
      break;
    }
    case OpTag::kSum: {
      Matrix& ga = grad_of(n.lhs);
      for (double& v : ga.data()) v += g(0, 0);
      break;
    }
    case OpTag::kMeanRows: {
      Matrix& ga = grad_of(n.lhs);
      const double inv = 1.0 / static_cast<double>(a.rows());
      for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) ga(r, c) += g(0, c) * inv;
      break;
    }
    case OpTag::kGatherRows: {
      Matrix& ga = grad_of(n.lhs);
      for (std::size_t i = 0; i < n.index.size(); ++i) {
        auto dst = ga.row(n.index[i]);
        auto src = g.row(i);
        for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
      }
      break;
    }
    case OpTag::kScaleRows: {
      Matrix& ga = grad_of(n.lhs);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) += n.aux[r] * g(r, c);
      break;
    }
    case OpTag::kSegmentMean: {
      Matrix& ga = grad_of(n.lhs);
      for (std::size_t i = 0; i < a.rows(); ++i) {
        const std::size_t s = n.index[i];
        const double inv = 1.0 / n.aux[s];
        for (std::size_t c = 0; c < a.cols(); ++c) ga(i, c) += g(s, c) * inv;
      }
      break;
    }
    case OpTag::kRowNormalize: {
      Matrix& ga = grad_of(n.lhs);
      for (std::size_t r = 0; r < a.rows(); ++r) {
        const double len = norm(a.row(r));
        if (len < n.scalar) continue;
        auto u = n.value.row(r);
        auto gr = g.row(r);
        const double proj = dot(u, gr);
        for (std::size_t c = 0; c < a.cols(); ++c) ga(r, c) += (gr[c] - u[c] * proj) / len;
      }
      break;
    }
    case OpTag::kGram: {
      Matrix sym = g + g.transpose();
      grad_of(n.lhs) += ncf::matmul(sym, a);
      break;
    }
    case OpTag::kArccos: {
      Matrix& ga = grad_of(n.lhs);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double x = clamp_unit(a.data()[i], n.scalar);
        ga.data()[i] -= g.data()[i] / std::sqrt(1.0 - x * x);
      }
      break;
    }
    case OpTag::kRowMinOffdiag: {
      Matrix& ga = grad_of(n.lhs);
      for (std::size_t r = 0; r < a.rows(); ++r) ga(r, n.index[r]) += g(r, 0);
      break;
    }
    case OpTag::kSoftmaxCrossEntropy: {
      Matrix& ga = grad_of(n.lhs);
      const double inv_n = 1.0 / static_cast<double>(a.rows());
      const double upstream = g(0, 0);
      for (std::size_t r = 0; r < a.rows(); ++r) {
        auto z = a.row(r);
        const double zmax = *std::max_element(z.begin(), z.end());
        double denom = 0.0;
        for (double v : z) denom += std::exp(v - zmax);
        const double coef = upstream * n.aux[r] * inv_n;
        for (std::size_t c = 0; c < z.size(); ++c) {
          double p = std::exp(z[c] - zmax) / denom;
          if (c == n.index[r]) p -= 1.0;
          ga(r, c) += coef * p;
        }
      }
      break;
    }
  }
}

Var Graph::matmul(Var a, Var b) {
  Node n;
  n.tag = OpTag::kMatmul;
  n.lhs = a.id;
  n.rhs = b.id;
  n.value = ncf::matmul(value(a), value(b));
  return push(std::move(n));
}

Var Graph::add(Var a, Var b) {
  Node n;
  n.tag = OpTag::kAdd;
  n.lhs = a.id;
  n.rhs = b.id;
  n.value = value(a) + value(b);
  return push(std::move(n));
}

Var Graph::sub(Var a, Var b) {
  Node n;
  n.tag = OpTag::kSub;
  n.lhs = a.id;
  n.rhs = b.id;
  n.value = value(a) - value(b);
  return push(std::move(n));
}

Var Graph::add_row(Var a, Var row) {
  const Matrix& r = value(row);
  require_shape(r, 1, value(a).cols(), "add_row");
  Node n;
  n.tag = OpTag::kAddRow;
  n.lhs = a.id;
  n.rhs = row.id;
  n.value = value(a);
  for (std::size_t i = 0; i < n.value.rows(); ++i)
    for (std::size_t c = 0; c < n.value.cols(); ++c) n.value(i, c) += r(0, c);
  return push(std::move(n));
}

Var Graph::sub_row(Var a, Var row) {
  const Matrix& r = value(row);
  require_shape(r, 1, value(a).cols(), "sub_row");
  Node n;
  n.tag = OpTag::kSubRow;
  n.lhs = a.id;
  n.rhs = row.id;
  n.value = value(a);
  for (std::size_t i = 0; i < n.value.rows(); ++i)
    for (std::size_t c = 0; c < n.value.cols(); ++c) n.value(i, c) -= r(0, c);
  return push(std::move(n));
}

Var Graph::scale(Var a, double s) {
  Node n;
  n.tag = OpTag::kScale;
  n.lhs = n.rhs = a.id;
  n.scalar = s;
  n.value = value(a) * s;
  return push(std::move(n));
}

Var Graph::relu(Var a) {
  Node n;
  n.tag = OpTag::kRelu;
  n.lhs = n.rhs = a.id;
  n.value = value(a);
  for (double& v : n.value.data()) v = v > 0.0 ? v : 0.0;
  return push(std::move(n));
}

Var Graph::square(Var a) {
  Node n;
  n.tag = OpTag::kSquare;
  n.lhs = n.rhs = a.id;
  n.value = hadamard(value(a), value(a));
  return push(std::move(n));
}

Var Graph::sum(Var a) {
  Node n;
  n.tag = OpTag::kSum;
  n.lhs = n.rhs = a.id;
  n.value = Matrix::scalar(ncf::sum(value(a)));
  return push(std::move(n));
}

Var Graph::mean_rows(Var a) {
  const Matrix& m = value(a);
  if (m.rows() == 0) throw ShapeError("mean_rows: empty matrix");
  Node n;
  n.tag = OpTag::kMeanRows;
  n.lhs = n.rhs = a.id;
  n.value = Matrix::row_vector(column_means(m));
  return push(std::move(n));
}

Var Graph::gather_rows(Var a, std::vector<std::size_t> index) {
  const Matrix& m = value(a);
  Node n;
  n.tag = OpTag::kGatherRows;
  n.lhs = n.rhs = a.id;
  n.value = Matrix(index.size(), m.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= m.rows()) throw ShapeError("gather_rows: index out of range");
    std::copy(m.row(index[i]).begin(), m.row(index[i]).end(), n.value.row(i).begin());
  }
  n.index = std::move(index);
  return push(std::move(n));
}

Var Graph::scale_rows(Var a, Vector weights) {
  const Matrix& m = value(a);
  if (weights.size() != m.rows()) throw ShapeError("scale_rows: weight count != rows");
  Node n;
  n.tag = OpTag::kScaleRows;
  n.lhs = n.rhs = a.id;
  n.value = m;
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (double& v : n.value.row(r)) v *= weights[r];
  n.aux = std::move(weights);
  return push(std::move(n));
}

Var Graph::segment_mean(Var a, std::vector<std::size_t> segment, std::size_t num_segments) {
  const Matrix& m = value(a);
  if (segment.size() != m.rows()) throw ShapeError("segment_mean: segment count != rows");
  Node n;
  n.tag = OpTag::kSegmentMean;
  n.lhs = n.rhs = a.id;
  n.value = Matrix(num_segments, m.cols());
  n.aux.assign(num_segments, 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    if (segment[i] >= num_segments) throw ShapeError("segment_mean: segment out of range");
    n.aux[segment[i]] += 1.0;
    auto dst = n.value.row(segment[i]);
    auto src = m.row(i);
    for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
  }
  for (std::size_t s = 0; s < num_segments; ++s) {
    if (n.aux[s] == 0.0) throw InvalidInput("segment_mean: empty segment " + std::to_string(s));
    for (double& v : n.value.row(s)) v /= n.aux[s];
  }
  n.index = std::move(segment);
  return push(std::move(n));
}

Var Graph::row_normalize(Var a, double floor) {
  const Matrix& m = value(a);
  Node n;
  n.tag = OpTag::kRowNormalize;
  n.lhs = n.rhs = a.id;
  n.scalar = floor;
  n.value = Matrix(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double len = norm(m.row(r));
    if (len < floor) continue;
    for (std::size_t c = 0; c < m.cols(); ++c) n.value(r, c) = m(r, c) / len;
  }
  return push(std::move(n));
}

Var Graph::gram(Var a) {
  Node n;
  n.tag = OpTag::kGram;
  n.lhs = n.rhs = a.id;
  n.value = matmul_nt(value(a), value(a));
  return push(std::move(n));
}

Var Graph::arccos(Var a, double eps) {
  Node n;
  n.tag = OpTag::kArccos;
  n.lhs = n.rhs = a.id;
  n.scalar = eps;
  n.value = value(a);
  for (double& v : n.value.data()) v = std::acos(clamp_unit(v, eps));
  return push(std::move(n));
}

Var Graph::row_min_offdiag(Var a) {
  const Matrix& m = value(a);
  if (m.rows() != m.cols() || m.rows() < 2) {
    throw ShapeError("row_min_offdiag: needs a square matrix with at least 2 rows");
  }
  Node n;
  n.tag = OpTag::kRowMinOffdiag;
  n.lhs = n.rhs = a.id;
  n.value = Matrix(m.rows(), 1);
  n.index.assign(m.rows(), 0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = r == 0 ? 1 : 0;
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (c == r) continue;
      if (m(r, c) < best) {
        best = m(r, c);
        arg = c;
      }
    }
    n.value(r, 0) = best;
    n.index[r] = arg;
  }
  return push(std::move(n));
}

Var Graph::softmax_cross_entropy(Var logits, std::vector<int> labels, Vector weights) {
  const Matrix& z = value(logits);
  if (labels.size() != z.rows()) throw ShapeError("softmax_cross_entropy: label count != rows");
  if (weights.size() != z.rows()) throw ShapeError("softmax_cross_entropy: weight count != rows");
  if (z.rows() == 0) throw ShapeError("softmax_cross_entropy: empty batch");
  Node n;
  n.tag = OpTag::kSoftmaxCrossEntropy;
  n.lhs = n.rhs = logits.id;
  n.index.resize(labels.size());
  double total = 0.0;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= z.cols()) {
      throw InvalidInput("softmax_cross_entropy: label " + std::to_string(labels[r]) +
                         " out of range [0, " + std::to_string(z.cols()) + ")");
    }
    n.index[r] = static_cast<std::size_t>(labels[r]);
    auto row = z.row(r);
    const double zmax = *std::max_element(row.begin(), row.end());
    double denom = 0.0;
    for (double v : row) denom += std::exp(v - zmax);
    total += weights[r] * (zmax + std::log(denom) - row[n.index[r]]);
  }
  n.value = Matrix::scalar(total / static_cast<double>(z.rows()));
  n.aux = std::move(weights);
  return push(std::move(n));
}

}  // namespace ncf
