#include "ncforge/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "ncforge/error.hpp"

namespace ncf {

namespace {

// Present classes in increasing order and the slot of every row.
struct BatchClasses {
  std::vector<int> classes;
  std::vector<std::size_t> slot;
  Vector counts;
};

BatchClasses batch_classes(const Labels& labels) {
  BatchClasses b;
  b.classes = labels;
  std::sort(b.classes.begin(), b.classes.end());
  b.classes.erase(std::unique(b.classes.begin(), b.classes.end()), b.classes.end());
  b.counts.assign(b.classes.size(), 0.0);
  b.slot.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto it = std::lower_bound(b.classes.begin(), b.classes.end(), labels[i]);
    b.slot[i] = static_cast<std::size_t>(it - b.classes.begin());
    b.counts[b.slot[i]] += 1.0;
  }
  return b;
}

template <typename F>
double evaluate(const Matrix& input, F&& build) {
  Graph g;
  Var x = g.constant(input);
  return g.value(build(g, x)).item();
}

}  // namespace

Vector row_weights(const ClassWeights& weights, const Labels& labels) {
  Vector out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= weights.w.size()) {
      throw InvalidInput("label " + std::to_string(labels[i]) + " has no class weight");
    }
    out[i] = weights.w[static_cast<std::size_t>(labels[i])];
  }
  return out;
}

Var cross_entropy(Graph& g, Var logits, const Labels& labels, const ClassWeights& weights) {
  const std::size_t k = g.value(logits).cols();
  if (weights.w.size() != k) {
    throw ShapeError("cross_entropy: " + std::to_string(weights.w.size()) + " class weights for " +
                     std::to_string(k) + " classes");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw InvalidInput("cross_entropy: label " + std::to_string(y) + " out of range");
    }
  }
  return g.softmax_cross_entropy(logits, labels, row_weights(weights, labels));
}

Var mse_loss(Graph& g, Var logits, const Labels& labels) {
  const Matrix& z = g.value(logits);
  if (labels.size() != z.rows()) throw ShapeError("mse_loss: label count != rows");
  Matrix y(z.rows(), z.cols());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= z.cols()) {
      throw InvalidInput("mse_loss: label " + std::to_string(labels[i]) + " out of range");
    }
    y(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  Var residual = g.sub(g.constant(std::move(y)), logits);
  return g.scale(g.sum(g.square(residual)), 0.5 / static_cast<double>(z.rows()));
}

Var within_class_reg(Graph& g, Var features, const Labels& labels) {
  if (labels.size() != g.value(features).rows()) {
    throw ShapeError("within_class_reg: label count != rows");
  }
  if (labels.empty()) return g.constant(Matrix::scalar(0.0));
  const BatchClasses b = batch_classes(labels);
  Vector inv_count(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) inv_count[i] = 1.0 / b.counts[b.slot[i]];
  Var means = g.segment_mean(features, b.slot, b.classes.size());
  Var diff = g.sub(features, g.gather_rows(means, b.slot));
  return g.sum(g.scale_rows(g.square(diff), std::move(inv_count)));
}

Var between_class_reg(Graph& g, Var centered_means) {
  const std::size_t k = g.value(centered_means).rows();
  if (k < 2) throw SpecError("between_class_reg: need at least two class means, got " + std::to_string(k));
  Var unit = g.row_normalize(centered_means, kNormFloor);
  Var angles = g.arccos(g.gram(unit), kArccosClamp);
  Var nearest = g.row_min_offdiag(angles);
  return g.scale(g.sum(nearest), -1.0 / static_cast<double>(k));
}

std::optional<Var> batch_between_class_reg(Graph& g, Var features, const Labels& labels) {
  if (labels.size() != g.value(features).rows()) {
    throw ShapeError("batch_between_class_reg: label count != rows");
  }
  const BatchClasses b = batch_classes(labels);
  if (b.classes.size() < 2) return std::nullopt;
  Var means = g.segment_mean(features, b.slot, b.classes.size());
  Var centered = g.sub_row(means, g.mean_rows(means));
  return between_class_reg(g, centered);
}

ObjectiveTerms training_objective(Graph& g, Var features, Var logits, const Labels& labels,
                                  const ClassWeights& weights, LossKind kind,
                                  const RegConfig& cfg, std::size_t epoch) {
  ObjectiveTerms t;
  t.sup = kind == LossKind::kCrossEntropy ? cross_entropy(g, logits, labels, weights)
                                          : mse_loss(g, logits, labels);
  t.lw = within_class_reg(g, features, labels);
  t.lb = batch_between_class_reg(g, features, labels);
  t.total = t.sup;
  if (cfg.active(epoch)) {
    if (cfg.lambda1 != 0.0) t.total = g.add(t.total, g.scale(*t.lw, cfg.lambda1));
    if (cfg.lambda2 != 0.0 && t.lb) t.total = g.add(t.total, g.scale(*t.lb, cfg.lambda2));
  }
  return t;
}

double cross_entropy(const Matrix& logits, const Labels& labels, const ClassWeights& weights) {
  return evaluate(logits, [&](Graph& g, Var z) { return cross_entropy(g, z, labels, weights); });
}

double mse_loss(const Matrix& logits, const Labels& labels) {
  return evaluate(logits, [&](Graph& g, Var z) { return mse_loss(g, z, labels); });
}

double within_class_reg(const Matrix& features, const Labels& labels) {
  return evaluate(features, [&](Graph& g, Var h) { return within_class_reg(g, h, labels); });
}

double between_class_reg(const Matrix& centered_means) {
  return evaluate(centered_means, [](Graph& g, Var c) { return between_class_reg(g, c); });
}

double total_loss(double sup, double lw, double lb, const RegConfig& cfg, std::size_t epoch) {
  if (!cfg.active(epoch)) return sup;
  return sup + cfg.lambda1 * lw + cfg.lambda2 * lb;
}

ClassWeights drw_weights(const Counts& class_counts, double beta, std::size_t epoch,
                         std::size_t drw_epoch) {
  if (!(beta >= 0.0 && beta < 1.0)) throw InvalidInput("drw_weights: beta must lie in [0, 1)");
  const std::size_t k = class_counts.size();
  if (epoch < drw_epoch) return ClassWeights::uniform(k);
  Vector w(k);
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    if (class_counts[i] == 0) throw InvalidInput("drw_weights: empty class " + std::to_string(i));
    // 1 - beta^n via expm1/log1p keeps precision for beta near 1.
    const double effective =
        -std::expm1(static_cast<double>(class_counts[i]) * std::log1p(-(1.0 - beta)));
    w[i] = beta == 0.0 ? 1.0 : (1.0 - beta) / effective;
    total += w[i];
  }
  const double mean = total / static_cast<double>(k);
  for (double& v : w) v /= mean;
  return ClassWeights{std::move(w)};
}

}  // namespace ncf
