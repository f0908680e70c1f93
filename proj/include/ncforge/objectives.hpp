#pragma once

#include <cstddef>
#include <optional>

#include "ncforge/autodiff.hpp"
#include "ncforge/dataset.hpp"
#include "ncforge/matrix.hpp"

namespace ncf {

// Centered means shorter than this are treated as degenerate: they sit at
// angle pi/2 to every other mean and receive no gradient.
inline constexpr double kNormFloor = 1e-8;
// arccos arguments are clamped to [-1 + eps, 1 - eps].
inline constexpr double kArccosClamp = 1e-7;

struct RegConfig {
  double lambda1 = 0.0;  // within-class weight
  double lambda2 = 0.0;  // between-class weight
  std::size_t start_epoch = 0;

  bool active(std::size_t epoch) const { return epoch >= start_epoch; }
};

struct ClassWeights {
  Vector w;  // positive, mean 1

  static ClassWeights uniform(std::size_t num_classes) {
    return ClassWeights{Vector(num_classes, 1.0)};
  }
};

enum class LossKind { kCrossEntropy, kMse };

// --- differentiable forms -------------------------------------------------

Var cross_entropy(Graph& g, Var logits, const Labels& labels, const ClassWeights& weights);
// (1 / 2n) * ||Y - logits||_F^2 with one-hot Y.
Var mse_loss(Graph& g, Var logits, const Labels& labels);
// sum_k sum_{y_i = k} (1 / n_k) ||h_i - mu_k||^2, with means and counts from
// this batch; classes absent from the batch contribute nothing.
Var within_class_reg(Graph& g, Var features, const Labels& labels);
// -(1/K) sum_k min_{k' != k} angle(c_k, c_k') over the rows c_k of
// `centered_means`. Throws SpecError for fewer than two rows.
Var between_class_reg(Graph& g, Var centered_means);
// Batch form: class means of the present classes, centered on their
// average, fed to between_class_reg. Returns nullopt when fewer than two
// classes are present.
std::optional<Var> batch_between_class_reg(Graph& g, Var features, const Labels& labels);

struct ObjectiveTerms {
  Var total;
  Var sup;
  std::optional<Var> lw;
  std::optional<Var> lb;
};

// L = L_sup + lambda1 * L_W + lambda2 * L_B, with the regularizers switched
// on from cfg.start_epoch. lw/lb are always built (for logging) when
// computable; they enter `total` only when active.
ObjectiveTerms training_objective(Graph& g, Var features, Var logits, const Labels& labels,
                                  const ClassWeights& weights, LossKind kind,
                                  const RegConfig& cfg, std::size_t epoch);

// --- value forms ----------------------------------------------------------

double cross_entropy(const Matrix& logits, const Labels& labels, const ClassWeights& weights);
double mse_loss(const Matrix& logits, const Labels& labels);
double within_class_reg(const Matrix& features, const Labels& labels);
double between_class_reg(const Matrix& centered_means);

double total_loss(double sup, double lw, double lb, const RegConfig& cfg, std::size_t epoch);

// Effective-number class weights (1 - beta) / (1 - beta^n_k), mean-normalized,
// from drw_epoch on; uniform before. Throws InvalidInput unless 0 <= beta < 1.
ClassWeights drw_weights(const Counts& class_counts, double beta, std::size_t epoch,
                         std::size_t drw_epoch);

// Per-row weights w[y_i] for a batch.
Vector row_weights(const ClassWeights& weights, const Labels& labels);

}  // namespace ncf
