#pragma once

#include <cstdint>

#include "ncforge/dataset.hpp"
#include "ncforge/matrix.hpp"
#include "ncforge/model.hpp"

namespace ncf {

// Minimizer of (1/2n) ||Y - (H W + 1 b^T)||_F^2 for fixed features H.
struct LsSolution {
  LinearClassifier classifier;  // W_ls (P x K), b_ls (K)
  double residual = 0.0;        // the loss at the solution
};

// W_ls = Sigma_T^+ (H - 1 h_bar)^T Y = Sigma_T^+ M_dot Lambda and
// b_ls = (1/n) 1^T Y - h_bar W_ls. Rank-deficient Sigma_T (collapsed
// features) is handled by the pseudoinverse.
LsSolution ls_optimal_classifier(const Matrix& features, const Labels& labels,
                                 std::size_t num_classes);

// (1/2n) ||Y - (H W + 1 b^T)||_F^2
double ls_loss(const Matrix& features, const Labels& labels, const LinearClassifier& c);

struct LsCheck {
  double grad_norm = 0.0;     // Frobenius norm of the loss gradient at the solution
  double min_increase = 0.0;  // smallest loss change over the perturbations
  bool ok = false;            // gradient ~ 0 and no perturbation lowers the loss
};

// Random instance (n samples, K classes, P dims): fits the least-squares
// classifier and probes it with `perturbations` random moves of Frobenius
// size `radius`.
LsCheck verify_ls_optimality(std::size_t num_classes, std::size_t dim, std::size_t samples,
                             std::size_t perturbations, double radius, std::uint64_t seed);

struct MaxMinResult {
  double max_cosine = 0.0;  // largest pairwise cosine after optimization
  double bound = 0.0;       // -1/(K-1)
  bool converged = false;   // max_cosine <= bound + 0.05
  std::size_t steps = 0;
};

// Projected subgradient descent of the between-class regularizer over K
// free unit vectors in R^P, renormalizing after every step. Throws
// SpecError if K < 2 or P < K - 1.
MaxMinResult verify_maxmin_cosine(std::size_t num_classes, std::size_t dim, std::size_t steps,
                                  std::uint64_t seed);

struct SelfDualityOptions {
  bool class_balanced = true;     // stratified class-balanced resampling
  double imbalance_ratio = 100.0;  // profile of the underlying pool
  std::size_t per_class = 100;    // head size of the pool
};

struct SelfDualityReport {
  double min_alignment = 0.0;   // min_k cos(w_k, mu_k - mu_c)
  double mean_alignment = 0.0;
  double norm_spread = 0.0;     // (max - min) / max of ||w_k||
  std::size_t samples = 0;
};

// Builds features with exact variability collapse whose class means form an
// alpha-scaled simplex ETF around a random offset, resamples them, fits the
// least-squares classifier and reports its alignment with the centered means.
//
// With exact collapse the K class points are affinely independent, so the
// minimum-norm least-squares fit interpolates them and does not depend on
// the class counts: instance-balanced resampling of a long-tailed pool gives
// the same alignment as class-balanced resampling, up to rounding.
SelfDualityReport verify_self_duality(std::size_t num_classes, std::size_t dim, double alpha,
                                      std::uint64_t seed, const SelfDualityOptions& opts = {});

}  // namespace ncf
