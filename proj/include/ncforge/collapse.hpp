#pragma once

// Neural-collapse statistics of a feature matrix H (n x P) with labels.
//
//   NC1  within-class variability relative to between-class spread
//   NC2  centered class means approach a simplex ETF (equal norms, all
//        pairwise cosines -1/(K-1))
//   NC3  classifier columns parallel to the centered class means
//   NC4  the classifier agrees with the nearest-class-center rule

#include <cstdint>
#include <string>

#include "ncforge/dataset.hpp"
#include "ncforge/matrix.hpp"
#include "ncforge/model.hpp"

namespace ncf {

struct ClassStatistics {
  Matrix mu;        // K x P, row k = mean of class k
  Vector mu_c;      // mean of the class means
  Vector h_bar;     // global feature mean
  Matrix m_dot;     // P x K, column k = mu_k - h_bar
  Matrix m_bar;     // P x K, column k = mu_k - mu_c
  Matrix sigma_t;   // (H - 1 h_bar)^T (H - 1 h_bar)
  Matrix sigma_w;   // sum_i (h_i - mu_{y_i})(h_i - mu_{y_i})^T
  Matrix sigma_b;   // sum_k n_k (mu_k - h_bar)(mu_k - h_bar)^T
  Counts counts;
  Matrix lambda_diag;  // diag(n_1, ..., n_K)
  Vector norms;        // ||mu_k - mu_c||
  double within_sq_dist = 0.0;  // mean_i ||h_i - mu_{y_i}||^2

  std::size_t num_classes() const { return counts.size(); }
  std::size_t dim() const { return mu.cols(); }
};

// Throws InvalidInput if some class in [0, num_classes) has no sample.
ClassStatistics compute_class_stats(const Matrix& features, const Labels& labels,
                                    std::size_t num_classes);

// trace(Sigma_W Sigma_B^+) / K. Throws DegenerateGeometry if Sigma_B has
// zero trace.
double nc1_metric(const ClassStatistics& stats);

struct Nc2Metrics {
  Matrix angle_deg;  // K x K, pairwise angles between centered means
  double cos_dev = 0.0;  // max_{k != k'} |cos - (-1/(K-1))|
  double norm_cv = 0.0;  // std / mean of ||mu_k - mu_c||
};

// Throws DegenerateGeometry if a centered mean is below the norm floor.
Nc2Metrics nc2_metrics(const ClassStatistics& stats);

// mean_k cos(w_k, mu_k - mu_c). Throws DegenerateGeometry on a zero column
// or a collapsed centered mean, ShapeError on a P/K mismatch.
double nc3_metric(const ClassStatistics& stats, const LinearClassifier& classifier);

// Fraction of rows where argmax_k (<w_k, h> + b_k) equals
// argmin_k ||h - mu_k||. Ties go to the smallest class index in both rules.
double nc4_agreement(const Matrix& features, const ClassStatistics& stats,
                     const LinearClassifier& classifier);

struct EtfCheck {
  bool ok = false;
  double alpha = 0.0;     // least-squares scale of the Gram matrix
  double residual = 0.0;  // ||M^T M - alpha * T||_F
};

// Fits M^T M ~ alpha (K/(K-1) I - 1/(K-1) 1 1^T). ok iff alpha != 0 and
// residual <= tol * |alpha| * K. Throws SpecError if K < 2 or P < K - 1.
EtfCheck is_simplex_etf(const Matrix& m, double tol);

// P x K simplex ETF with squared column norms alpha, embedded in R^P by a
// random orthonormal map. Requires P >= K - 1.
Matrix make_simplex_etf(std::size_t num_classes, std::size_t dim, double alpha,
                        std::uint64_t seed);

// An orthonormal K-frame has residual 1 and alpha (K-1)/K, so it passes once
// tol >= 1/(K-1). 0.05 keeps it rejected up to K = 20.
inline constexpr double kDefaultEtfTol = 0.05;

struct NcReport {
  double nc1 = 0.0;
  double nc1_within = 0.0;  // raw mean squared distance to class mean
  double nc2_cos_dev = 0.0;
  double nc2_norm_cv = 0.0;
  double nc3_align = 0.0;
  double nc4_agree = 0.0;
  Matrix angle_deg;
  Vector norms;
  bool etf_ok = false;
  double etf_alpha = 0.0;
};

// Full metric suite. Metrics that are undefined for the given geometry are
// reported as NaN instead of throwing.
NcReport nc_report(const Matrix& features, const Labels& labels, std::size_t num_classes,
                   const LinearClassifier& classifier, double etf_tol = kDefaultEtfTol);

}  // namespace ncf
