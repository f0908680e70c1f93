#include "ncforge/analytic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ncforge/autodiff.hpp"
#include "ncforge/collapse.hpp"
#include "ncforge/error.hpp"
#include "ncforge/linalg.hpp"
#include "ncforge/objectives.hpp"

namespace ncf {

LsSolution ls_optimal_classifier(const Matrix& features, const Labels& labels,
                                 std::size_t num_classes) {
  const std::size_t n = features.rows();
  if (n < num_classes) throw InvalidInput("ls_optimal_classifier: fewer samples than classes");
  const ClassStatistics stats = compute_class_stats(features, labels, num_classes);

  // Normal equations of the centered problem: Sigma_T W = H_c^T Y, and
  // column k of H_c^T Y is n_k (mu_k - h_bar).
  const Matrix rhs = matmul(stats.m_dot, stats.lambda_diag);
  LsSolution sol;
  sol.classifier.weight = matmul(pinv(stats.sigma_t), rhs);
  sol.classifier.bias.assign(num_classes, 0.0);
  for (std::size_t k = 0; k < num_classes; ++k) {
    double hw = 0.0;
    for (std::size_t p = 0; p < stats.dim(); ++p) hw += stats.h_bar[p] * sol.classifier.weight(p, k);
    sol.classifier.bias[k] = static_cast<double>(stats.counts[k]) / static_cast<double>(n) - hw;
  }
  sol.residual = ls_loss(features, labels, sol.classifier);
  return sol;
}

double ls_loss(const Matrix& features, const Labels& labels, const LinearClassifier& c) {
  return mse_loss(forward_logits(c, features), labels);
}

LsCheck verify_ls_optimality(std::size_t num_classes, std::size_t dim, std::size_t samples,
                             std::size_t perturbations, double radius, std::uint64_t seed) {
  if (samples < num_classes) throw InvalidInput("verify_ls_optimality: fewer samples than classes");
  auto rng = make_rng(seed, 32);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix h(samples, dim);
  for (double& v : h.data()) v = gauss(rng);
  Labels labels(samples);
  for (std::size_t i = 0; i < samples; ++i) labels[i] = static_cast<int>(i % num_classes);

  const LsSolution sol = ls_optimal_classifier(h, labels, num_classes);
  const LinearClassifier& c = sol.classifier;

  // Gradient of (1/2n)||Y - HW - 1b^T||^2: -(1/n) H^T R and -(1/n) 1^T R.
  Matrix r = forward_logits(c, h);
  for (std::size_t i = 0; i < samples; ++i) r(i, static_cast<std::size_t>(labels[i])) -= 1.0;
  const double inv_n = 1.0 / static_cast<double>(samples);
  Matrix gw = matmul_tn(h, r) * inv_n;
  double g2 = frobenius_norm(gw) * frobenius_norm(gw);
  for (std::size_t k = 0; k < num_classes; ++k) {
    double gb = 0.0;
    for (std::size_t i = 0; i < samples; ++i) gb += r(i, k);
    g2 += gb * gb * inv_n * inv_n;
  }

  LsCheck out;
  out.grad_norm = std::sqrt(g2);
  out.min_increase = std::numeric_limits<double>::infinity();
  const double tol = 1e-12 * (1.0 + sol.residual);
  for (std::size_t t = 0; t < perturbations; ++t) {
    LinearClassifier moved = c;
    double len = 0.0;
    std::vector<double> dir(c.weight.size() + c.bias.size());
    for (double& v : dir) {
      v = gauss(rng);
      len += v * v;
    }
    const double s = radius / std::sqrt(len);
    for (std::size_t i = 0; i < c.weight.size(); ++i) moved.weight.data()[i] += s * dir[i];
    for (std::size_t k = 0; k < c.bias.size(); ++k) moved.bias[k] += s * dir[c.weight.size() + k];
    out.min_increase = std::min(out.min_increase, ls_loss(h, labels, moved) - sol.residual);
  }
  out.ok = out.grad_norm <= 1e-8 && !(out.min_increase < -tol);
  return out;
}

MaxMinResult verify_maxmin_cosine(std::size_t num_classes, std::size_t dim, std::size_t steps,
                                  std::uint64_t seed) {
  const std::size_t k = num_classes;
  if (k < 2) throw SpecError("verify_maxmin_cosine: need at least two vectors");
  if (dim + 1 < k) throw SpecError("verify_maxmin_cosine: dimension must be >= K - 1");

  auto rng = make_rng(seed, 30);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix v(k, dim);
  auto renormalize = [&v] {
    for (std::size_t i = 0; i < v.rows(); ++i) {
      auto row = v.row(i);
      const double len = norm(row);
      for (double& x : row) x /= len;
    }
  };
  for (double& x : v.data()) x = gauss(rng);
  renormalize();

  // Subgradient steps need a decaying size to settle on the max-min point.
  constexpr double kBaseStep = 0.5;
  for (std::size_t t = 0; t < steps; ++t) {
    Graph g;
    Var x = g.leaf(v);
    Var loss = between_class_reg(g, x);
    g.backward(loss);
    const Matrix& grad = g.grad(x);
    const double step = kBaseStep / std::sqrt(1.0 + static_cast<double>(t));
    for (std::size_t i = 0; i < v.size(); ++i) v.data()[i] -= step * grad.data()[i];
    renormalize();
  }

  MaxMinResult out;
  out.steps = steps;
  out.bound = -1.0 / static_cast<double>(k - 1);
  out.max_cosine = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j)
      out.max_cosine = std::max(out.max_cosine, dot(v.row(i), v.row(j)));
  out.converged = out.max_cosine <= out.bound + 0.05;
  return out;
}

SelfDualityReport verify_self_duality(std::size_t num_classes, std::size_t dim, double alpha,
                                      std::uint64_t seed, const SelfDualityOptions& opts) {
  const std::size_t k = num_classes;
  if (dim + 1 < k) throw SpecError("verify_self_duality: dimension must be >= K - 1");
  const Matrix etf = make_simplex_etf(k, dim, alpha, seed);  // P x K

  auto rng = make_rng(seed, 31);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vector offset(dim);
  for (double& x : offset) x = gauss(rng);

  // Pool with exact variability collapse: every sample sits on its mean.
  const Counts pool = long_tail_counts(opts.per_class, k, opts.imbalance_ratio);
  Labels pool_labels;
  for (std::size_t c = 0; c < k; ++c) pool_labels.insert(pool_labels.end(), pool[c], static_cast<int>(c));

  Labels labels;
  if (opts.class_balanced) {
    // Stratified class-balanced resampling: every class drawn equally often.
    std::vector<std::vector<std::size_t>> members(k);
    for (std::size_t i = 0; i < pool_labels.size(); ++i) {
      members[static_cast<std::size_t>(pool_labels[i])].push_back(i);
    }
    const std::size_t quota = std::max<std::size_t>(1, pool_labels.size() / k);
    for (std::size_t c = 0; c < k; ++c) {
      std::uniform_int_distribution<std::size_t> pick(0, members[c].size() - 1);
      for (std::size_t q = 0; q < quota; ++q) labels.push_back(pool_labels[members[c][pick(rng)]]);
    }
  } else {
    labels = pool_labels;
  }

  Matrix features(labels.size(), dim);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    for (std::size_t p = 0; p < dim; ++p) features(i, p) = offset[p] + etf(p, c);
  }

  const LsSolution sol = ls_optimal_classifier(features, labels, k);
  const ClassStatistics stats = compute_class_stats(features, labels, k);
  SelfDualityReport r;
  r.samples = labels.size();
  r.min_alignment = std::numeric_limits<double>::infinity();
  double max_norm = 0.0;
  double min_norm = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < k; ++c) {
    const Vector w = sol.classifier.weight.column(c);
    const Vector m = stats.m_bar.column(c);
    const double cosv = dot(w, m) / (norm(w) * norm(m));
    r.min_alignment = std::min(r.min_alignment, cosv);
    r.mean_alignment += cosv / static_cast<double>(k);
    max_norm = std::max(max_norm, norm(w));
    min_norm = std::min(min_norm, norm(w));
  }
  r.norm_spread = max_norm > 0.0 ? (max_norm - min_norm) / max_norm : 0.0;
  return r;
}

}  // namespace ncf
