#include "ncforge/collapse.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "ncforge/error.hpp"
#include "ncforge/linalg.hpp"
#include "ncforge/objectives.hpp"

namespace ncf {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

double cosine(std::span<const double> a, std::span<const double> b) {
  return dot(a, b) / (norm(a) * norm(b));
}

void add_outer(Matrix& acc, std::span<const double> v, double weight) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double vi = weight * v[i];
    if (vi == 0.0) continue;
    auto row = acc.row(i);
    for (std::size_t j = 0; j < v.size(); ++j) row[j] += vi * v[j];
  }
}

template <typename F>
double or_nan(F&& f) {
  try {
    return f();
  } catch (const DegenerateGeometry&) {
    return kNan;
  }
}

}  // namespace

ClassStatistics compute_class_stats(const Matrix& features, const Labels& labels,
                                    std::size_t num_classes) {
  const std::size_t n = features.rows();
  const std::size_t p = features.cols();
  if (labels.size() != n) throw ShapeError("compute_class_stats: label count != rows");
  ClassStatistics s;
  s.counts = count_labels(labels, num_classes);
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (s.counts[k] == 0) {
      throw InvalidInput("compute_class_stats: class " + std::to_string(k) + " has no samples");
    }
  }

  s.mu = Matrix(num_classes, p);
  for (std::size_t i = 0; i < n; ++i) {
    auto dst = s.mu.row(static_cast<std::size_t>(labels[i]));
    auto src = features.row(i);
    for (std::size_t c = 0; c < p; ++c) dst[c] += src[c];
  }
  for (std::size_t k = 0; k < num_classes; ++k) {
    for (double& v : s.mu.row(k)) v /= static_cast<double>(s.counts[k]);
  }
  s.h_bar = column_means(features);
  s.mu_c = column_means(s.mu);

  s.m_dot = Matrix(p, num_classes);
  s.m_bar = Matrix(p, num_classes);
  s.norms.assign(num_classes, 0.0);
  Vector centered(p);
  for (std::size_t k = 0; k < num_classes; ++k) {
    for (std::size_t c = 0; c < p; ++c) {
      s.m_dot(c, k) = s.mu(k, c) - s.h_bar[c];
      s.m_bar(c, k) = s.mu(k, c) - s.mu_c[c];
      centered[c] = s.m_bar(c, k);
    }
    s.norms[k] = norm(centered);
  }

  s.sigma_t = Matrix(p, p);
  s.sigma_w = Matrix(p, p);
  s.sigma_b = Matrix(p, p);
  Vector d(p);
  double within = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto h = features.row(i);
    for (std::size_t c = 0; c < p; ++c) d[c] = h[c] - s.h_bar[c];
    add_outer(s.sigma_t, d, 1.0);
    auto mu = s.mu.row(static_cast<std::size_t>(labels[i]));
    for (std::size_t c = 0; c < p; ++c) d[c] = h[c] - mu[c];
    add_outer(s.sigma_w, d, 1.0);
    within += dot(d, d);
  }
  s.within_sq_dist = n ? within / static_cast<double>(n) : 0.0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    for (std::size_t c = 0; c < p; ++c) d[c] = s.m_dot(c, k);
    add_outer(s.sigma_b, d, static_cast<double>(s.counts[k]));
  }

  Vector diag(num_classes);
  for (std::size_t k = 0; k < num_classes; ++k) diag[k] = static_cast<double>(s.counts[k]);
  s.lambda_diag = Matrix::diagonal(diag);
  return s;
}

double nc1_metric(const ClassStatistics& stats) {
  if (!(trace(stats.sigma_b) > 0.0)) {
    throw DegenerateGeometry("nc1_metric: between-class scatter has zero trace");
  }
  const Matrix prod = matmul(stats.sigma_w, pinv(stats.sigma_b));
  return trace(prod) / static_cast<double>(stats.num_classes());
}

Nc2Metrics nc2_metrics(const ClassStatistics& stats) {
  const std::size_t k = stats.num_classes();
  for (std::size_t i = 0; i < k; ++i) {
    if (stats.norms[i] < kNormFloor) {
      throw DegenerateGeometry("nc2_metrics: centered mean of class " + std::to_string(i) +
                               " has vanishing norm");
    }
  }
  const Matrix means = stats.m_bar.transpose();  // K x P
  const double target = -1.0 / static_cast<double>(k - 1);
  Nc2Metrics out{Matrix(k, k), 0.0, 0.0};
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      const double c = std::clamp(cosine(means.row(i), means.row(j)), -1.0, 1.0);
      const double deg = std::acos(c) * 180.0 / std::numbers::pi;
      out.angle_deg(i, j) = out.angle_deg(j, i) = deg;
      out.cos_dev = std::max(out.cos_dev, std::abs(c - target));
    }
  }
  double mean = 0.0;
  for (double v : stats.norms) mean += v;
  mean /= static_cast<double>(k);
  double var = 0.0;
  for (double v : stats.norms) var += (v - mean) * (v - mean);
  var /= static_cast<double>(k);
  out.norm_cv = std::sqrt(var) / mean;
  return out;
}

double nc3_metric(const ClassStatistics& stats, const LinearClassifier& classifier) {
  const std::size_t k = stats.num_classes();
  if (classifier.weight.rows() != stats.dim() || classifier.weight.cols() != k) {
    throw ShapeError("nc3_metric: classifier is " + std::to_string(classifier.weight.rows()) +
                     "x" + std::to_string(classifier.weight.cols()) + ", statistics are P=" +
                     std::to_string(stats.dim()) + ", K=" + std::to_string(k));
  }
  double total = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    const Vector w = classifier.weight.column(c);
    const Vector m = stats.m_bar.column(c);
    if (norm(w) == 0.0) {
      throw DegenerateGeometry("nc3_metric: classifier column " + std::to_string(c) + " is zero");
    }
    if (norm(m) < kNormFloor) {
      throw DegenerateGeometry("nc3_metric: centered mean of class " + std::to_string(c) +
                               " has vanishing norm");
    }
    total += cosine(w, m);
  }
  return total / static_cast<double>(k);
}

double nc4_agreement(const Matrix& features, const ClassStatistics& stats,
                     const LinearClassifier& classifier) {
  const std::size_t k = stats.num_classes();
  if (features.cols() != stats.dim() || classifier.weight.rows() != stats.dim() ||
      classifier.weight.cols() != k) {
    throw ShapeError("nc4_agreement: inconsistent shapes");
  }
  if (features.rows() == 0) return 0.0;
  const Matrix logits = forward_logits(classifier, features);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < features.rows(); ++i) {
    auto z = logits.row(i);
    std::size_t linear = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (z[c] > z[linear]) linear = c;
    }
    auto h = features.row(i);
    std::size_t nearest = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      auto mu = stats.mu.row(c);
      double d2 = 0.0;
      for (std::size_t j = 0; j < h.size(); ++j) d2 += (h[j] - mu[j]) * (h[j] - mu[j]);
      if (d2 < best) {
        best = d2;
        nearest = c;
      }
    }
    agree += linear == nearest;
  }
  return static_cast<double>(agree) / static_cast<double>(features.rows());
}

EtfCheck is_simplex_etf(const Matrix& m, double tol) {
  const std::size_t k = m.cols();
  if (k < 2) throw SpecError("is_simplex_etf: need at least two columns");
  if (m.rows() + 1 < k) {
    throw SpecError("is_simplex_etf: " + std::to_string(k) + " vectors need dimension >= " +
                    std::to_string(k - 1) + ", got " + std::to_string(m.rows()));
  }
  const Matrix gram = matmul_tn(m, m);
  const double kk = static_cast<double>(k);
  Matrix target(k, k, -1.0 / (kk - 1.0));
  for (std::size_t i = 0; i < k; ++i) target(i, i) = 1.0;  // K/(K-1) - 1/(K-1)
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < gram.size(); ++i) {
    num += gram.data()[i] * target.data()[i];
    den += target.data()[i] * target.data()[i];
  }
  EtfCheck out;
  out.alpha = num / den;
  out.residual = frobenius_norm(gram - target * out.alpha);
  out.ok = out.alpha != 0.0 && out.residual <= tol * std::abs(out.alpha) * kk;
  return out;
}

Matrix make_simplex_etf(std::size_t num_classes, std::size_t dim, double alpha,
                        std::uint64_t seed) {
  const std::size_t k = num_classes;
  if (k < 2) throw SpecError("make_simplex_etf: need at least two vectors");
  if (dim + 1 < k) throw SpecError("make_simplex_etf: dimension must be >= K - 1");
  if (!(alpha > 0.0)) throw InvalidInput("make_simplex_etf: alpha must be positive");

  // Centering projector I - 1 1^T / K: its columns span a (K-1)-dim space.
  const double kk = static_cast<double>(k);
  Matrix centering(k, k, -1.0 / kk);
  for (std::size_t i = 0; i < k; ++i) centering(i, i) += 1.0;
  Matrix first(k, k - 1);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j + 1 < k; ++j) first(i, j) = centering(i, j);
  const Matrix basis = orthonormal_columns(first);      // K x (K-1)
  const Matrix coords = matmul_tn(basis, centering);    // (K-1) x K

  auto rng = make_rng(seed, 20);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix random(dim, k - 1);
  for (double& v : random.data()) v = gauss(rng);
  const Matrix embed = orthonormal_columns(random);  // dim x (K-1)

  return matmul(embed, coords) * std::sqrt(alpha * kk / (kk - 1.0));
}

NcReport nc_report(const Matrix& features, const Labels& labels, std::size_t num_classes,
                   const LinearClassifier& classifier, double etf_tol) {
  const ClassStatistics stats = compute_class_stats(features, labels, num_classes);
  NcReport r;
  r.nc1 = or_nan([&] { return nc1_metric(stats); });
  r.nc1_within = stats.within_sq_dist;
  r.norms = stats.norms;
  try {
    Nc2Metrics nc2 = nc2_metrics(stats);
    r.nc2_cos_dev = nc2.cos_dev;
    r.nc2_norm_cv = nc2.norm_cv;
    r.angle_deg = std::move(nc2.angle_deg);
  } catch (const DegenerateGeometry&) {
    r.nc2_cos_dev = r.nc2_norm_cv = kNan;
    r.angle_deg = Matrix(num_classes, num_classes, kNan);
  }
  r.nc3_align = or_nan([&] { return nc3_metric(stats, classifier); });
  r.nc4_agree = nc4_agreement(features, stats, classifier);
  if (stats.dim() + 1 >= num_classes) {
    const EtfCheck etf = is_simplex_etf(stats.m_bar, etf_tol);
    r.etf_ok = etf.ok;
    r.etf_alpha = etf.alpha;
  }
  return r;
}

}  // namespace ncf
