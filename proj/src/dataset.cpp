#include "ncforge/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ncforge/error.hpp"

namespace ncf {

Counts count_labels(const Labels& labels, std::size_t num_classes) {
  Counts counts(num_classes, 0);
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw InvalidInput("label " + std::to_string(y) + " out of range [0, " +
                         std::to_string(num_classes) + ")");
    }
    ++counts[static_cast<std::size_t>(y)];
  }
  return counts;
}

Dataset make_dataset(Matrix features, Labels labels, std::size_t num_classes, std::string name) {
  if (features.rows() != labels.size()) {
    throw InvalidInput("dataset '" + name + "': " + std::to_string(features.rows()) +
                       " feature rows vs " + std::to_string(labels.size()) + " labels");
  }
  Counts counts = count_labels(labels, num_classes);
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (counts[k] == 0) {
      throw InvalidInput("dataset '" + name + "': class " + std::to_string(k) + " has no samples");
    }
  }
  return Dataset{std::move(features), std::move(labels), std::move(counts), std::move(name)};
}

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

GaussianMixture draw_mixture(std::size_t num_classes, std::size_t dim, double separation,
                             double spread, std::uint64_t seed) {
  if (num_classes < 2 || dim < 2) throw InvalidInput("draw_mixture: need K >= 2 and D >= 2");
  if (!(separation > 0.0) || !(spread >= 0.0)) {
    throw InvalidInput("draw_mixture: separation must be > 0 and spread >= 0");
  }
  auto rng = make_rng(seed, 1);
  std::normal_distribution<double> gauss(0.0, 1.0);
  GaussianMixture mix{Matrix(num_classes, dim), spread};
  for (std::size_t k = 0; k < num_classes; ++k) {
    auto row = mix.means.row(k);
    double len = 0.0;
    while (len < 1e-12) {
      for (double& v : row) v = gauss(rng);
      len = norm(row);
    }
    for (double& v : row) v *= separation / len;
  }
  return mix;
}

Dataset sample_mixture(const GaussianMixture& mixture, std::size_t per_class, std::uint64_t seed,
                       std::string name) {
  if (per_class < 1) throw InvalidInput("sample_mixture: per_class must be >= 1");
  const std::size_t k_count = mixture.means.rows();
  const std::size_t dim = mixture.means.cols();
  auto rng = make_rng(seed, 2);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix x(k_count * per_class, dim);
  Labels y(k_count * per_class);
  for (std::size_t k = 0; k < k_count; ++k) {
    for (std::size_t j = 0; j < per_class; ++j) {
      const std::size_t i = k * per_class + j;
      y[i] = static_cast<int>(k);
      for (std::size_t c = 0; c < dim; ++c) {
        x(i, c) = mixture.means(k, c) + mixture.spread * gauss(rng);
      }
    }
  }
  return make_dataset(std::move(x), std::move(y), k_count, std::move(name));
}

Dataset gen_gaussian_mixture(std::size_t num_classes, std::size_t dim, std::size_t per_class,
                             double separation, double spread, std::uint64_t seed) {
  return sample_mixture(draw_mixture(num_classes, dim, separation, spread, seed), per_class, seed);
}

Counts long_tail_counts(std::size_t per_class, std::size_t num_classes, double imbalance_ratio) {
  if (num_classes < 2) throw SpecError("long tail needs at least 2 classes");
  if (!(imbalance_ratio >= 1.0)) throw SpecError("imbalance ratio must be >= 1");
  Counts counts(num_classes);
  const double m = static_cast<double>(per_class);
  for (std::size_t k = 0; k < num_classes; ++k) {
    const double exponent = -static_cast<double>(k) / static_cast<double>(num_classes - 1);
    counts[k] = static_cast<std::size_t>(std::floor(m * std::pow(imbalance_ratio, exponent) + 0.5));
  }
  // Pin the endpoints so that max/min equals r up to rounding of m / r.
  counts.front() = per_class;
  counts.back() = static_cast<std::size_t>(std::floor(m / imbalance_ratio + 0.5));
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (counts[k] < 1) {
      throw SpecError("long tail leaves class rank " + std::to_string(k) + " with no samples (m=" +
                      std::to_string(per_class) + ", r=" + std::to_string(imbalance_ratio) + ")");
    }
  }
  return counts;
}

Dataset apply_long_tail(const Dataset& ds, const LongTailSpec& spec, std::uint64_t seed) {
  const std::size_t k_count = ds.num_classes();
  if (k_count == 0) throw SpecError("apply_long_tail: empty dataset");
  const std::size_t m = ds.class_counts.front();
  for (std::size_t c : ds.class_counts) {
    if (c != m) throw SpecError("apply_long_tail: input dataset is not balanced");
  }
  std::vector<int> ordering = spec.ordering;
  if (ordering.empty()) {
    ordering.resize(k_count);
    std::iota(ordering.begin(), ordering.end(), 0);
  }
  {
    std::vector<int> sorted = ordering;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t k = 0; k < k_count; ++k) {
      if (sorted.size() != k_count || sorted[k] != static_cast<int>(k)) {
        throw SpecError("apply_long_tail: ordering is not a permutation of the classes");
      }
    }
  }
  const Counts sizes = long_tail_counts(m, k_count, spec.imbalance_ratio);
  Counts keep_of_class(k_count);
  for (std::size_t rank = 0; rank < k_count; ++rank) {
    keep_of_class[static_cast<std::size_t>(ordering[rank])] = sizes[rank];
  }

  std::vector<std::vector<std::size_t>> members(k_count);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    members[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  }
  auto rng = make_rng(seed, 3);
  std::vector<std::size_t> kept;
  for (std::size_t k = 0; k < k_count; ++k) {
    auto& idx = members[k];
    std::shuffle(idx.begin(), idx.end(), rng);
    kept.insert(kept.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep_of_class[k]));
  }
  std::sort(kept.begin(), kept.end());

  Matrix x(kept.size(), ds.dim());
  Labels y(kept.size());
  for (std::size_t j = 0; j < kept.size(); ++j) {
    auto src = ds.features.row(kept[j]);
    std::copy(src.begin(), src.end(), x.row(j).begin());
    y[j] = ds.labels[kept[j]];
  }
  return make_dataset(std::move(x), std::move(y), k_count, ds.name + "-lt");
}

Batches make_index_stream(const Dataset& ds, const SamplerMode& mode, std::size_t batch_size,
                          std::optional<std::size_t> draws) {
  if (batch_size < 1) throw InvalidInput("make_index_stream: batch_size must be >= 1");
  const std::size_t total = draws.value_or(ds.size());
  auto rng = make_rng(mode.seed, 4);
  std::vector<std::size_t> order;
  order.reserve(total);
  if (mode.kind == SamplerMode::Kind::kInstanceBalanced) {
    std::vector<std::size_t> perm(ds.size());
    while (order.size() < total) {
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      const std::size_t take = std::min(perm.size(), total - order.size());
      order.insert(order.end(), perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(take));
      if (perm.empty()) break;
    }
  } else {
    std::vector<std::vector<std::size_t>> members(ds.num_classes());
    for (std::size_t i = 0; i < ds.size(); ++i) {
      members[static_cast<std::size_t>(ds.labels[i])].push_back(i);
    }
    std::uniform_int_distribution<std::size_t> pick_class(0, ds.num_classes() - 1);
    for (std::size_t t = 0; t < total; ++t) {
      const auto& pool = members[pick_class(rng)];
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      order.push_back(pool[pick(rng)]);
    }
  }
  Batches batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

Dataset corrupt_gaussian(const Dataset& ds, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw InvalidInput("corrupt_gaussian: sigma must be >= 0");
  Dataset out = ds;
  if (sigma == 0.0) return out;
  auto rng = make_rng(seed, 5);
  std::normal_distribution<double> gauss(0.0, sigma);
  for (double& v : out.features.data()) v += gauss(rng);
  return out;
}

Subset select_rows(const Dataset& ds, const std::vector<std::size_t>& index) {
  Subset s{Matrix(index.size(), ds.dim()), Labels(index.size())};
  for (std::size_t j = 0; j < index.size(); ++j) {
    auto src = ds.features.row(index.at(j));
    std::copy(src.begin(), src.end(), s.features.row(j).begin());
    s.labels[j] = ds.labels[index[j]];
  }
  return s;
}

}  // namespace ncf
