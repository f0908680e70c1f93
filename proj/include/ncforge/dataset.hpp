#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ncforge/matrix.hpp"

namespace ncf {

using Labels = std::vector<int>;
using Counts = std::vector<std::size_t>;

struct Dataset {
  Matrix features;  // n x D
  Labels labels;    // values in [0, K)
  Counts class_counts;
  std::string name;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return features.cols(); }
  std::size_t num_classes() const noexcept { return class_counts.size(); }
};

// Builds a dataset and checks its invariants: every class in [0, K) is
// present and the counts agree with the labels. Throws InvalidInput.
Dataset make_dataset(Matrix features, Labels labels, std::size_t num_classes, std::string name);

Counts count_labels(const Labels& labels, std::size_t num_classes);

// Deterministic engine for (seed, stream). Distinct streams of the same
// seed are independent.
std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0);

struct GaussianMixture {
  Matrix means;  // K x D
  double spread = 1.0;
};

// K means drawn uniformly on the radius-`separation` sphere in R^D.
GaussianMixture draw_mixture(std::size_t num_classes, std::size_t dim, double separation,
                             double spread, std::uint64_t seed);

// per_class samples of each class (class-major order), mean + N(0, spread^2 I).
Dataset sample_mixture(const GaussianMixture& mixture, std::size_t per_class, std::uint64_t seed,
                       std::string name = "gaussian-mixture");

Dataset gen_gaussian_mixture(std::size_t num_classes, std::size_t dim, std::size_t per_class,
                             double separation, double spread, std::uint64_t seed);

struct LongTailSpec {
  double imbalance_ratio = 1.0;
  // ordering[k] is the class that receives the k-th largest size. Empty
  // means identity (class 0 is the head).
  std::vector<int> ordering;
};

// Class sizes m * r^(-k/(K-1)) for rank k, rounded half-up. Throws
// SpecError if any size drops below one.
Counts long_tail_counts(std::size_t per_class, std::size_t num_classes, double imbalance_ratio);

// Subsamples a balanced dataset to a long-tailed profile. Kept samples
// retain their original order and values. Throws SpecError if ds is not
// balanced or the spec is malformed.
Dataset apply_long_tail(const Dataset& ds, const LongTailSpec& spec, std::uint64_t seed);

struct SamplerMode {
  enum class Kind { kInstanceBalanced, kClassBalanced };
  Kind kind = Kind::kInstanceBalanced;
  std::uint64_t seed = 0;
};

using Batches = std::vector<std::vector<std::size_t>>;

// One epoch of index batches. Instance-balanced yields a shuffled
// permutation; class-balanced picks a class uniformly per slot, then an
// instance of that class uniformly. `draws` defaults to ds.size().
Batches make_index_stream(const Dataset& ds, const SamplerMode& mode, std::size_t batch_size,
                          std::optional<std::size_t> draws = std::nullopt);

// Adds i.i.d. N(0, sigma^2) noise to every feature. Throws InvalidInput if
// sigma < 0.
Dataset corrupt_gaussian(const Dataset& ds, double sigma, std::uint64_t seed);

// Rows of ds selected by index, in the given order (duplicates allowed).
// Unlike Dataset, a subset may miss classes.
struct Subset {
  Matrix features;
  Labels labels;
};
Subset select_rows(const Dataset& ds, const std::vector<std::size_t>& index);

}  // namespace ncf
