#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ncforge/collapse.hpp"
#include "ncforge/dataset.hpp"
#include "ncforge/model.hpp"
#include "ncforge/objectives.hpp"

namespace ncf {

struct LrSchedule {
  enum class Kind { kMultiStep, kCosine };
  Kind kind = Kind::kMultiStep;
  double base = 0.1;
  std::vector<std::size_t> milestones;  // multi-step only
  double gamma = 0.1;                   // multi-step only

  static LrSchedule multi_step(double base, std::vector<std::size_t> milestones,
                               double gamma = 0.1) {
    return LrSchedule{Kind::kMultiStep, base, std::move(milestones), gamma};
  }
  static LrSchedule cosine(double base) { return LrSchedule{Kind::kCosine, base, {}, 0.1}; }
};

// multi-step: base * gamma^(#milestones <= epoch)
// cosine:     base * (1 + cos(pi * epoch / total)) / 2
double lr_at(const LrSchedule& schedule, std::size_t epoch, std::size_t total_epochs);

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 128;
  LrSchedule schedule = LrSchedule::multi_step(0.1, {42, 54});
  double momentum = 0.9;
  double weight_decay = 5e-3;
  RegConfig reg;
  std::optional<std::size_t> drw_epoch;  // none: uniform class weights throughout
  double drw_beta = 0.9999;
  std::optional<std::size_t> crt_epochs;  // none: no classifier retraining
  double crt_lr = 0.1;
  LossKind loss = LossKind::kCrossEntropy;
  std::vector<std::size_t> widths = {64, 64, 64};  // hidden..., P (input dim comes from data)
  std::uint64_t seed = 0;

  // Throws ConfigError on a malformed schedule, momentum outside [0, 1),
  // zero batch size or an empty width list.
  void validate() const;
};

// Milestones at 70% and 90% of the run.
std::vector<std::size_t> default_milestones(std::size_t epochs);
// 80% of the run.
std::size_t default_drw_epoch(std::size_t epochs);

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss_total = 0.0;  // batch means
  double loss_sup = 0.0;
  double loss_lw = 0.0;
  double loss_lb = 0.0;
  double train_acc = 0.0;  // full training set, end of epoch
  double nc1 = 0.0;
  double nc2_cos_dev = 0.0;
  double nc2_norm_cv = 0.0;
  double nc3_align = 0.0;
  double nc4_agree = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "epoch,lr,loss_total,loss_sup,loss_lw,loss_lb,train_acc,nc1,nc2_cos_dev,nc2_norm_cv,"
    "nc3_align,nc4_agree";
// One CSV row matching kMetricsHeader, '.' decimal, round-trip precision.
std::string metrics_csv_row(const EpochMetrics& m);

// Parameter views in a fixed order: extractor layers (weight, bias), then
// the classifier (weight, bias).
std::vector<std::span<double>> parameter_views(Model& model);
std::vector<std::span<const double>> parameter_views(const Model& model);

struct TrainState {
  Model model;
  std::vector<std::vector<double>> momentum;  // mirrors parameter_views(model)
  std::size_t epoch = 0;
  std::vector<EpochMetrics> log;
  NcReport last_report;  // NC statistics after the final epoch
};

struct SgdParams {
  double lr = 0.1;
  double momentum = 0.0;
  double weight_decay = 0.0;
};

// v <- momentum * v + grad + weight_decay * param; param <- param - lr * v.
// Throws NumericalError on a non-finite gradient (nothing is updated) and
// ShapeError on mismatched lengths.
void sgd_step(std::span<double> param, std::span<const double> grad, std::span<double> buffer,
              const SgdParams& p);

// Fresh state: initialized parameters and zero momentum buffers.
TrainState init_state(const TrainConfig& cfg, std::size_t input_dim, std::size_t num_classes);

// Mini-batch SGD on the regularized objective over instance-balanced
// epochs. Batch statistics feed the regularizers, DRW weights apply from
// drw_epoch on, and every epoch ends with a metric row computed on the full
// training set. Deterministic in (cfg, ds). A non-finite gradient aborts
// with a NumericalError naming the epoch and batch.
TrainState train(const TrainConfig& cfg, const Dataset& ds);

struct CrtConfig {
  std::size_t epochs = 10;
  double lr = 0.1;  // cosine-decayed to zero
  std::size_t batch_size = 128;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
};

// Freezes the extractor, re-initializes the classifier and trains it with
// class-balanced sampling on plain cross-entropy. The extractor is returned
// bit-identical.
TrainState retrain_classifier_crt(const TrainState& state, const Dataset& ds,
                                  const CrtConfig& cfg);

// Many-shot: n_k > many_above. Few-shot: n_k < few_below. Medium: the rest.
struct ShotBuckets {
  std::size_t many_above = 100;
  std::size_t few_below = 20;
};

struct EvalReport {
  double overall = 0.0;
  Vector per_class;          // NaN for classes absent from the evaluation set
  Counts per_class_support;  // evaluation samples per class
  double many = 0.0;         // NaN when the bucket is empty
  double medium = 0.0;
  double few = 0.0;
};

// Argmax accuracy of the model on ds; buckets are assigned by the training
// class counts.
EvalReport evaluate(const Model& model, const Dataset& ds, const Counts& train_counts,
                    const ShotBuckets& buckets = {});

std::vector<std::size_t> predict(const Model& model, const Matrix& x);

inline const std::vector<double> kDefaultNoiseSigmas = {0.0, 0.1, 0.2, 0.3, 0.4};

struct NoiseRow {
  double sigma = 0.0;
  double accuracy = 0.0;
};

// Accuracy on corrupt_gaussian copies of ds, one row per sigma. Throws
// InvalidInput on a negative sigma.
std::vector<NoiseRow> noise_robustness(const Model& model, const Dataset& ds,
                                       const std::vector<double>& sigmas, std::uint64_t seed);

// Worker cap: NC_FORGE_THREADS if set to a positive integer, otherwise the
// hardware concurrency (at least one).
std::size_t worker_threads();

// Runs task(i) for i in [0, n) on at most worker_threads() threads. Tasks
// must be independent; results are written by index, so the outcome does
// not depend on scheduling. The first exception (lowest index) is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& task);

// Mixes a base seed with a tag into a new seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);

}  // namespace ncf
