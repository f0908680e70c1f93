#include "ncforge/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <numbers>
#include <thread>

#include <fmt/format.h>

#include "ncforge/error.hpp"

namespace ncf {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

// Seed tags, one per consumer.
constexpr std::uint64_t kEpochStreamTag = 0x1000;
constexpr std::uint64_t kCrtInitTag = 0x2000;
constexpr std::uint64_t kCrtStreamTag = 0x3000;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::vector<std::vector<double>> zero_buffers(const Model& model) {
  std::vector<std::vector<double>> out;
  for (auto v : parameter_views(model)) out.emplace_back(v.size(), 0.0);
  return out;
}

bool finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

std::size_t argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < row.size(); ++c) {
    if (row[c] > row[best]) best = c;
  }
  return best;
}

double accuracy(const Matrix& logits, const Labels& labels) {
  if (labels.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    hit += argmax(logits.row(i)) == static_cast<std::size_t>(labels[i]);
  }
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

Matrix gather(const Matrix& m, const std::vector<std::size_t>& index) {
  Matrix out(index.size(), m.cols());
  for (std::size_t j = 0; j < index.size(); ++j) {
    auto src = m.row(index[j]);
    std::copy(src.begin(), src.end(), out.row(j).begin());
  }
  return out;
}

void run_epoch(TrainState& st, const TrainConfig& cfg, const Dataset& ds) {
  const std::size_t epoch = st.epoch;
  const double lr = lr_at(cfg.schedule, epoch, cfg.epochs);
  const ClassWeights weights = cfg.drw_epoch
                                   ? drw_weights(ds.class_counts, cfg.drw_beta, epoch, *cfg.drw_epoch)
                                   : ClassWeights::uniform(ds.num_classes());
  const SamplerMode mode{SamplerMode::Kind::kInstanceBalanced,
                         derive_seed(cfg.seed, kEpochStreamTag + epoch)};
  const Batches batches = make_index_stream(ds, mode, cfg.batch_size);
  const SgdParams sgd{lr, cfg.momentum, cfg.weight_decay};

  double total = 0.0, sup = 0.0, lw = 0.0, lb = 0.0;
  for (std::size_t b = 0; b < batches.size(); ++b) {
    const Subset batch = select_rows(ds, batches[b]);
    Graph g;
    const ExtractorVars ev = bind_extractor(g, st.model.extractor);
    const ClassifierVars cv = bind_classifier(g, st.model.classifier);
    const Var h = forward_features(g, ev, g.constant(batch.features));
    const Var z = forward_logits(g, cv, h);
    const ObjectiveTerms terms =
        training_objective(g, h, z, batch.labels, weights, cfg.loss, cfg.reg, epoch);
    g.backward(terms.total);

    total += g.value(terms.total).item();
    sup += g.value(terms.sup).item();
    if (terms.lw) lw += g.value(*terms.lw).item();
    if (terms.lb) lb += g.value(*terms.lb).item();

    std::vector<Var> order;
    for (std::size_t l = 0; l < ev.weights.size(); ++l) {
      order.push_back(ev.weights[l]);
      order.push_back(ev.biases[l]);
    }
    order.push_back(cv.weight);
    order.push_back(cv.bias);

    auto params = parameter_views(st.model);
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (!finite(g.grad(order[i]).data())) {
        throw NumericalError(fmt::format("train: non-finite gradient at epoch {} batch {} (parameter {})",
                                         epoch, b, i));
      }
    }
    for (std::size_t i = 0; i < order.size(); ++i) {
      sgd_step(params[i], g.grad(order[i]).data(), st.momentum[i], sgd);
    }
  }

  const double nb = static_cast<double>(batches.size());
  EpochMetrics m;
  m.epoch = epoch;
  m.lr = lr;
  m.loss_total = total / nb;
  m.loss_sup = sup / nb;
  m.loss_lw = lw / nb;
  m.loss_lb = lb / nb;

  const Matrix h = forward_features(st.model.extractor, ds.features);
  m.train_acc = accuracy(forward_logits(st.model.classifier, h), ds.labels);
  st.last_report = nc_report(h, ds.labels, ds.num_classes(), st.model.classifier);
  m.nc1 = st.last_report.nc1;
  m.nc2_cos_dev = st.last_report.nc2_cos_dev;
  m.nc2_norm_cv = st.last_report.nc2_norm_cv;
  m.nc3_align = st.last_report.nc3_align;
  m.nc4_agree = st.last_report.nc4_agree;
  st.log.push_back(m);
  ++st.epoch;
}

}  // namespace

double lr_at(const LrSchedule& schedule, std::size_t epoch, std::size_t total_epochs) {
  if (schedule.kind == LrSchedule::Kind::kCosine) {
    const double t = total_epochs ? static_cast<double>(epoch) / static_cast<double>(total_epochs) : 0.0;
    return schedule.base * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
  }
  const auto passed = std::count_if(schedule.milestones.begin(), schedule.milestones.end(),
                                    [epoch](std::size_t m) { return m <= epoch; });
  return schedule.base * std::pow(schedule.gamma, static_cast<double>(passed));
}

std::vector<std::size_t> default_milestones(std::size_t epochs) {
  // Short runs collapse the two points; keep them strictly increasing and < epochs.
  std::vector<std::size_t> out;
  for (std::size_t m : {epochs * 7 / 10, epochs * 9 / 10})
    if (m < epochs && (out.empty() || m > out.back())) out.push_back(m);
  return out;
}

std::size_t default_drw_epoch(std::size_t epochs) { return epochs * 8 / 10; }

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(schedule.base > 0.0)) throw ConfigError("base learning rate must be positive");
  if (widths.empty() || std::find(widths.begin(), widths.end(), 0) != widths.end()) {
    throw ConfigError("widths must be a non-empty list of positive sizes");
  }
  if (!(drw_beta >= 0.0 && drw_beta < 1.0)) throw ConfigError("drw_beta must lie in [0, 1)");
  if (schedule.kind == LrSchedule::Kind::kMultiStep) {
    for (std::size_t i = 0; i < schedule.milestones.size(); ++i) {
      if (i > 0 && schedule.milestones[i] <= schedule.milestones[i - 1]) {
        throw ConfigError("milestones must be strictly increasing");
      }
      if (schedule.milestones[i] >= epochs) throw ConfigError("milestones must be < epochs");
    }
  }
}

std::string metrics_csv_row(const EpochMetrics& m) {
  return fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}", m.epoch, m.lr, m.loss_total, m.loss_sup,
                     m.loss_lw, m.loss_lb, m.train_acc, m.nc1, m.nc2_cos_dev, m.nc2_norm_cv,
                     m.nc3_align, m.nc4_agree);
}

std::vector<std::span<double>> parameter_views(Model& model) {
  std::vector<std::span<double>> out;
  for (auto& layer : model.extractor.layers) {
    out.emplace_back(layer.weight.data());
    out.emplace_back(layer.bias);
  }
  out.emplace_back(model.classifier.weight.data());
  out.emplace_back(model.classifier.bias);
  return out;
}

std::vector<std::span<const double>> parameter_views(const Model& model) {
  std::vector<std::span<const double>> out;
  for (const auto& layer : model.extractor.layers) {
    out.emplace_back(layer.weight.data());
    out.emplace_back(layer.bias);
  }
  out.emplace_back(model.classifier.weight.data());
  out.emplace_back(model.classifier.bias);
  return out;
}

void sgd_step(std::span<double> param, std::span<const double> grad, std::span<double> buffer,
              const SgdParams& p) {
  if (param.size() != grad.size() || param.size() != buffer.size()) {
    throw ShapeError(fmt::format("sgd_step: param {} / grad {} / buffer {} lengths differ",
                                 param.size(), grad.size(), buffer.size()));
  }
  if (!finite(grad)) throw NumericalError("sgd_step: non-finite gradient");
  for (std::size_t i = 0; i < param.size(); ++i) {
    buffer[i] = p.momentum * buffer[i] + grad[i] + p.weight_decay * param[i];
    param[i] -= p.lr * buffer[i];
  }
}

TrainState init_state(const TrainConfig& cfg, std::size_t input_dim, std::size_t num_classes) {
  std::vector<std::size_t> widths{input_dim};
  widths.insert(widths.end(), cfg.widths.begin(), cfg.widths.end());
  TrainState st;
  st.model = init_params(widths, num_classes, cfg.seed);
  st.momentum = zero_buffers(st.model);
  return st;
}

TrainState train(const TrainConfig& cfg, const Dataset& ds) {
  cfg.validate();
  if (ds.size() == 0) throw InvalidInput("train: empty dataset");
  TrainState st = init_state(cfg, ds.dim(), ds.num_classes());
  while (st.epoch < cfg.epochs) run_epoch(st, cfg, ds);
  return st;
}

TrainState retrain_classifier_crt(const TrainState& state, const Dataset& ds,
                                  const CrtConfig& cfg) {
  TrainState out = state;
  const Matrix features = forward_features(state.model.extractor, ds.features);
  out.model.classifier =
      init_classifier(features.cols(), ds.num_classes(), derive_seed(cfg.seed, kCrtInitTag));
  LinearClassifier& clf = out.model.classifier;
  std::vector<double> vw(clf.weight.size(), 0.0);
  std::vector<double> vb(clf.bias.size(), 0.0);
  const ClassWeights uniform = ClassWeights::uniform(ds.num_classes());

  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const SgdParams sgd{lr_at(LrSchedule::cosine(cfg.lr), e, cfg.epochs), cfg.momentum,
                        cfg.weight_decay};
    const SamplerMode mode{SamplerMode::Kind::kClassBalanced,
                           derive_seed(cfg.seed, kCrtStreamTag + e)};
    for (const auto& batch : make_index_stream(ds, mode, cfg.batch_size)) {
      Labels labels(batch.size());
      for (std::size_t j = 0; j < batch.size(); ++j) labels[j] = ds.labels[batch[j]];
      Graph g;
      const ClassifierVars cv = bind_classifier(g, clf);
      const Var z = forward_logits(g, cv, g.constant(gather(features, batch)));
      g.backward(cross_entropy(g, z, labels, uniform));
      sgd_step(clf.weight.data(), g.grad(cv.weight).data(), vw, sgd);
      sgd_step(clf.bias, g.grad(cv.bias).data(), vb, sgd);
    }
  }

  // Classifier buffers restart; extractor buffers are carried over untouched.
  out.momentum = zero_buffers(out.model);
  for (std::size_t i = 0; i + 2 < out.momentum.size(); ++i) out.momentum[i] = state.momentum[i];
  out.last_report = nc_report(features, ds.labels, ds.num_classes(), clf);
  return out;
}

std::vector<std::size_t> predict(const Model& model, const Matrix& x) {
  const Matrix logits = forward_logits(model.classifier, forward_features(model.extractor, x));
  std::vector<std::size_t> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) out[i] = argmax(logits.row(i));
  return out;
}

EvalReport evaluate(const Model& model, const Dataset& ds, const Counts& train_counts,
                    const ShotBuckets& buckets) {
  const std::size_t k = model.classifier.num_classes();
  if (train_counts.size() != k) {
    throw ShapeError(fmt::format("evaluate: {} training counts for {} classes", train_counts.size(), k));
  }
  const auto pred = predict(model, ds.features);
  Counts hit(k, 0), support(k, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto y = static_cast<std::size_t>(ds.labels[i]);
    if (y >= k) throw InvalidInput("evaluate: label outside the classifier's range");
    ++support[y];
    hit[y] += pred[i] == y;
  }

  EvalReport r;
  r.per_class_support = support;
  r.per_class.assign(k, kNan);
  std::size_t hits = 0;
  std::size_t g_hit[3] = {0, 0, 0};
  std::size_t g_total[3] = {0, 0, 0};
  for (std::size_t c = 0; c < k; ++c) {
    hits += hit[c];
    if (support[c]) r.per_class[c] = static_cast<double>(hit[c]) / static_cast<double>(support[c]);
    const std::size_t bucket = train_counts[c] > buckets.many_above ? 0
                               : train_counts[c] < buckets.few_below ? 2
                                                                     : 1;
    g_hit[bucket] += hit[c];
    g_total[bucket] += support[c];
  }
  r.overall = pred.empty() ? kNan : static_cast<double>(hits) / static_cast<double>(pred.size());
  auto ratio = [](std::size_t a, std::size_t b) {
    return b ? static_cast<double>(a) / static_cast<double>(b) : kNan;
  };
  r.many = ratio(g_hit[0], g_total[0]);
  r.medium = ratio(g_hit[1], g_total[1]);
  r.few = ratio(g_hit[2], g_total[2]);
  return r;
}

std::vector<NoiseRow> noise_robustness(const Model& model, const Dataset& ds,
                                       const std::vector<double>& sigmas, std::uint64_t seed) {
  for (double s : sigmas) {
    if (!(s >= 0.0)) throw InvalidInput("noise_robustness: sigma must be >= 0");
  }
  std::vector<NoiseRow> rows(sigmas.size());
  parallel_for(sigmas.size(), [&](std::size_t i) {
    const Dataset noisy = corrupt_gaussian(ds, sigmas[i], derive_seed(seed, i));
    const Matrix logits =
        forward_logits(model.classifier, forward_features(model.extractor, noisy.features));
    rows[i] = NoiseRow{sigmas[i], accuracy(logits, noisy.labels)};
  });
  return rows;
}

std::size_t worker_threads() {
  if (const char* env = std::getenv("NC_FORGE_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& task) {
  const std::size_t workers = std::min(n, worker_threads());
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          task(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  return splitmix64(seed ^ splitmix64(tag));
}

}  // namespace ncf
