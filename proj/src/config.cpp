#include "ncforge/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "ncforge/error.hpp"
#include "ncforge/hash.hpp"
#include "ncforge/idx.hpp"

namespace ncf {

namespace {

struct Entry {
  std::string value;
  int line = 0;
};

// Every accepted key, in canonical order.
const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys = {
      "preset",        "epochs",          "batch_size",     "lr",           "schedule",
      "milestones",    "gamma",           "momentum",       "weight_decay", "lambda1",
      "lambda2",       "start_epoch",     "drw_epoch",      "drw_beta",     "crt_epochs",
      "crt_lr",        "loss",            "widths",         "seed",         "data",
      "classes",       "dim",             "per_class",      "test_per_class", "separation",
      "spread",        "imbalance_ratio", "data_seed",      "train_images", "train_labels",
      "test_images",   "test_labels",     "many_above",     "few_below",    "noise_sigmas"};
  return keys;
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

class Reader {
 public:
  Reader(std::map<std::string, Entry> entries, std::string origin)
      : entries_(std::move(entries)), origin_(std::move(origin)) {}

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  // Raw value, recording a default notice when the key is absent.
  std::optional<Entry> get(const std::string& key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) {
      defaulted_.push_back(key);
      return std::nullopt;
    }
    return it->second;
  }

  template <typename T>
  void number(const std::string& key, T& out) {
    if (auto e = get(key)) out = parse_number<T>(key, e->value, e->line);
  }

  void text(const std::string& key, std::string& out) {
    if (auto e = get(key)) out = e->value;
  }

  template <typename T>
  std::vector<T> list(const std::string& key, const Entry& e) {
    std::vector<T> out;
    if (e.value == "none") return out;
    std::stringstream ss(e.value);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(key, trim(item), e.line));
    return out;
  }

  template <typename T>
  T parse_number(const std::string& key, const std::string& value, int line) const {
    T out{};
    const char* end = value.data() + value.size();
    const auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (value.empty() || ec != std::errc() || ptr != end) {
      constexpr const char* kind =
          std::is_integral_v<T> ? "a non-negative integer" : "a real number";
      fail(line, fmt::format("key '{}' expects {}, got '{}'", key, kind, value));
    }
    return out;
  }

  [[noreturn]] void fail(int line, const std::string& what) const {
    throw ConfigError(fmt::format("{}:{}: {}", origin_, line, what));
  }

  std::vector<std::string> defaulted() const { return defaulted_; }

 private:
  std::map<std::string, Entry> entries_;
  std::string origin_;
  std::vector<std::string> defaulted_;
};

std::string join(const std::vector<std::size_t>& v) {
  if (v.empty()) return "none";
  return fmt::format("{}", fmt::join(v, ","));
}

std::string join(const std::vector<double>& v) {
  if (v.empty()) return "none";
  return fmt::format("{}", fmt::join(v, ","));
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"cifar10lt-style", "cifar100lt-style", "imagenetlt-style"};
}

RegConfig preset_reg(const std::string& name, std::size_t epochs) {
  // Start epochs 0 and 100 of a 200-epoch run become 0% and 50% of `epochs`.
  if (name == "cifar10lt-style") return RegConfig{0.01, 0.1, 0};
  if (name == "cifar100lt-style") return RegConfig{0.01, 0.5, epochs / 2};
  if (name == "imagenetlt-style") return RegConfig{0.05, 1.0, epochs / 2};
  throw ConfigError("unknown preset: " + name);
}

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
  std::map<std::string, Entry> entries;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  const auto& keys = known_keys();
  while (std::getline(in, raw)) {
    ++line;
    const std::string body = trim(std::string_view(raw).substr(0, raw.find('#')));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(fmt::format("{}:{}: expected 'key = value', got '{}'", origin, line, body));
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw ConfigError("unknown key: " + key);
    }
    if (entries.count(key)) {
      throw ConfigError(fmt::format("{}:{}: duplicate key '{}'", origin, line, key));
    }
    entries[key] = Entry{value, line};
  }

  Reader r(std::move(entries), origin);
  ExperimentConfig cfg;
  TrainConfig& t = cfg.train;

  r.number("epochs", t.epochs);
  if (auto e = r.get("preset"); e && e->value != "none") {
    cfg.preset = e->value;
    try {
      t.reg = preset_reg(cfg.preset, t.epochs);
    } catch (const ConfigError& err) {
      r.fail(e->line, err.what());
    }
  }
  r.number("batch_size", t.batch_size);
  r.number("lr", t.schedule.base);
  if (auto e = r.get("schedule")) {
    if (e->value == "multistep") {
      t.schedule.kind = LrSchedule::Kind::kMultiStep;
    } else if (e->value == "cosine") {
      t.schedule.kind = LrSchedule::Kind::kCosine;
    } else {
      r.fail(e->line, "key 'schedule' expects multistep or cosine, got '" + e->value + "'");
    }
  }
  t.schedule.milestones = default_milestones(t.epochs);
  if (auto e = r.get("milestones"); e && e->value != "auto") {
    t.schedule.milestones = r.list<std::size_t>("milestones", *e);
  }
  r.number("gamma", t.schedule.gamma);
  r.number("momentum", t.momentum);
  r.number("weight_decay", t.weight_decay);
  r.number("lambda1", t.reg.lambda1);
  r.number("lambda2", t.reg.lambda2);
  r.number("start_epoch", t.reg.start_epoch);
  if (auto e = r.get("drw_epoch")) {
    if (e->value == "auto") {
      t.drw_epoch = default_drw_epoch(t.epochs);
    } else if (e->value != "none") {
      t.drw_epoch = r.parse_number<std::size_t>("drw_epoch", e->value, e->line);
    }
  }
  r.number("drw_beta", t.drw_beta);
  if (auto e = r.get("crt_epochs"); e && e->value != "none") {
    t.crt_epochs = r.parse_number<std::size_t>("crt_epochs", e->value, e->line);
  }
  r.number("crt_lr", t.crt_lr);
  if (auto e = r.get("loss")) {
    if (e->value == "ce") {
      t.loss = LossKind::kCrossEntropy;
    } else if (e->value == "mse") {
      t.loss = LossKind::kMse;
    } else {
      r.fail(e->line, "key 'loss' expects ce or mse, got '" + e->value + "'");
    }
  }
  if (auto e = r.get("widths")) t.widths = r.list<std::size_t>("widths", *e);
  r.number("seed", t.seed);

  DataSpec& d = cfg.data;
  if (auto e = r.get("data")) {
    if (e->value == "synthetic") {
      d.source = DataSpec::Source::kSynthetic;
    } else if (e->value == "idx") {
      d.source = DataSpec::Source::kIdx;
    } else {
      r.fail(e->line, "key 'data' expects synthetic or idx, got '" + e->value + "'");
    }
  }
  r.number("classes", d.num_classes);
  r.number("dim", d.dim);
  r.number("per_class", d.per_class);
  r.number("test_per_class", d.test_per_class);
  r.number("separation", d.separation);
  r.number("spread", d.spread);
  r.number("imbalance_ratio", d.imbalance_ratio);
  if (auto e = r.get("data_seed"); e && e->value != "run") {
    d.data_seed = r.parse_number<std::uint64_t>("data_seed", e->value, e->line);
  }
  r.text("train_images", d.train_images);
  r.text("train_labels", d.train_labels);
  r.text("test_images", d.test_images);
  r.text("test_labels", d.test_labels);
  r.number("many_above", cfg.buckets.many_above);
  r.number("few_below", cfg.buckets.few_below);
  if (auto e = r.get("noise_sigmas")) cfg.noise_sigmas = r.list<double>("noise_sigmas", *e);

  cfg.defaulted = r.defaulted();
  try {
    t.validate();
  } catch (const ConfigError& err) {
    throw ConfigError(origin + ": " + err.what());
  }
  if (d.source == DataSpec::Source::kIdx &&
      (d.train_images.empty() || d.train_labels.empty() || d.test_images.empty() ||
       d.test_labels.empty())) {
    throw ConfigError(origin + ": data = idx needs train_images, train_labels, test_images and test_labels");
  }
  for (double s : cfg.noise_sigmas) {
    if (!(s >= 0.0)) throw ConfigError(origin + ": noise_sigmas must be >= 0");
  }
  return cfg;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

std::string to_config_text(const ExperimentConfig& cfg) {
  const TrainConfig& t = cfg.train;
  const DataSpec& d = cfg.data;
  std::string out;
  auto put = [&out](const std::string& key, const auto& value) {
    out += fmt::format("{} = {}\n", key, value);
  };
  put("preset", cfg.preset.empty() ? std::string("none") : cfg.preset);
  put("epochs", t.epochs);
  put("batch_size", t.batch_size);
  put("lr", t.schedule.base);
  put("schedule", t.schedule.kind == LrSchedule::Kind::kCosine ? "cosine" : "multistep");
  put("milestones", join(t.schedule.milestones));
  put("gamma", t.schedule.gamma);
  put("momentum", t.momentum);
  put("weight_decay", t.weight_decay);
  put("lambda1", t.reg.lambda1);
  put("lambda2", t.reg.lambda2);
  put("start_epoch", t.reg.start_epoch);
  put("drw_epoch", t.drw_epoch ? std::to_string(*t.drw_epoch) : std::string("none"));
  put("drw_beta", t.drw_beta);
  put("crt_epochs", t.crt_epochs ? std::to_string(*t.crt_epochs) : std::string("none"));
  put("crt_lr", t.crt_lr);
  put("loss", t.loss == LossKind::kMse ? "mse" : "ce");
  put("widths", join(t.widths));
  put("seed", t.seed);
  put("data", d.source == DataSpec::Source::kIdx ? "idx" : "synthetic");
  put("classes", d.num_classes);
  put("dim", d.dim);
  put("per_class", d.per_class);
  put("test_per_class", d.test_per_class);
  put("separation", d.separation);
  put("spread", d.spread);
  put("imbalance_ratio", d.imbalance_ratio);
  put("data_seed", d.data_seed ? std::to_string(*d.data_seed) : std::string("run"));
  put("train_images", d.train_images);
  put("train_labels", d.train_labels);
  put("test_images", d.test_images);
  put("test_labels", d.test_labels);
  put("many_above", cfg.buckets.many_above);
  put("few_below", cfg.buckets.few_below);
  put("noise_sigmas", join(cfg.noise_sigmas));
  return out;
}

std::string config_hash(const ExperimentConfig& cfg) {
  ExperimentConfig unseeded = cfg;
  unseeded.train.seed = 0;
  Fnv1a h;
  h.update(to_config_text(unseeded));
  return h.hex();
}

Splits build_datasets(const DataSpec& spec, std::uint64_t run_seed) {
  const std::uint64_t seed = spec.data_seed.value_or(run_seed);
  Dataset train;
  Dataset test;
  if (spec.source == DataSpec::Source::kSynthetic) {
    const GaussianMixture mix =
        draw_mixture(spec.num_classes, spec.dim, spec.separation, spec.spread, seed);
    train = sample_mixture(mix, spec.per_class, derive_seed(seed, 1), "synthetic");
    test = sample_mixture(mix, spec.test_per_class, derive_seed(seed, 2), "synthetic-test");
  } else {
    train = load_idx(spec.train_images, spec.train_labels);
    test = load_idx(spec.test_images, spec.test_labels);
  }
  // An idx split that is already imbalanced is used as is.
  const bool balanced = std::all_of(train.class_counts.begin(), train.class_counts.end(),
                                    [&](std::size_t c) { return c == train.class_counts.front(); });
  if (spec.imbalance_ratio != 1.0 && balanced) {
    train = apply_long_tail(train, {spec.imbalance_ratio, {}}, seed);
  }
  return {std::move(train), std::move(test)};
}

}  // namespace ncf
