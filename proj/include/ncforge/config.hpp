#pragma once

// Experiment configuration: a plain `key = value` text file, '#' starts a
// comment. Unknown keys and malformed values raise ConfigError.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ncforge/dataset.hpp"
#include "ncforge/train.hpp"

namespace ncf {

struct DataSpec {
  enum class Source { kSynthetic, kIdx };
  Source source = Source::kSynthetic;
  // synthetic Gaussian mixture
  std::size_t num_classes = 10;
  std::size_t dim = 32;
  std::size_t per_class = 1000;  // before tailing
  std::size_t test_per_class = 300;
  double separation = 3.5;
  double spread = 1.0;
  // applied to the training split (both sources); 1 keeps it balanced
  double imbalance_ratio = 100.0;
  std::optional<std::uint64_t> data_seed;  // none: the run seed
  // idx files
  std::string train_images, train_labels, test_images, test_labels;
};

struct ExperimentConfig {
  std::string preset;  // empty when none
  TrainConfig train;
  DataSpec data;
  ShotBuckets buckets;
  std::vector<double> noise_sigmas = kDefaultNoiseSigmas;
  std::vector<std::string> defaulted;  // keys filled in from defaults
};

// Regularizer presets: "cifar10lt-style", "cifar100lt-style",
// "imagenetlt-style". Start epochs of the 200-epoch protocol are rescaled
// to the same fraction of `epochs`. Throws ConfigError for other names.
RegConfig preset_reg(const std::string& name, std::size_t epochs);
std::vector<std::string> preset_names();

// `origin` names the source in error messages.
ExperimentConfig parse_config_text(const std::string& text, const std::string& origin = "config");
ExperimentConfig parse_config(const std::filesystem::path& path);

// Canonical form: every key, fixed order, shortest round-trip numbers.
// Parsing it yields the same configuration.
std::string to_config_text(const ExperimentConfig& cfg);

// FNV-1a over the canonical text with the run seed left out, so that a
// seed sweep shares one hash.
std::string config_hash(const ExperimentConfig& cfg);

struct Splits {
  Dataset train;
  Dataset test;
};

// Builds (or loads) the train and test sets described by spec for a run
// seed.
Splits build_datasets(const DataSpec& spec, std::uint64_t run_seed);

}  // namespace ncf
