#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ncforge/autodiff.hpp"
#include "ncforge/matrix.hpp"

namespace ncf {

struct DenseLayer {
  Matrix weight;  // fan_in x fan_out
  Vector bias;    // fan_out
};

// Feature extractor: affine layers with a rectifier between them. The last
// layer is affine only, so a single-layer extractor is x * W + b.
struct MlpExtractor {
  std::vector<std::size_t> widths;  // [D, ..., P]
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const { return widths.front(); }
  std::size_t feature_dim() const { return widths.back(); }
};

// logits = H * weight + 1 * bias^T
struct LinearClassifier {
  Matrix weight;  // P x K
  Vector bias;    // K

  std::size_t num_classes() const { return weight.cols(); }
};

struct Model {
  MlpExtractor extractor;
  LinearClassifier classifier;
};

// He-uniform weights U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero biases.
// widths = [D, hidden..., P] (at least two entries).
Model init_params(const std::vector<std::size_t>& widths, std::size_t num_classes,
                  std::uint64_t seed);
LinearClassifier init_classifier(std::size_t feature_dim, std::size_t num_classes,
                                 std::uint64_t seed);

Matrix forward_features(const MlpExtractor& m, const Matrix& x);
Matrix forward_logits(const LinearClassifier& c, const Matrix& h);

// Graph bindings: parameters become leaves of the graph.
struct ExtractorVars {
  std::vector<Var> weights;
  std::vector<Var> biases;
};
struct ClassifierVars {
  Var weight;
  Var bias;  // 1 x K
};

ExtractorVars bind_extractor(Graph& g, const MlpExtractor& m, bool trainable = true);
ClassifierVars bind_classifier(Graph& g, const LinearClassifier& c, bool trainable = true);
Var forward_features(Graph& g, const ExtractorVars& m, Var x);
Var forward_logits(Graph& g, const ClassifierVars& c, Var h);

// Content hash over widths and every extractor parameter bit.
std::string extractor_hash(const MlpExtractor& m);

struct CheckpointMeta {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string config_text;  // the experiment config that produced the model
};

struct Checkpoint {
  Model model;
  CheckpointMeta meta;
};

// Text checkpoint, versioned, with every double in hexfloat so that a
// write-then-read round trip is bit-exact. Throws FormatError on read.
void write_checkpoint(const std::filesystem::path& path, const Model& model,
                      const CheckpointMeta& meta);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace ncf
