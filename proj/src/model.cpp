#include "ncforge/model.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "ncforge/dataset.hpp"
#include "ncforge/error.hpp"
#include "ncforge/hash.hpp"

namespace ncf {

std::string Fnv1a::hex() const {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(state_));
  return buf;
}

namespace {

Matrix he_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix w(fan_in, fan_out);
  for (double& v : w.data()) v = dist(rng);
  return w;
}

void add_bias(Matrix& m, const Vector& bias) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias[c];
  }
}

}  // namespace

Model init_params(const std::vector<std::size_t>& widths, std::size_t num_classes,
                  std::uint64_t seed) {
  if (widths.size() < 2) throw InvalidInput("init_params: need at least two widths");
  for (std::size_t w : widths) {
    if (w == 0) throw InvalidInput("init_params: zero layer width");
  }
  auto rng = make_rng(seed, 10);
  Model m;
  m.extractor.widths = widths;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    m.extractor.layers.push_back(
        DenseLayer{he_uniform(widths[l], widths[l + 1], rng), Vector(widths[l + 1], 0.0)});
  }
  m.classifier = init_classifier(widths.back(), num_classes, seed);
  return m;
}

LinearClassifier init_classifier(std::size_t feature_dim, std::size_t num_classes,
                                 std::uint64_t seed) {
  auto rng = make_rng(seed, 11);
  return LinearClassifier{he_uniform(feature_dim, num_classes, rng), Vector(num_classes, 0.0)};
}

Matrix forward_features(const MlpExtractor& m, const Matrix& x) {
  if (x.cols() != m.input_dim()) {
    throw ShapeError("forward_features: input has " + std::to_string(x.cols()) +
                     " columns, extractor expects " + std::to_string(m.input_dim()));
  }
  Matrix h = x;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    h = matmul(h, m.layers[l].weight);
    add_bias(h, m.layers[l].bias);
    if (l + 1 < m.layers.size()) {
      for (double& v : h.data()) v = v > 0.0 ? v : 0.0;
    }
  }
  return h;
}

Matrix forward_logits(const LinearClassifier& c, const Matrix& h) {
  if (h.cols() != c.weight.rows()) {
    throw ShapeError("forward_logits: features have " + std::to_string(h.cols()) +
                     " columns, classifier expects " + std::to_string(c.weight.rows()));
  }
  Matrix z = matmul(h, c.weight);
  add_bias(z, c.bias);
  return z;
}

ExtractorVars bind_extractor(Graph& g, const MlpExtractor& m, bool trainable) {
  ExtractorVars vars;
  for (const DenseLayer& layer : m.layers) {
    Matrix b = Matrix::row_vector(layer.bias);
    vars.weights.push_back(trainable ? g.leaf(layer.weight) : g.constant(layer.weight));
    vars.biases.push_back(trainable ? g.leaf(std::move(b)) : g.constant(std::move(b)));
  }
  return vars;
}

ClassifierVars bind_classifier(Graph& g, const LinearClassifier& c, bool trainable) {
  Matrix b = Matrix::row_vector(c.bias);
  if (trainable) return ClassifierVars{g.leaf(c.weight), g.leaf(std::move(b))};
  return ClassifierVars{g.constant(c.weight), g.constant(std::move(b))};
}

Var forward_features(Graph& g, const ExtractorVars& m, Var x) {
  if (m.weights.empty()) throw ShapeError("forward_features: extractor has no layers");
  if (g.value(x).cols() != g.value(m.weights.front()).rows()) {
    throw ShapeError("forward_features: input width mismatch");
  }
  Var h = x;
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    h = g.add_row(g.matmul(h, m.weights[l]), m.biases[l]);
    if (l + 1 < m.weights.size()) h = g.relu(h);
  }
  return h;
}

Var forward_logits(Graph& g, const ClassifierVars& c, Var h) {
  if (g.value(h).cols() != g.value(c.weight).rows()) {
    throw ShapeError("forward_logits: feature width mismatch");
  }
  return g.add_row(g.matmul(h, c.weight), c.bias);
}

std::string extractor_hash(const MlpExtractor& m) {
  Fnv1a h;
  for (std::size_t w : m.widths) h.update(std::to_string(w) + ",");
  for (const DenseLayer& layer : m.layers) {
    h.update(std::span<const double>(layer.weight.data()));
    h.update(std::span<const double>(layer.bias));
  }
  return h.hex();
}

// ---------------------------------------------------------------------------
// Checkpoint I/O

namespace {

constexpr const char* kCheckpointMagic = "ncforge-checkpoint";
constexpr int kCheckpointVersion = 1;

void write_values(std::ostream& out, std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out << ' ';
    out << std::hexfloat << values[i];
  }
  out << std::defaultfloat << '\n';
}

class Reader {
 public:
  explicit Reader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  std::istringstream line() {
    std::string s;
    if (!std::getline(in_, s)) fail("unexpected end of file");
    ++line_no_;
    return std::istringstream(s);
  }

  std::string raw_line() {
    std::string s;
    if (!std::getline(in_, s)) fail("unexpected end of file");
    ++line_no_;
    return s;
  }

  void expect(std::istringstream& ls, const std::string& word) {
    std::string got;
    ls >> got;
    if (got != word) fail("expected '" + word + "', got '" + got + "'");
  }

  template <typename T>
  T number(std::istringstream& ls) {
    T v{};
    if (!(ls >> v)) fail("expected a number");
    return v;
  }

  Vector values(std::size_t count) {
    std::string s = raw_line();
    Vector out;
    out.reserve(count);
    const char* p = s.c_str();
    for (std::size_t i = 0; i < count; ++i) {
      char* end = nullptr;
      const double v = std::strtod(p, &end);
      if (end == p) fail("expected " + std::to_string(count) + " values");
      out.push_back(v);
      p = end;
    }
    return out;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(source_ + ":" + std::to_string(line_no_) + ": " + what);
  }

 private:
  std::istream& in_;
  std::string source_;
  std::size_t line_no_ = 0;
};

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Model& model,
                      const CheckpointMeta& meta) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InvalidInput("write_checkpoint: cannot open " + path.string());
  out.imbue(std::locale::classic());
  out << kCheckpointMagic << " v" << kCheckpointVersion << '\n';
  out << "config_hash " << meta.config_hash << '\n';
  out << "seed " << meta.seed << '\n';
  out << "widths " << model.extractor.widths.size();
  for (std::size_t w : model.extractor.widths) out << ' ' << w;
  out << '\n';
  out << "classes " << model.classifier.num_classes() << '\n';
  for (std::size_t l = 0; l < model.extractor.layers.size(); ++l) {
    const DenseLayer& layer = model.extractor.layers[l];
    out << "layer " << l << '\n';
    write_values(out, layer.weight.data());
    write_values(out, layer.bias);
  }
  out << "classifier\n";
  write_values(out, model.classifier.weight.data());
  write_values(out, model.classifier.bias);
  std::size_t config_lines = 0;
  for (char c : meta.config_text) config_lines += c == '\n';
  if (!meta.config_text.empty() && meta.config_text.back() != '\n') ++config_lines;
  out << "config " << config_lines << '\n' << meta.config_text;
  if (!meta.config_text.empty() && meta.config_text.back() != '\n') out << '\n';
  if (!out) throw InvalidInput("write_checkpoint: write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  in.imbue(std::locale::classic());
  Reader r(in, path.string());
  Checkpoint ck;

  auto ls = r.line();
  r.expect(ls, kCheckpointMagic);
  r.expect(ls, "v" + std::to_string(kCheckpointVersion));
  ls = r.line();
  r.expect(ls, "config_hash");
  ls >> ck.meta.config_hash;
  ls = r.line();
  r.expect(ls, "seed");
  ck.meta.seed = r.number<std::uint64_t>(ls);
  ls = r.line();
  r.expect(ls, "widths");
  const auto n_widths = r.number<std::size_t>(ls);
  if (n_widths < 2) r.fail("need at least two widths");
  for (std::size_t i = 0; i < n_widths; ++i) ck.model.extractor.widths.push_back(r.number<std::size_t>(ls));
  ls = r.line();
  r.expect(ls, "classes");
  const auto classes = r.number<std::size_t>(ls);

  const auto& widths = ck.model.extractor.widths;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    ls = r.line();
    r.expect(ls, "layer");
    if (r.number<std::size_t>(ls) != l) r.fail("layer index out of order");
    DenseLayer layer;
    layer.weight = Matrix(widths[l], widths[l + 1], r.values(widths[l] * widths[l + 1]));
    layer.bias = r.values(widths[l + 1]);
    ck.model.extractor.layers.push_back(std::move(layer));
  }
  ls = r.line();
  r.expect(ls, "classifier");
  ck.model.classifier.weight = Matrix(widths.back(), classes, r.values(widths.back() * classes));
  ck.model.classifier.bias = r.values(classes);

  ls = r.line();
  r.expect(ls, "config");
  const auto config_lines = r.number<std::size_t>(ls);
  for (std::size_t i = 0; i < config_lines; ++i) ck.meta.config_text += r.raw_line() + "\n";
  return ck;
}

}  // namespace ncf
