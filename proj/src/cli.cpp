#include "ncforge/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "ncforge/analytic.hpp"
#include "ncforge/collapse.hpp"
#include "ncforge/config.hpp"
#include "ncforge/error.hpp"
#include "ncforge/idx.hpp"
#include "ncforge/train.hpp"

namespace ncf {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr double kLsTolerance = 1e-8;

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InvalidInput("cannot write " + path.string());
  return f;
}

std::string meta_line(const std::string& hash, std::uint64_t seed) {
  return fmt::format("# config_hash={} seed={}\n", hash, seed);
}

json nc_json(const NcReport& r) {
  return json{{"nc1", r.nc1},
              {"nc1_within", r.nc1_within},
              {"nc2_cos_dev", r.nc2_cos_dev},
              {"nc2_norm_cv", r.nc2_norm_cv},
              {"nc3_align", r.nc3_align},
              {"nc4_agree", r.nc4_agree},
              {"etf_ok", r.etf_ok},
              {"etf_alpha", r.etf_alpha}};
}

json eval_json(const EvalReport& e) {
  return json{{"acc", e.overall},
              {"per_group", {{"many", e.many}, {"medium", e.medium}, {"few", e.few}}},
              {"per_class", e.per_class}};
}

// Configuration, hash and seed a checkpoint was produced with.
struct Provenance {
  Checkpoint ckpt;
  ExperimentConfig cfg;
  std::string hash;
};

Provenance load_provenance(const fs::path& path) {
  Provenance p{read_checkpoint(path), {}, {}};
  p.cfg = parse_config_text(p.ckpt.meta.config_text, path.string() + " (embedded config)");
  p.hash = p.ckpt.meta.config_hash;
  return p;
}

// ---------------------------------------------------------------- gen-data

DataSpec data_preset(const std::string& name) {
  DataSpec d;
  if (name == "synthetic-lt") return d;
  if (name == "synthetic-balanced") {
    d.imbalance_ratio = 1.0;
    return d;
  }
  throw ConfigError("unknown data preset: " + name + " (synthetic-lt, synthetic-balanced)");
}

int cmd_gen_data(const std::string& preset, const std::string& spec_path, std::uint64_t seed,
                 const fs::path& out_dir, std::ostream& out) {
  DataSpec spec = spec_path.empty() ? data_preset(preset) : parse_config(spec_path).data;
  if (spec.source != DataSpec::Source::kSynthetic) {
    throw ConfigError("gen-data needs a synthetic data spec");
  }
  Splits s = build_datasets(spec, seed);
  // Both splits share the training range so they stay comparable.
  const auto& v = s.train.features.data();
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const Dataset train = quantize_unit(s.train, *lo, *hi);
  const Dataset test = quantize_unit(s.test, *lo, *hi);
  fs::create_directories(out_dir);
  write_idx(train, out_dir / "train-images.idx", out_dir / "train-labels.idx");
  write_idx(test, out_dir / "test-images.idx", out_dir / "test-labels.idx");
  out << fmt::format("wrote {} train / {} test samples (K={}, D={}) to {}\n", train.size(),
                     test.size(), train.num_classes(), train.dim(), out_dir.string());
  return 0;
}

// ------------------------------------------------------------------- train

int cmd_train(const fs::path& config_path, std::optional<std::uint64_t> seed,
              const fs::path& out_dir, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg = parse_config(config_path);
  if (seed) cfg.train.seed = *seed;
  if (!cfg.defaulted.empty()) {
    err << fmt::format("notice: defaults used for {}\n", fmt::join(cfg.defaulted, ", "));
  }
  const std::string hash = config_hash(cfg);
  const std::uint64_t run_seed = cfg.train.seed;
  const Splits s = build_datasets(cfg.data, run_seed);

  TrainState st = train(cfg.train, s.train);
  if (cfg.train.crt_epochs) {
    CrtConfig crt;
    crt.epochs = *cfg.train.crt_epochs;
    crt.lr = cfg.train.crt_lr;
    crt.batch_size = cfg.train.batch_size;
    crt.momentum = cfg.train.momentum;
    crt.weight_decay = cfg.train.weight_decay;
    crt.seed = run_seed;
    st = retrain_classifier_crt(st, s.train, crt);
  }
  const EvalReport ev = evaluate(st.model, s.test, s.train.class_counts, cfg.buckets);
  const Matrix features = forward_features(st.model.extractor, s.train.features);
  const NcReport nc = nc_report(features, s.train.labels, s.train.num_classes(), st.model.classifier);
  const NcReport nc_test = nc_report(forward_features(st.model.extractor, s.test.features),
                                     s.test.labels, s.test.num_classes(), st.model.classifier);

  fs::create_directories(out_dir);
  {
    auto f = open_out(out_dir / "metrics.csv");
    f << meta_line(hash, run_seed) << kMetricsHeader << '\n';
    for (const auto& m : st.log) f << metrics_csv_row(m) << '\n';
  }
  write_checkpoint(out_dir / "model.ckpt", st.model,
                   CheckpointMeta{hash, run_seed, to_config_text(cfg)});
  json summary{{"config_hash", hash}, {"seed", run_seed}, {"final", eval_json(ev)},
               {"nc", nc_json(nc)}, {"nc_test", nc_json(nc_test)}};
  open_out(out_dir / "summary.json") << summary.dump(2) << '\n';
  out << fmt::format("config_hash={} seed={} epochs={} test_acc={:.4f} nc1={:.4g} nc2_cos_dev={:.4g}\n",
                     hash, run_seed, st.log.size(), ev.overall, nc.nc1, nc.nc2_cos_dev);
  return 0;
}

// -------------------------------------------------------------------- eval

int cmd_eval(const fs::path& ckpt_path, bool noise, const std::vector<double>& sigmas,
             std::optional<fs::path> out_dir, std::ostream& out) {
  const Provenance p = load_provenance(ckpt_path);
  const Splits s = build_datasets(p.cfg.data, p.ckpt.meta.seed);
  const EvalReport ev = evaluate(p.ckpt.model, s.test, s.train.class_counts, p.cfg.buckets);
  json doc{{"config_hash", p.hash}, {"seed", p.ckpt.meta.seed}};
  doc.update(eval_json(ev));
  out << fmt::format("acc={:.4f} many={:.4f} medium={:.4f} few={:.4f}\n", ev.overall, ev.many,
                     ev.medium, ev.few);
  if (noise) {
    const auto& list = sigmas.empty() ? p.cfg.noise_sigmas : sigmas;
    json rows = json::array();
    for (const auto& row : noise_robustness(p.ckpt.model, s.test, list, p.ckpt.meta.seed)) {
      rows.push_back({{"sigma", row.sigma}, {"acc", row.accuracy}});
      out << fmt::format("sigma={} acc={:.4f}\n", row.sigma, row.accuracy);
    }
    doc["noise"] = rows;
  }
  const fs::path dir = out_dir.value_or(ckpt_path.parent_path());
  if (!dir.empty()) fs::create_directories(dir);
  open_out(dir / "eval.json") << doc.dump(2) << '\n';
  return 0;
}

// ----------------------------------------------------------------- analyze

// Light (small angle) to dark blue (large angle).
std::string ramp(double deg) {
  const double t = std::clamp(deg / 180.0, 0.0, 1.0);
  auto mix = [t](int a, int b) { return static_cast<int>(std::lround(a + (b - a) * t)); };
  return fmt::format("#{:02x}{:02x}{:02x}", mix(0xf7, 0x08), mix(0xfb, 0x30), mix(0xff, 0x6b));
}

std::string angle_svg(const Matrix& angles, const std::string& hash, std::uint64_t seed) {
  const std::size_t k = angles.rows();
  constexpr int kCell = 52;
  constexpr int kMargin = 40;
  const int side = kMargin + static_cast<int>(k) * kCell + 10;
  std::string s = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n"
      "<!-- config_hash={2} seed={3} -->\n"
      "<text x=\"{4}\" y=\"16\">pairwise angles of centered class means (deg)</text>\n",
      side, side + 20, hash, seed, kMargin);
  for (std::size_t i = 0; i < k; ++i) {
    const int pos = kMargin + static_cast<int>(i) * kCell + kCell / 2;
    s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", pos, kMargin - 6,
                     i);
    s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n", kMargin - 6,
                     pos + 4, i);
  }
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const int x = kMargin + static_cast<int>(j) * kCell;
      const int y = kMargin + static_cast<int>(i) * kCell;
      const double a = angles(i, j);
      const bool diag = i == j;
      const std::string fill = diag || std::isnan(a) ? "#dddddd" : ramp(a);
      s += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\" stroke=\"#ffffff\"/>\n",
                       x, y, kCell, kCell, fill);
      if (!diag) {
        const char* ink = !std::isnan(a) && a > 90.0 ? "#ffffff" : "#000000";
        s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"{}\">{:.1f}</text>\n",
                         x + kCell / 2, y + kCell / 2 + 4, ink, a);
      }
    }
  }
  s += "</svg>\n";
  return s;
}

int cmd_analyze(const fs::path& ckpt_path, const fs::path& out_dir, std::ostream& out) {
  const Provenance p = load_provenance(ckpt_path);
  const std::uint64_t seed = p.ckpt.meta.seed;
  const Splits s = build_datasets(p.cfg.data, seed);
  const Matrix features = forward_features(p.ckpt.model.extractor, s.train.features);
  const NcReport r = nc_report(features, s.train.labels, s.train.num_classes(), p.ckpt.model.classifier);
  const std::size_t k = s.train.num_classes();

  fs::create_directories(out_dir);
  {
    auto f = open_out(out_dir / "angles.csv");
    f << meta_line(p.hash, seed) << "class";
    for (std::size_t j = 0; j < k; ++j) f << ',' << j;
    f << '\n';
    for (std::size_t i = 0; i < k; ++i) {
      f << i;
      for (std::size_t j = 0; j < k; ++j) f << fmt::format(",{}", r.angle_deg(i, j));
      f << '\n';
    }
  }
  open_out(out_dir / "angles.svg") << angle_svg(r.angle_deg, p.hash, seed);
  {
    auto f = open_out(out_dir / "norms.csv");
    f << meta_line(p.hash, seed) << "class,train_count,norm\n";
    for (std::size_t i = 0; i < k; ++i) {
      f << fmt::format("{},{},{}\n", i, s.train.class_counts[i], r.norms[i]);
    }
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j)
      if (i != j) sum += r.angle_deg(i, j);
  const double mean = k > 1 ? sum / static_cast<double>(k * (k - 1)) : 0.0;
  out << fmt::format("mean_angle_deg={:.3f} optimum_deg={:.3f} nc2_norm_cv={:.4g}\n", mean,
                     std::acos(-1.0 / static_cast<double>(k - 1)) * 180.0 / std::acos(-1.0),
                     r.nc2_norm_cv);
  return 0;
}

// ------------------------------------------------------------------ verify

int cmd_verify(std::size_t k, std::size_t p, std::uint64_t seed, std::ostream& out) {
  const LsCheck ls = verify_ls_optimality(k, p, std::max<std::size_t>(4 * (p + 1), 10 * k), 100,
                                          1e-3, seed);
  const MaxMinResult mm = verify_maxmin_cosine(k, p, 3000, seed);
  const bool mm_ok = std::abs(mm.max_cosine - mm.bound) <= 1e-2;
  const SelfDualityReport sd = verify_self_duality(k, p, 1.0, seed);
  const bool sd_ok = sd.min_alignment >= 0.999;
  auto tag = [](bool ok) { return ok ? "PASS" : "FAIL"; };
  out << fmt::format("prop1 {} grad_norm={:.3g} min_increase={:.3g}\n", tag(ls.ok), ls.grad_norm,
                     ls.min_increase);
  out << fmt::format("prop3 {} max_cosine={:.6f} bound={:.6f}\n", tag(mm_ok), mm.max_cosine, mm.bound);
  out << fmt::format("prop4 {} min_alignment={:.9f}\n", tag(sd_ok), sd.min_alignment);
  return ls.ok && mm_ok && sd_ok ? 0 : 1;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"ncforge: neural-collapse regularized training on long-tailed data", "ncforge"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset as IDX files");
  std::string preset, spec;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  auto* preset_opt = gen->add_option("--preset", preset, "synthetic-lt | synthetic-balanced");
  auto* spec_opt = gen->add_option("--spec", spec, "config file whose data keys are used");
  preset_opt->excludes(spec_opt);
  gen->add_option("--seed", gen_seed, "data seed");
  gen->add_option("--out", gen_out, "output directory")->required();

  auto* tr = app.add_subcommand("train", "train, evaluate and write metrics/checkpoint/summary");
  std::string config, train_out;
  std::optional<std::uint64_t> seed;
  tr->add_option("--config", config, "experiment config file")->required();
  tr->add_option("--seed", seed, "run seed (overrides the config)");
  tr->add_option("--out", train_out, "output directory")->required();

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on its test split");
  std::string eval_ckpt, eval_out;
  bool noise = false;
  std::vector<double> sigmas;
  ev->add_option("--checkpoint", eval_ckpt, "model.ckpt written by train")->required();
  ev->add_flag("--noise", noise, "add the Gaussian-noise robustness sweep");
  ev->add_option("--sigmas", sigmas, "noise levels (default: from the config)")->delimiter(',');
  ev->add_option("--out", eval_out, "output directory (default: next to the checkpoint)");

  auto* an = app.add_subcommand("analyze", "angle heatmap and class-mean norms of a checkpoint");
  std::string an_ckpt, an_out;
  an->add_option("--checkpoint", an_ckpt, "model.ckpt written by train")->required();
  an->add_option("--out", an_out, "output directory")->required();

  auto* ve = app.add_subcommand("verify", "run the analytic verifiers");
  std::size_t vk = 10, vp = 64;
  std::uint64_t vseed = 0;
  ve->add_option("--k", vk, "number of classes");
  ve->add_option("--p", vp, "feature dimension");
  ve->add_option("--seed", vseed, "seed");

  std::vector<std::string> argv_store{"ncforge"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: UsageError: " << one_line(e.what()) << '\n';
    return 2;
  }

  try {
    if (*gen) {
      if (preset.empty() && spec.empty()) throw ConfigError("gen-data needs --preset or --spec");
      return cmd_gen_data(preset, spec, gen_seed, gen_out, out);
    }
    if (*tr) return cmd_train(config, seed, train_out, out, err);
    if (*ev) {
      return cmd_eval(eval_ckpt, noise, sigmas,
                      eval_out.empty() ? std::nullopt : std::optional<fs::path>(eval_out), out);
    }
    if (*an) return cmd_analyze(an_ckpt, an_out, out);
    if (*ve) {
      if (vk < 2 || vp + 1 < vk) throw SpecError("verify needs K >= 2 and P >= K - 1");
      return cmd_verify(vk, vp, vseed, out);
    }
  } catch (const Error& e) {
    err << "error: " << e.kind() << ": " << one_line(e.what()) << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: InternalError: " << one_line(e.what()) << '\n';
    return 1;
  }
  return 1;
}

}  // namespace ncf
