#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <numbers>
#include <stdexcept>

#include "ncforge/collapse.hpp"
#include "ncforge/error.hpp"
#include "ncforge/train.hpp"
#include "support.hpp"

using namespace ncf;

namespace {

TrainConfig small_config(std::size_t epochs) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 64;
  cfg.schedule = LrSchedule::multi_step(0.05, default_milestones(epochs));
  cfg.widths = {16, 8};
  cfg.seed = 3;
  return cfg;
}

Dataset small_lt(std::uint64_t seed) {
  return apply_long_tail(gen_gaussian_mixture(4, 6, 80, 4.0, 1.0, seed), {10.0, {}}, seed);
}

}  // namespace

TEST_SUITE("lr schedule") {
  TEST_CASE("multi-step with milestones 160 and 180") {
    const LrSchedule s = LrSchedule::multi_step(0.1, {160, 180}, 0.1);
    CHECK(lr_at(s, 0, 200) == doctest::Approx(0.1));
    CHECK(lr_at(s, 159, 200) == doctest::Approx(0.1));
    CHECK(lr_at(s, 160, 200) == doctest::Approx(0.01));
    CHECK(lr_at(s, 165, 200) == doctest::Approx(0.01));
    CHECK(lr_at(s, 185, 200) == doctest::Approx(0.001));
  }

  TEST_CASE("cosine from 0.05 to 0") {
    const LrSchedule s = LrSchedule::cosine(0.05);
    CHECK(lr_at(s, 0, 200) == 0.05);
    CHECK(lr_at(s, 100, 200) == doctest::Approx(0.025));
    CHECK(lr_at(s, 199, 200) < 1e-5);
    CHECK(lr_at(s, 199, 200) > 0.0);
  }

  TEST_CASE("desk defaults") {
    CHECK(default_milestones(60) == std::vector<std::size_t>{42, 54});
    CHECK(default_drw_epoch(60) == 48);
  }
}

TEST_SUITE("sgd") {
  TEST_CASE("plain gradient step") {
    std::vector<double> p{1.0, -2.0}, g{0.5, 1.0}, v{0.0, 0.0};
    sgd_step(p, g, v, {0.1, 0.0, 0.0});
    CHECK(p[0] == doctest::Approx(0.95));
    CHECK(p[1] == doctest::Approx(-2.1));
  }

  TEST_CASE("momentum keeps moving with zero gradient") {
    std::vector<double> p{1.0}, g{0.0}, v{2.0};
    sgd_step(p, g, v, {0.1, 0.9, 0.0});
    CHECK(v[0] == doctest::Approx(1.8));
    CHECK(p[0] == doctest::Approx(1.0 - 0.1 * 0.9 * 2.0));
  }

  TEST_CASE("coupled weight decay enters the buffer") {
    std::vector<double> p{2.0}, g{0.0}, v{0.0};
    sgd_step(p, g, v, {0.5, 0.9, 0.01});
    CHECK(v[0] == doctest::Approx(0.02));
    CHECK(p[0] == doctest::Approx(2.0 - 0.5 * 0.02));
  }

  TEST_CASE("quadratic bowl converges to its minimizer") {
    // f(x) = 1/2 sum a_i (x_i - c_i)^2, minimizer c.
    const std::vector<double> a{1.0, 3.0, 0.5}, c{2.0, -1.0, 4.0};
    std::vector<double> x{0.0, 0.0, 0.0}, v(3, 0.0);
    for (int t = 0; t < 100; ++t) {
      std::vector<double> g(3);
      for (std::size_t i = 0; i < 3; ++i) g[i] = a[i] * (x[i] - c[i]);
      sgd_step(x, g, v, {0.3, 0.5, 0.0});
    }
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(x[i] - c[i]) <= 1e-6);
  }

  TEST_CASE("errors") {
    std::vector<double> p{1.0}, g{NAN}, v{0.0};
    CHECK_THROWS_AS(sgd_step(p, g, v, {}), NumericalError);
    std::vector<double> g2{1.0, 2.0};
    CHECK_THROWS_AS(sgd_step(p, g2, v, {}), ShapeError);
  }
}

TEST_SUITE("train") {
  TEST_CASE("zero epochs returns the initial state") {
    const Dataset ds = small_lt(1);
    const TrainConfig cfg = small_config(0);
    const TrainState st = train(cfg, ds);
    const TrainState init = init_state(cfg, ds.dim(), ds.num_classes());
    CHECK(st.log.empty());
    CHECK(st.epoch == 0);
    CHECK(extractor_hash(st.model.extractor) == extractor_hash(init.model.extractor));
    CHECK(st.model.classifier.weight == init.model.classifier.weight);
  }

  TEST_CASE("momentum buffers mirror the parameters") {
    const TrainState st = init_state(small_config(1), 6, 4);
    const auto views = parameter_views(st.model);
    REQUIRE(views.size() == st.momentum.size());
    for (std::size_t i = 0; i < views.size(); ++i) CHECK(views[i].size() == st.momentum[i].size());
  }

  TEST_CASE("same config and seed give identical logs") {
    const Dataset ds = small_lt(2);
    TrainConfig cfg = small_config(4);
    cfg.reg = {0.01, 0.1, 1};
    cfg.drw_epoch = 2;
    const TrainState a = train(cfg, ds);
    const TrainState b = train(cfg, ds);
    REQUIRE(a.log.size() == 4);
    for (std::size_t e = 0; e < 4; ++e) CHECK(metrics_csv_row(a.log[e]) == metrics_csv_row(b.log[e]));
    cfg.seed = 4;
    CHECK(metrics_csv_row(train(cfg, ds).log.back()) != metrics_csv_row(a.log.back()));
  }

  TEST_CASE("balanced K=10 mixture is fit") {
    const Dataset ds = gen_gaussian_mixture(10, 32, 200, 5.0, 1.0, 0);
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.schedule = LrSchedule::multi_step(0.1, default_milestones(50));
    cfg.seed = 0;
    const TrainState st = train(cfg, ds);
    CHECK(st.log.back().train_acc >= 0.99);
  }

  TEST_CASE("logged losses satisfy the weighted-sum identity") {
    const Dataset ds = small_lt(3);
    TrainConfig cfg = small_config(4);
    cfg.reg = {0.05, 0.2, 2};
    const TrainState st = train(cfg, ds);
    for (const EpochMetrics& m : st.log) {
      const double expect = total_loss(m.loss_sup, m.loss_lw, m.loss_lb, cfg.reg, m.epoch);
      CHECK(std::abs(m.loss_total - expect) <= 1e-12);
      if (m.epoch < 2) CHECK(m.loss_total == m.loss_sup);
    }
  }

  TEST_CASE("no regularizers and no DRW match between equivalent configs") {
    const Dataset ds = small_lt(4);
    TrainConfig a = small_config(3);
    TrainConfig b = a;
    b.reg = {0.0, 0.0, 0};
    b.drw_epoch.reset();
    a.reg = {0.0, 0.0, 5};
    CHECK(metrics_csv_row(train(a, ds).log.back()) == metrics_csv_row(train(b, ds).log.back()));
  }

  TEST_CASE("metrics row and header agree") {
    EpochMetrics m;
    m.epoch = 3;
    m.lr = 0.1;
    const std::string row = metrics_csv_row(m);
    CHECK(std::count(row.begin(), row.end(), ',') ==
          std::count(kMetricsHeader, kMetricsHeader + std::strlen(kMetricsHeader), ','));
    CHECK(row.rfind("3,0.1,", 0) == 0);
  }

  TEST_CASE("divergence raises NumericalError with context") {
    const Dataset ds = small_lt(5);
    TrainConfig cfg = small_config(3);
    cfg.schedule = LrSchedule::multi_step(1e200, {});
    try {
      train(cfg, ds);
      FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
      const std::string what = e.what();
      CHECK(what.find("epoch") != std::string::npos);
      CHECK(what.find("batch") != std::string::npos);
    }
  }

  TEST_CASE("invalid configs") {
    const Dataset ds = small_lt(1);
    TrainConfig cfg = small_config(5);
    cfg.momentum = 1.0;
    CHECK_THROWS_AS(train(cfg, ds), ConfigError);
    cfg = small_config(5);
    cfg.schedule = LrSchedule::multi_step(0.1, {3, 2});
    CHECK_THROWS_AS(train(cfg, ds), ConfigError);
    cfg.schedule = LrSchedule::multi_step(0.1, {5});
    CHECK_THROWS_AS(train(cfg, ds), ConfigError);
  }
}

TEST_SUITE("crt") {
  TEST_CASE("zero epochs only reinitializes the classifier") {
    const Dataset ds = small_lt(6);
    const TrainState st = train(small_config(2), ds);
    CrtConfig crt;
    crt.epochs = 0;
    crt.seed = 8;
    const TrainState out = retrain_classifier_crt(st, ds, crt);
    const LinearClassifier fresh = init_classifier(8, 4, derive_seed(8, 0x2000));
    CHECK(out.model.classifier.weight == fresh.weight);
    CHECK(out.model.classifier.bias == fresh.bias);
    CHECK(extractor_hash(out.model.extractor) == extractor_hash(st.model.extractor));
  }

  TEST_CASE("extractor is bit-identical after retraining") {
    const Dataset ds = small_lt(7);
    const TrainState st = train(small_config(3), ds);
    const TrainState out = retrain_classifier_crt(st, ds, {});
    CHECK(extractor_hash(out.model.extractor) == extractor_hash(st.model.extractor));
    for (std::size_t l = 0; l < st.model.extractor.layers.size(); ++l)
      CHECK(out.model.extractor.layers[l].weight == st.model.extractor.layers[l].weight);
    CHECK_FALSE(out.model.classifier.weight == st.model.classifier.weight);
  }

  TEST_CASE("on exact collapsed ETF features the head becomes self-dual") {
    // Identity extractor over inputs that already sit on an imbalanced ETF.
    const std::size_t k = 5, p = k - 1;
    const Matrix etf = make_simplex_etf(k, p, 4.0, 1).transpose();
    Labels y;
    const Counts counts{200, 80, 30, 12, 5};
    for (std::size_t c = 0; c < k; ++c) y.insert(y.end(), counts[c], static_cast<int>(c));
    Matrix x(y.size(), p);
    for (std::size_t i = 0; i < y.size(); ++i)
      for (std::size_t j = 0; j < p; ++j) x(i, j) = etf(static_cast<std::size_t>(y[i]), j);
    const Dataset ds = make_dataset(x, y, k, "etf");

    TrainState st;
    st.model.extractor.widths = {p, p};
    st.model.extractor.layers = {DenseLayer{Matrix::identity(p), Vector(p, 0.0)}};
    st.model.classifier = init_classifier(p, k, 0);
    st.momentum = std::vector<std::vector<double>>(4);
    st.momentum[0].assign(p * p, 0.0);
    st.momentum[1].assign(p, 0.0);
    st.momentum[2].assign(p * k, 0.0);
    st.momentum[3].assign(k, 0.0);

    CrtConfig crt;
    crt.epochs = 100;
    crt.weight_decay = 5e-2;
    const TrainState out = retrain_classifier_crt(st, ds, crt);
    const ClassStatistics stats = compute_class_stats(x, y, k);
    CHECK(nc3_metric(stats, out.model.classifier) >= 0.999);
    CHECK(out.last_report.nc3_align == doctest::Approx(nc3_metric(stats, out.model.classifier)));
  }
}

TEST_SUITE("evaluate") {
  Model constant_model(std::size_t dim, std::size_t k) {
    Model m = init_params({dim, 2}, k, 0);
    m.classifier.weight = Matrix(2, k);
    m.classifier.bias.assign(k, 0.0);
    m.classifier.bias[0] = 1.0;
    return m;
  }

  TEST_CASE("constant predictor on a balanced set scores 1/K") {
    const Dataset ds = gen_gaussian_mixture(5, 3, 20, 2.0, 1.0, 0);
    const EvalReport r = evaluate(constant_model(3, 5), ds, ds.class_counts);
    CHECK(r.overall == doctest::Approx(0.2));
    CHECK(r.per_class[0] == 1.0);
    for (std::size_t c = 1; c < 5; ++c) CHECK(r.per_class[c] == 0.0);
  }

  TEST_CASE("memorized training set scores 1") {
    // Nearest-mean head on exactly collapsed features.
    const Matrix etf = make_simplex_etf(4, 3, 1.0, 2).transpose();
    const Labels y = testing::cyclic_labels(40, 4);
    Matrix x(40, 3);
    for (std::size_t i = 0; i < 40; ++i)
      for (std::size_t j = 0; j < 3; ++j) x(i, j) = etf(static_cast<std::size_t>(y[i]), j);
    const Dataset ds = make_dataset(x, y, 4, "etf");
    Model m;
    m.extractor.widths = {3, 3};
    m.extractor.layers = {DenseLayer{Matrix::identity(3), Vector(3, 0.0)}};
    m.classifier = {etf.transpose(), Vector(4, 0.0)};
    CHECK(evaluate(m, ds, ds.class_counts).overall == 1.0);
  }

  TEST_CASE("random state against a confusion matrix") {
    const Dataset train_ds = small_lt(9);
    const Dataset test = gen_gaussian_mixture(4, 6, 25, 4.0, 1.0, 10);
    const Model m = init_params({6, 8, 5}, 4, 11);
    const EvalReport r = evaluate(m, test, train_ds.class_counts, {50, 15});

    std::vector<std::vector<double>> conf(4, std::vector<double>(4, 0.0));
    const Matrix h = forward_features(m.extractor, test.features);
    const Matrix z = forward_logits(m.classifier, h);
    for (std::size_t i = 0; i < test.size(); ++i) {
      std::size_t arg = 0;
      for (std::size_t c = 1; c < 4; ++c)
        if (z(i, c) > z(i, arg)) arg = c;
      conf[static_cast<std::size_t>(test.labels[i])][arg] += 1.0;
    }
    double diag = 0.0;
    for (std::size_t c = 0; c < 4; ++c) {
      double row = 0.0;
      for (double v : conf[c]) row += v;
      CHECK(r.per_class[c] == doctest::Approx(conf[c][c] / row));
      CHECK(r.per_class_support[c] == 25);
      diag += conf[c][c];
    }
    CHECK(r.overall == doctest::Approx(diag / 100.0));

    // train counts 80, 37, 17, 8 with many > 50, few < 15
    CHECK(train_ds.class_counts == Counts{80, 37, 17, 8});
    CHECK(r.many == doctest::Approx(conf[0][0] / 25.0));
    CHECK(r.medium == doctest::Approx((conf[1][1] + conf[2][2]) / 50.0));
    CHECK(r.few == doctest::Approx(conf[3][3] / 25.0));
  }

  TEST_CASE("overall is the support-weighted mean of per-class accuracy") {
    const Dataset ds = small_lt(12);
    const TrainState st = train(small_config(2), ds);
    const EvalReport r = evaluate(st.model, ds, ds.class_counts);
    double acc = 0.0;
    for (std::size_t c = 0; c < 4; ++c) acc += r.per_class[c] * double(r.per_class_support[c]);
    CHECK(r.overall == doctest::Approx(acc / double(ds.size())).epsilon(1e-14));
  }

  TEST_CASE("empty bucket and absent class are NaN") {
    Dataset ds;
    ds.features = testing::random_matrix(6, 3, 1);
    ds.labels = {0, 1, 0, 1, 0, 1};
    ds.class_counts = {3, 3, 0};
    const EvalReport r = evaluate(constant_model(3, 3), ds, Counts{500, 500, 500});
    CHECK(std::isnan(r.few));
    CHECK(std::isnan(r.medium));
    CHECK(r.many == doctest::Approx(0.5));
    CHECK(r.per_class_support[2] == 0);
    CHECK(std::isnan(r.per_class[2]));
  }

  TEST_CASE("count vector of the wrong size") {
    const Dataset ds = gen_gaussian_mixture(3, 3, 5, 2.0, 1.0, 0);
    CHECK_THROWS_AS(evaluate(constant_model(3, 3), ds, Counts{1, 2}), ShapeError);
  }
}

TEST_SUITE("noise robustness") {
  TEST_CASE("sigma 0 equals plain evaluation") {
    const Dataset ds = small_lt(13);
    const TrainState st = train(small_config(3), ds);
    const auto rows = noise_robustness(st.model, ds, {0.0}, 5);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].accuracy == evaluate(st.model, ds, ds.class_counts).overall);
  }

  TEST_CASE("default sigmas") {
    CHECK(kDefaultNoiseSigmas == std::vector<double>{0.0, 0.1, 0.2, 0.3, 0.4});
  }

  TEST_CASE("accuracy mostly falls with sigma") {
    int runs_ok = 0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const Dataset ds = gen_gaussian_mixture(10, 32, 60, 2.5, 1.0, seed);
      TrainConfig cfg;
      cfg.epochs = 15;
      cfg.schedule = LrSchedule::multi_step(0.1, default_milestones(15));
      cfg.seed = seed;
      const TrainState st = train(cfg, ds);
      // larger sigmas than the default list so the trend is visible at this scale
      const auto rows = noise_robustness(st.model, ds, {0.0, 0.5, 1.0, 1.5, 2.0}, seed);
      int inversions = 0;
      for (std::size_t i = 1; i < rows.size(); ++i) inversions += rows[i].accuracy > rows[i - 1].accuracy;
      runs_ok += inversions <= 1;
    }
    CHECK(runs_ok >= 2);
  }

  TEST_CASE("deterministic and rejects negative sigma") {
    const Dataset ds = small_lt(14);
    const Model m = init_params({6, 8}, 4, 1);
    const auto a = noise_robustness(m, ds, kDefaultNoiseSigmas, 3);
    const auto b = noise_robustness(m, ds, kDefaultNoiseSigmas, 3);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].accuracy == b[i].accuracy);
    CHECK_THROWS_AS(noise_robustness(m, ds, {0.1, -0.1}, 0), InvalidInput);
  }
}

TEST_SUITE("threads") {
  TEST_CASE("parallel_for visits every index once") {
    std::vector<std::atomic<int>> hits(100);
    parallel_for(100, [&](std::size_t i) { hits[i]++; });
    for (auto& h : hits) CHECK(h.load() == 1);
  }

  TEST_CASE("lowest failing index wins") {
    try {
      parallel_for(50, [](std::size_t i) {
        if (i % 10 == 7) throw std::runtime_error("index " + std::to_string(i));
      });
      FAIL("expected an exception");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()) == "index 7");
    }
  }

  TEST_CASE("thread cap from the environment") {
    setenv("NC_FORGE_THREADS", "3", 1);
    CHECK(worker_threads() == 3);
    setenv("NC_FORGE_THREADS", "zero", 1);
    CHECK(worker_threads() >= 1);
    unsetenv("NC_FORGE_THREADS");
  }

  TEST_CASE("derived seeds differ by tag") {
    CHECK(derive_seed(0, 1) != derive_seed(0, 2));
    CHECK(derive_seed(1, 1) != derive_seed(0, 1));
    CHECK(derive_seed(5, 9) == derive_seed(5, 9));
  }
}
