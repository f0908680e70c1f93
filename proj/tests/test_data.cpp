#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "ncforge/dataset.hpp"
#include "ncforge/error.hpp"
#include "ncforge/idx.hpp"
#include "support.hpp"

using namespace ncf;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ncforge_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> be32(std::uint32_t v) {
  return {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
}

std::vector<unsigned char> concat(std::initializer_list<std::vector<unsigned char>> parts) {
  std::vector<unsigned char> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

// Two 2x2 images with pixels 0, 51, 102, 255 and 255, 0, 0, 0.
void write_fixture(const fs::path& dir, std::uint32_t label_magic = kIdxLabelMagic) {
  write_bytes(dir / "img.idx", concat({be32(kIdxImageMagic), be32(2), be32(2), be32(2),
                                       {0, 51, 102, 255, 255, 0, 0, 0}}));
  write_bytes(dir / "lab.idx", concat({be32(label_magic), be32(2), {1, 0}}));
}

std::vector<double> row_vec(const Matrix& m, std::size_t r) { return testing::row_of(m, r); }

}  // namespace

TEST_SUITE("gaussian mixture") {
  TEST_CASE("zero spread puts every point on its class mean") {
    const GaussianMixture mix = draw_mixture(2, 2, 10.0, 0.0, 3);
    const Dataset ds = sample_mixture(mix, 5, 4);
    CHECK(ds.size() == 10);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto k = static_cast<std::size_t>(ds.labels[i]);
      CHECK(row_vec(ds.features, i) == row_vec(mix.means, k));
    }
    for (std::size_t k = 0; k < 2; ++k)
      CHECK(std::sqrt(testing::dotv(row_vec(mix.means, k), row_vec(mix.means, k))) ==
            doctest::Approx(10.0).epsilon(1e-12));
  }

  TEST_CASE("same seed gives a bit-identical dataset") {
    const Dataset a = gen_gaussian_mixture(10, 32, 500, 5.0, 1.0, 0);
    const Dataset b = gen_gaussian_mixture(10, 32, 500, 5.0, 1.0, 0);
    CHECK(a.features == b.features);
    CHECK(a.labels == b.labels);
    const Dataset c = gen_gaussian_mixture(10, 32, 500, 5.0, 1.0, 1);
    CHECK_FALSE(a.features == c.features);
  }

  TEST_CASE("empirical class means concentrate around the true means") {
    const GaussianMixture mix = draw_mixture(10, 32, 5.0, 1.0, 0);
    const Dataset ds = sample_mixture(mix, 500, 0);
    const Matrix emp = testing::naive_class_means(ds.features, ds.labels, 10);
    // Per-coordinate standard error is spread / sqrt(500).
    const double bound = 3.0 / std::sqrt(500.0);
    std::size_t outside = 0;
    for (std::size_t k = 0; k < 10; ++k)
      for (std::size_t j = 0; j < 32; ++j)
        if (std::abs(emp(k, j) - mix.means(k, j)) > bound) ++outside;
    // 320 coordinates at 3 sigma: about 0.9 expected outside; allow a few.
    CHECK(outside <= 4);
    CHECK(testing::max_abs_diff(emp, mix.means) < 4.5 / std::sqrt(500.0));
  }

  TEST_CASE("counts match labels") {
    const Dataset ds = gen_gaussian_mixture(4, 3, 7, 2.0, 1.0, 9);
    CHECK(ds.class_counts == count_labels(ds.labels, 4));
    CHECK(ds.class_counts == Counts(4, 7));
  }

  TEST_CASE("precondition violations") {
    CHECK_THROWS_AS(gen_gaussian_mixture(1, 3, 5, 1.0, 1.0, 0), InvalidInput);
    CHECK_THROWS_AS(gen_gaussian_mixture(3, 1, 5, 1.0, 1.0, 0), InvalidInput);
    CHECK_THROWS_AS(gen_gaussian_mixture(3, 3, 0, 1.0, 1.0, 0), InvalidInput);
    CHECK_THROWS_AS(gen_gaussian_mixture(3, 3, 5, 0.0, 1.0, 0), InvalidInput);
  }
}

TEST_SUITE("long tail") {
  TEST_CASE("endpoints for m=5000, K=10, r=100") {
    const Counts c = long_tail_counts(5000, 10, 100.0);
    CHECK(c.front() == 5000);
    CHECK(c.back() == 50);
  }

  TEST_CASE("class 5 follows the decay formula") {
    // 5000 * 100^(-5/9) = 387.15...
    const double direct = 5000.0 * std::pow(100.0, -5.0 / 9.0);
    CHECK(direct == doctest::Approx(387.15).epsilon(1e-4));
    CHECK(long_tail_counts(5000, 10, 100.0)[5] == 387);
  }

  TEST_CASE("every class follows round(m r^(-k/(K-1)))") {
    for (double r : {10.0, 50.0, 100.0}) {
      const Counts c = long_tail_counts(1000, 10, r);
      for (std::size_t k = 0; k < 10; ++k)
        CHECK(c[k] == static_cast<std::size_t>(std::lround(1000.0 * std::pow(r, -double(k) / 9.0))));
      CHECK(static_cast<double>(c.front()) / static_cast<double>(c.back()) ==
            doctest::Approx(r).epsilon(0.03));
    }
  }

  TEST_CASE("r = 1 leaves the dataset unchanged") {
    const Dataset ds = gen_gaussian_mixture(5, 4, 20, 3.0, 1.0, 2);
    const Dataset lt = apply_long_tail(ds, {1.0, {}}, 7);
    CHECK(lt.class_counts == ds.class_counts);
    CHECK(lt.size() == ds.size());
  }

  TEST_CASE("kept samples are bit-exact, distinct rows of the input") {
    const Dataset ds = gen_gaussian_mixture(10, 6, 200, 3.0, 1.0, 5);
    const Dataset lt = apply_long_tail(ds, {100.0, {}}, 11);
    CHECK(lt.class_counts == long_tail_counts(200, 10, 100.0));
    CHECK(lt.class_counts == count_labels(lt.labels, 10));
    std::map<std::vector<double>, int> source;
    for (std::size_t i = 0; i < ds.size(); ++i) source[row_vec(ds.features, i)] = ds.labels[i];
    std::set<std::vector<double>> seen;
    for (std::size_t i = 0; i < lt.size(); ++i) {
      const auto row = row_vec(lt.features, i);
      const auto it = source.find(row);
      REQUIRE(it != source.end());
      CHECK(it->second == lt.labels[i]);
      CHECK(seen.insert(row).second);
    }
  }

  TEST_CASE("custom ordering moves the head") {
    const Dataset ds = gen_gaussian_mixture(3, 2, 100, 3.0, 1.0, 5);
    const Dataset lt = apply_long_tail(ds, {10.0, {2, 0, 1}}, 1);
    CHECK(lt.class_counts[2] == 100);
    CHECK(lt.class_counts[1] == 10);
  }

  TEST_CASE("deterministic per seed") {
    const Dataset ds = gen_gaussian_mixture(4, 3, 50, 3.0, 1.0, 5);
    CHECK(apply_long_tail(ds, {10.0, {}}, 3).features == apply_long_tail(ds, {10.0, {}}, 3).features);
  }

  TEST_CASE("errors") {
    CHECK_THROWS_AS(long_tail_counts(10, 10, 100.0), SpecError);
    const Dataset lt = apply_long_tail(gen_gaussian_mixture(3, 2, 10, 1.0, 1.0, 0), {5.0, {}}, 0);
    CHECK_THROWS_AS(apply_long_tail(lt, {2.0, {}}, 0), SpecError);
    const Dataset ds = gen_gaussian_mixture(3, 2, 10, 1.0, 1.0, 0);
    CHECK_THROWS_AS(apply_long_tail(ds, {2.0, {0, 0, 1}}, 0), SpecError);
  }
}

TEST_SUITE("sampler") {
  TEST_CASE("instance-balanced stream is a permutation") {
    const Dataset ds = gen_gaussian_mixture(2, 2, 5, 1.0, 1.0, 0);
    const Batches b = make_index_stream(ds, {SamplerMode::Kind::kInstanceBalanced, 3}, 10);
    REQUIRE(b.size() == 1);
    std::vector<std::size_t> idx = b[0];
    std::sort(idx.begin(), idx.end());
    for (std::size_t i = 0; i < 10; ++i) CHECK(idx[i] == i);
  }

  TEST_CASE("batches partition the epoch with a short last batch") {
    const Dataset ds = gen_gaussian_mixture(2, 2, 5, 1.0, 1.0, 0);
    const Batches b = make_index_stream(ds, {SamplerMode::Kind::kInstanceBalanced, 3}, 4);
    REQUIRE(b.size() == 3);
    CHECK(b[2].size() == 2);
  }

  TEST_CASE("class-balanced frequencies within 3 sigma of 1/K") {
    const Dataset lt = apply_long_tail(gen_gaussian_mixture(10, 2, 500, 3.0, 1.0, 1), {100.0, {}}, 2);
    const std::size_t draws = 100000;
    const Batches b = make_index_stream(lt, {SamplerMode::Kind::kClassBalanced, 8}, 1000, draws);
    std::vector<double> freq(10, 0.0);
    std::size_t total = 0;
    for (const auto& batch : b)
      for (std::size_t i : batch) {
        freq[static_cast<std::size_t>(lt.labels[i])] += 1.0;
        ++total;
      }
    CHECK(total == draws);
    const double p = 0.1;
    const double sigma = std::sqrt(p * (1 - p) / double(draws));
    for (double f : freq) CHECK(std::abs(f / double(draws) - p) <= 3 * sigma);
  }

  TEST_CASE("same seed gives the same stream") {
    const Dataset ds = gen_gaussian_mixture(3, 2, 30, 1.0, 1.0, 0);
    for (auto kind : {SamplerMode::Kind::kInstanceBalanced, SamplerMode::Kind::kClassBalanced}) {
      CHECK(make_index_stream(ds, {kind, 5}, 7) == make_index_stream(ds, {kind, 5}, 7));
      CHECK(make_index_stream(ds, {kind, 5}, 7) != make_index_stream(ds, {kind, 6}, 7));
    }
  }

  TEST_CASE("batch size zero") {
    const Dataset ds = gen_gaussian_mixture(2, 2, 5, 1.0, 1.0, 0);
    CHECK_THROWS_AS(make_index_stream(ds, {}, 0), InvalidInput);
  }
}

TEST_SUITE("noise") {
  TEST_CASE("sigma 0 is the identity") {
    const Dataset ds = gen_gaussian_mixture(3, 4, 10, 2.0, 1.0, 0);
    const Dataset c = corrupt_gaussian(ds, 0.0, 9);
    CHECK(c.features == ds.features);
    CHECK(c.labels == ds.labels);
  }

  TEST_CASE("the robustness sigmas are accepted and give matching std") {
    const Dataset ds = gen_gaussian_mixture(2, 50, 100, 2.0, 1.0, 0);  // 10^4 entries
    for (double sigma : {0.1, 0.2, 0.3, 0.4}) {
      const Dataset c = corrupt_gaussian(ds, sigma, 17);
      double s = 0.0, s2 = 0.0;
      const auto n = static_cast<double>(ds.features.size());
      for (std::size_t i = 0; i < ds.features.size(); ++i) {
        const double d = c.features.data()[i] - ds.features.data()[i];
        s += d;
        s2 += d * d;
      }
      const double sd = std::sqrt(s2 / n - (s / n) * (s / n));
      CHECK(std::abs(sd - sigma) <= 0.02 * sigma);
      CHECK(c.labels == ds.labels);
    }
  }

  TEST_CASE("negative sigma") {
    const Dataset ds = gen_gaussian_mixture(2, 2, 2, 2.0, 1.0, 0);
    CHECK_THROWS_AS(corrupt_gaussian(ds, -0.1, 0), InvalidInput);
  }
}

TEST_SUITE("idx") {
  TEST_CASE("hand-built two-image fixture") {
    const fs::path dir = scratch_dir("idx_fixture");
    write_fixture(dir);
    const Dataset ds = load_idx(dir / "img.idx", dir / "lab.idx");
    CHECK(ds.size() == 2);
    CHECK(ds.dim() == 4);
    CHECK(ds.labels == Labels{1, 0});
    CHECK(ds.features(0, 1) == 51.0 / 255.0);
    CHECK(ds.features(0, 3) == 1.0);
    CHECK(ds.features(1, 0) == 1.0);
  }

  TEST_CASE("label file with the image magic") {
    const fs::path dir = scratch_dir("idx_magic");
    write_fixture(dir, kIdxImageMagic);
    CHECK_THROWS_AS(load_idx(dir / "img.idx", dir / "lab.idx"), FormatError);
  }

  TEST_CASE("count mismatch and truncation") {
    const fs::path dir = scratch_dir("idx_bad");
    write_fixture(dir);
    write_bytes(dir / "lab3.idx", concat({be32(kIdxLabelMagic), be32(3), {1, 0, 1}}));
    CHECK_THROWS_AS(load_idx(dir / "img.idx", dir / "lab3.idx"), FormatError);
    write_bytes(dir / "short.idx",
                concat({be32(kIdxImageMagic), be32(2), be32(2), be32(2), {0, 1, 2}}));
    CHECK_THROWS_AS(load_idx(dir / "short.idx", dir / "lab.idx"), FormatError);
    write_bytes(dir / "stub.idx", {0, 0});
    CHECK_THROWS_AS(load_idx(dir / "stub.idx", dir / "lab.idx"), FormatError);
    CHECK_THROWS_AS(load_idx(dir / "missing.idx", dir / "lab.idx"), FormatError);
  }

  TEST_CASE("write then read is bit-identical after quantization") {
    const fs::path dir = scratch_dir("idx_roundtrip");
    const Dataset q = quantize_unit(gen_gaussian_mixture(3, 6, 8, 2.0, 1.0, 4));
    write_idx(q, dir / "i.idx", dir / "l.idx", 2);
    const Dataset back = load_idx(dir / "i.idx", dir / "l.idx");
    CHECK(back.features == q.features);
    CHECK(back.labels == q.labels);
    CHECK(back.class_counts == q.class_counts);
  }

  TEST_CASE("quantize_unit snaps to k/255 in [0, 1]") {
    const Dataset q = quantize_unit(gen_gaussian_mixture(3, 6, 8, 2.0, 1.0, 4));
    for (double v : q.features.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      CHECK(std::round(v * 255.0) / 255.0 == v);
    }
  }
}
