#include "ncforge/idx.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <vector>

#include "ncforge/error.hpp"

namespace ncf {

namespace {

using Bytes = std::vector<unsigned char>;

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::uint32_t read_be32(const Bytes& b, std::size_t offset, const std::filesystem::path& path) {
  if (offset + 4 > b.size()) throw FormatError(path.string() + ": truncated header");
  return (std::uint32_t{b[offset]} << 24) | (std::uint32_t{b[offset + 1]} << 16) |
         (std::uint32_t{b[offset + 2]} << 8) | std::uint32_t{b[offset + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const std::array<char, 4> bytes{static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                                  static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(bytes.data(), bytes.size());
}

std::string hex(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const Bytes img = read_file(images);
  const Bytes lab = read_file(labels);

  const std::uint32_t img_magic = read_be32(img, 0, images);
  if (img_magic != kIdxImageMagic) {
    throw FormatError(images.string() + ": image magic " + hex(img_magic) + ", expected " +
                      hex(kIdxImageMagic));
  }
  const std::uint32_t lab_magic = read_be32(lab, 0, labels);
  if (lab_magic != kIdxLabelMagic) {
    throw FormatError(labels.string() + ": label magic " + hex(lab_magic) + ", expected " +
                      hex(kIdxLabelMagic));
  }

  const std::size_t n = read_be32(img, 4, images);
  const std::size_t rows = read_be32(img, 8, images);
  const std::size_t cols = read_be32(img, 12, images);
  const std::size_t n_labels = read_be32(lab, 4, labels);
  if (n != n_labels) {
    throw FormatError("image count " + std::to_string(n) + " != label count " +
                      std::to_string(n_labels));
  }
  const std::size_t dim = rows * cols;
  if (img.size() < 16 + n * dim) throw FormatError(images.string() + ": truncated pixel payload");
  if (lab.size() < 8 + n) throw FormatError(labels.string() + ": truncated label payload");
  if (n == 0) throw FormatError(images.string() + ": no samples");

  Matrix x(n, dim);
  for (std::size_t i = 0; i < n * dim; ++i) x.data()[i] = static_cast<double>(img[16 + i]) / 255.0;
  Labels y(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = lab[8 + i];
    max_label = std::max(max_label, y[i]);
  }
  return make_dataset(std::move(x), std::move(y), static_cast<std::size_t>(max_label) + 1,
                      images.stem().string());
}

void write_idx(const Dataset& ds, const std::filesystem::path& images,
               const std::filesystem::path& labels, std::size_t image_rows) {
  if (image_rows == 0 || ds.dim() % image_rows != 0) {
    throw InvalidInput("write_idx: feature dimension not divisible by image rows");
  }
  std::vector<char> pixels(ds.features.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const double v = ds.features.data()[i];
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidInput("write_idx: feature outside [0, 1]");
    pixels[i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
  }
  std::vector<char> label_bytes(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] < 0 || ds.labels[i] > 255) throw InvalidInput("write_idx: label exceeds u8");
    label_bytes[i] = static_cast<char>(static_cast<unsigned char>(ds.labels[i]));
  }

  std::ofstream img(images, std::ios::binary | std::ios::trunc);
  if (!img) throw InvalidInput("write_idx: cannot open " + images.string());
  put_be32(img, kIdxImageMagic);
  put_be32(img, static_cast<std::uint32_t>(ds.size()));
  put_be32(img, static_cast<std::uint32_t>(image_rows));
  put_be32(img, static_cast<std::uint32_t>(ds.dim() / image_rows));
  img.write(pixels.data(), static_cast<std::streamsize>(pixels.size()));

  std::ofstream lab(labels, std::ios::binary | std::ios::trunc);
  if (!lab) throw InvalidInput("write_idx: cannot open " + labels.string());
  put_be32(lab, kIdxLabelMagic);
  put_be32(lab, static_cast<std::uint32_t>(ds.size()));
  lab.write(label_bytes.data(), static_cast<std::streamsize>(label_bytes.size()));
  if (!img || !lab) throw InvalidInput("write_idx: write failed");
}

Dataset quantize_unit(const Dataset& ds) {
  const auto& v = ds.features.data();
  if (v.empty()) return ds;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return quantize_unit(ds, *lo, *hi);
}

Dataset quantize_unit(const Dataset& ds, double lo, double hi) {
  Dataset out = ds;
  const double span = hi - lo;
  for (double& x : out.features.data()) {
    const double unit = span > 0.0 ? std::clamp((x - lo) / span, 0.0, 1.0) : 0.0;
    x = static_cast<double>(std::lround(unit * 255.0)) / 255.0;
  }
  return out;
}

}  // namespace ncf
