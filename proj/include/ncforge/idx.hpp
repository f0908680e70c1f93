#pragma once

#include <cstdint>
#include <filesystem>

#include "ncforge/dataset.hpp"

namespace ncf {

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;  // u8, dims [n, rows, cols]
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;  // u8, dims [n]

// Reads an IDX image/label pair. Pixels are divided by 255; features are
// the row-major flattening of each image. The class count is max label + 1.
// Throws FormatError on wrong magic, truncated payload or count mismatch.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

// Writes ds as an IDX pair. Features must lie in [0, 1]; each value is
// stored as round(255 * x). Images are written with dims [n, rows, cols];
// rows defaults to 1 (cols = D). Throws InvalidInput if values are out of
// range or labels exceed 255.
void write_idx(const Dataset& ds, const std::filesystem::path& images,
               const std::filesystem::path& labels, std::size_t image_rows = 1);

// Maps features affinely onto [0, 1] using the global min/max and snaps
// them to the 8-bit grid k / 255, so that write_idx + load_idx reproduces
// the result bit-exactly.
Dataset quantize_unit(const Dataset& ds);
// Same with an explicit range (shared between splits); values outside
// [lo, hi] are clamped.
Dataset quantize_unit(const Dataset& ds, double lo, double hi);

}  // namespace ncf
