#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace strv::radiomics {

// Volume extents in (depth, height, width) order; voxels are stored
// depth-major: index = (z * H + y) * W + x.
struct Dims {
  std::uint32_t d = 0;
  std::uint32_t h = 0;
  std::uint32_t w = 0;

  std::size_t count() const { return std::size_t{d} * h * w; }
  std::size_t index(std::size_t z, std::size_t y, std::size_t x) const { return (z * h + y) * w + x; }
  bool contains(long z, long y, long x) const {
    return z >= 0 && y >= 0 && x >= 0 && z < static_cast<long>(d) && y < static_cast<long>(h) &&
           x < static_cast<long>(w);
  }
  friend bool operator==(const Dims&, const Dims&) = default;
};

std::string to_string(const Dims& dims);  // "DxHxW"
Dims parse_dims(const std::string& text);  // inverse of to_string

struct Volume {
  Dims dims;
  std::vector<float> voxels;

  static Volume zeros(Dims dims);
  float& at(std::size_t z, std::size_t y, std::size_t x) { return voxels[dims.index(z, y, x)]; }
  float at(std::size_t z, std::size_t y, std::size_t x) const { return voxels[dims.index(z, y, x)]; }
  // Throws ContractViolation on size mismatch, NumericError on non-finite voxels.
  void validate() const;

  friend bool operator==(const Volume&, const Volume&) = default;
};

struct Mask {
  Dims dims;
  std::vector<std::uint8_t> bits;

  static Mask zeros(Dims dims);
  bool test(std::size_t i) const { return bits[i] != 0; }
  std::size_t count() const;
  bool empty() const { return count() == 0; }
  void validate() const;

  friend bool operator==(const Mask&, const Mask&) = default;
};

// Ordered, uniquely named ROI masks sharing one geometry.
struct RoiMaskSet {
  std::vector<std::string> names;
  std::vector<Mask> masks;

  std::size_t size() const { return names.size(); }
  void add(std::string name, Mask mask);
  // Checks names are unique, there is at least one ROI, and every mask is
  // binary with the given dims.
  void validate(const Dims& dims) const;

  friend bool operator==(const RoiMaskSet&, const RoiMaskSet&) = default;
};

// 2x2x2 partition of the centred crop spanning 50% depth, 30% height and 50%
// width. Each extent is floor(fraction * dim) rounded down to an even number
// and starts at floor(dim / 2 - extent / 2). Cells are named
// "grid_<z><y><x>" with bits in (depth, height, width) order.
RoiMaskSet grid_rois(const Dims& dims);

// Solid axis-aligned ellipsoid centred in the volume; radii are fractions of
// each extent.
Mask ellipsoid_roi(const Dims& dims, double rz, double ry, double rx);

}  // namespace strv::radiomics
