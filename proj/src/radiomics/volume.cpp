#include "strv/radiomics/volume.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "strv/errors.hpp"

namespace strv::radiomics {

std::string to_string(const Dims& dims) {
  return std::to_string(dims.d) + "x" + std::to_string(dims.h) + "x" + std::to_string(dims.w);
}

Dims parse_dims(const std::string& text) {
  Dims dims;
  char x1 = 0, x2 = 0;
  std::istringstream in(text);
  long d = 0, h = 0, w = 0;
  if (!(in >> d >> x1 >> h >> x2 >> w) || x1 != 'x' || x2 != 'x' || d <= 0 || h <= 0 || w <= 0 ||
      !in.eof()) {
    throw ConfigError("dims must look like DxHxW with positive integers, got '" + text + "'");
  }
  dims.d = static_cast<std::uint32_t>(d);
  dims.h = static_cast<std::uint32_t>(h);
  dims.w = static_cast<std::uint32_t>(w);
  return dims;
}

Volume Volume::zeros(Dims dims) { return Volume{dims, std::vector<float>(dims.count(), 0.0f)}; }

void Volume::validate() const {
  if (dims.count() == 0 || voxels.size() != dims.count()) {
    throw ContractViolation("volume voxel count does not match dims " + to_string(dims));
  }
  for (float v : voxels) {
    if (!std::isfinite(v)) throw NumericError("volume contains a non-finite intensity");
  }
}

Mask Mask::zeros(Dims dims) { return Mask{dims, std::vector<std::uint8_t>(dims.count(), 0)}; }

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](auto b) { return b != 0; }));
}

void Mask::validate() const {
  if (bits.size() != dims.count()) throw ContractViolation("mask size does not match dims");
  for (auto b : bits) {
    if (b > 1) throw ContractViolation("mask values must be 0 or 1");
  }
}

void RoiMaskSet::add(std::string name, Mask mask) {
  names.push_back(std::move(name));
  masks.push_back(std::move(mask));
}

void RoiMaskSet::validate(const Dims& dims) const {
  if (names.empty()) throw ContractViolation("ROI mask set is empty");
  if (names.size() != masks.size()) throw ContractViolation("ROI names and masks differ in count");
  std::set<std::string> seen;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (!seen.insert(names[i]).second) throw ContractViolation("duplicate ROI name: " + names[i]);
    if (masks[i].dims != dims) throw ContractViolation("mask dims differ from volume for ROI " + names[i]);
    masks[i].validate();
  }
}

RoiMaskSet grid_rois(const Dims& dims) {
  const std::uint32_t full[3] = {dims.d, dims.h, dims.w};
  const double fraction[3] = {0.5, 0.3, 0.5};
  std::uint32_t start[3], half[3];
  for (int a = 0; a < 3; ++a) {
    auto extent = static_cast<std::uint32_t>(std::floor(fraction[a] * full[a]));
    extent -= extent % 2;
    half[a] = extent / 2;
    if (half[a] == 0) {
      throw ContractViolation("grid_rois: dims " + to_string(dims) + " too small for a 2x2x2 crop grid");
    }
    start[a] = static_cast<std::uint32_t>(std::floor(full[a] / 2.0 - extent / 2.0));
  }
  RoiMaskSet out;
  for (int bz = 0; bz < 2; ++bz) {
    for (int by = 0; by < 2; ++by) {
      for (int bx = 0; bx < 2; ++bx) {
        Mask m = Mask::zeros(dims);
        const std::uint32_t z0 = start[0] + bz * half[0];
        const std::uint32_t y0 = start[1] + by * half[1];
        const std::uint32_t x0 = start[2] + bx * half[2];
        for (std::uint32_t z = z0; z < z0 + half[0]; ++z)
          for (std::uint32_t y = y0; y < y0 + half[1]; ++y)
            for (std::uint32_t x = x0; x < x0 + half[2]; ++x) m.bits[dims.index(z, y, x)] = 1;
        out.add("grid_" + std::to_string(bz) + std::to_string(by) + std::to_string(bx), std::move(m));
      }
    }
  }
  return out;
}

Mask ellipsoid_roi(const Dims& dims, double rz, double ry, double rx) {
  Mask m = Mask::zeros(dims);
  const double cz = (dims.d - 1) / 2.0, cy = (dims.h - 1) / 2.0, cx = (dims.w - 1) / 2.0;
  const double az = rz * dims.d, ay = ry * dims.h, ax = rx * dims.w;
  for (std::uint32_t z = 0; z < dims.d; ++z)
    for (std::uint32_t y = 0; y < dims.h; ++y)
      for (std::uint32_t x = 0; x < dims.w; ++x) {
        const double dz = (z - cz) / az, dy = (y - cy) / ay, dx = (x - cx) / ax;
        if (dz * dz + dy * dy + dx * dx <= 1.0) m.bits[dims.index(z, y, x)] = 1;
      }
  return m;
}

}  // namespace strv::radiomics
