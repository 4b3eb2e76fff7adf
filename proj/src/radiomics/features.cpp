#include "strv/radiomics/features.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "strv/errors.hpp"

namespace strv::radiomics {

namespace {

constexpr std::array<std::string_view, kFeaturesPerRoi> kRoster = {
    "Mean",          "Median",           "Minimum",
    "Maximum",       "Range",            "Energy",
    "Entropy",       "Variance",         "Skewness",
    "Kurtosis",      "JointEnergy",      "Contrast",
    "Correlation",   "InverseDifferenceMoment", "JointEntropy",
    "Dissimilarity", "GrayLevelVariance", "ShortRunEmphasis",
    "LongRunEmphasis", "RunLengthNonUniformity", "DependenceNonUniformity",
    "SmallDependenceEmphasis", "LargeDependenceEmphasis",
};

constexpr std::array<Offset, 13> kDirections = {{
    {0, 0, 1},
    {0, 1, 0},
    {0, 1, 1},
    {0, 1, -1},
    {1, 0, 0},
    {1, 0, 1},
    {1, 0, -1},
    {1, 1, 0},
    {1, -1, 0},
    {1, 1, 1},
    {1, 1, -1},
    {1, -1, 1},
    {1, -1, -1},
}};

int bin_of(double v, double lo, double hi, int bins) {
  if (hi <= lo) return 1;
  const int b = static_cast<int>(std::floor((v - lo) / (hi - lo) * bins)) + 1;
  return std::clamp(b, 1, bins);
}

void require_nonempty(const Mask& mask) {
  if (mask.bits.empty() || mask.empty()) throw EmptyRoiError("<unnamed>");
}

// Coordinates of the label map's voxel (z, y, x) shifted by an offset, or -1
// when the shifted voxel falls outside the map or outside the mask.
long neighbour(const LabelMap& m, std::size_t z, std::size_t y, std::size_t x, int dz, int dy, int dx) {
  const long nz = static_cast<long>(z) + dz, ny = static_cast<long>(y) + dy, nx = static_cast<long>(x) + dx;
  if (!m.dims.contains(nz, ny, nx)) return -1;
  const auto idx = m.dims.index(nz, ny, nx);
  return m.labels[idx] > 0 ? static_cast<long>(idx) : -1;
}

void check_labels(const LabelMap& m) {
  if (m.bin_count < 1 || m.labels.size() != m.dims.count()) {
    throw ContractViolation("label map is inconsistent with its dims");
  }
  if (std::none_of(m.labels.begin(), m.labels.end(), [](int l) { return l > 0; })) {
    throw EmptyRoiError("<unnamed>");
  }
}

}  // namespace

std::string_view family_name(Family f) {
  switch (f) {
    case Family::FirstOrder: return "FirstOrder";
    case Family::Glcm: return "GLCM";
    case Family::Glrlm: return "GLRLM";
    case Family::Gldm: return "GLDM";
  }
  throw ContractViolation("unknown feature family");
}

Family parse_family(std::string_view name) {
  for (Family f : {Family::FirstOrder, Family::Glcm, Family::Glrlm, Family::Gldm}) {
    if (family_name(f) == name) return f;
  }
  throw FormatError("unknown feature family: " + std::string(name));
}

const std::array<std::string_view, kFeaturesPerRoi>& roster_names() { return kRoster; }

Family roster_family(std::size_t within_roi) {
  if (within_roi < kFirstOrderCount) return Family::FirstOrder;
  if (within_roi < kFirstOrderCount + kGlcmCount) return Family::Glcm;
  if (within_roi < kFirstOrderCount + kGlcmCount + kGlrlmCount) return Family::Glrlm;
  if (within_roi < kFeaturesPerRoi) return Family::Gldm;
  throw ContractViolation("roster position out of range");
}

DescriptorTable make_descriptor_table(const std::vector<std::string>& roi_names) {
  std::set<std::string> seen;
  DescriptorTable table;
  table.reserve(roi_names.size() * kFeaturesPerRoi);
  for (std::size_t r = 0; r < roi_names.size(); ++r) {
    if (!seen.insert(roi_names[r]).second) throw ContractViolation("duplicate ROI name: " + roi_names[r]);
    for (std::size_t t = 0; t < kFeaturesPerRoi; ++t) {
      table.push_back({table.size(), roi_names[r], roster_family(t), std::string(kRoster[t]), r, t});
    }
  }
  return table;
}

const std::array<Offset, 13>& unique_directions() { return kDirections; }

LabelMap discretize(const Volume& volume, const Mask& mask, int bin_count) {
  if (bin_count < 2) throw ContractViolation("bin_count must be at least 2");
  if (mask.dims != volume.dims || volume.voxels.size() != volume.dims.count()) {
    throw ContractViolation("mask dims differ from volume dims");
  }
  require_nonempty(mask);

  // Crop to the mask's bounding box; everything outside it is unmasked anyway.
  const Dims& d = volume.dims;
  std::size_t lo[3] = {d.d, d.h, d.w}, hi[3] = {0, 0, 0};
  double vmin = std::numeric_limits<double>::infinity(), vmax = -vmin;
  for (std::size_t z = 0; z < d.d; ++z)
    for (std::size_t y = 0; y < d.h; ++y)
      for (std::size_t x = 0; x < d.w; ++x) {
        const auto i = d.index(z, y, x);
        if (!mask.test(i)) continue;
        const std::size_t c[3] = {z, y, x};
        for (int a = 0; a < 3; ++a) {
          lo[a] = std::min(lo[a], c[a]);
          hi[a] = std::max(hi[a], c[a]);
        }
        vmin = std::min(vmin, static_cast<double>(volume.voxels[i]));
        vmax = std::max(vmax, static_cast<double>(volume.voxels[i]));
      }

  LabelMap out;
  out.bin_count = bin_count;
  out.dims = Dims{static_cast<std::uint32_t>(hi[0] - lo[0] + 1), static_cast<std::uint32_t>(hi[1] - lo[1] + 1),
                  static_cast<std::uint32_t>(hi[2] - lo[2] + 1)};
  out.labels.assign(out.dims.count(), 0);
  for (std::size_t z = 0; z < out.dims.d; ++z)
    for (std::size_t y = 0; y < out.dims.h; ++y)
      for (std::size_t x = 0; x < out.dims.w; ++x) {
        const auto i = d.index(z + lo[0], y + lo[1], x + lo[2]);
        if (mask.test(i)) out.labels[out.dims.index(z, y, x)] = bin_of(volume.voxels[i], vmin, vmax, bin_count);
      }
  return out;
}

std::array<double, kFirstOrderCount> first_order(const Volume& volume, const Mask& mask) {
  if (mask.dims != volume.dims) throw ContractViolation("mask dims differ from volume dims");
  require_nonempty(mask);
  std::vector<double> v;
  for (std::size_t i = 0; i < volume.voxels.size(); ++i) {
    if (mask.test(i)) v.push_back(volume.voxels[i]);
  }
  const auto n = static_cast<double>(v.size());
  const auto [mn_it, mx_it] = std::minmax_element(v.begin(), v.end());
  const double mn = *mn_it, mx = *mx_it;

  double sum = 0.0, energy = 0.0;
  for (double x : v) {
    sum += x;
    energy += x * x;
  }
  const double mean = sum / n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double x : v) {
    const double dv = x - mean;
    m2 += dv * dv;
    m3 += dv * dv * dv;
    m4 += dv * dv * dv * dv;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  const bool flat = mx == mn || m2 <= 0.0;
  const double skew = flat ? 0.0 : m3 / std::pow(m2, 1.5);
  const double kurt = flat ? 3.0 : m4 / (m2 * m2);

  constexpr int kEntropyBins = 32;
  std::array<double, kEntropyBins> hist{};
  for (double x : v) hist[bin_of(x, mn, mx, kEntropyBins) - 1] += 1.0;
  double entropy = 0.0;
  for (double c : hist) {
    if (c > 0) entropy -= (c / n) * std::log2(c / n);
  }

  std::vector<double> sorted = v;
  const std::size_t mid = sorted.size() / 2;
  std::nth_element(sorted.begin(), sorted.begin() + mid, sorted.end());
  double median = sorted[mid];
  if (sorted.size() % 2 == 0) {
    median = 0.5 * (median + *std::max_element(sorted.begin(), sorted.begin() + mid));
  }

  return {mean, median, mn, mx, mx - mn, energy, entropy, flat ? 0.0 : m2, skew, kurt};
}

std::vector<double> glcm_matrix(const LabelMap& labels, Offset o) {
  check_labels(labels);
  const int n = labels.bin_count;
  std::vector<double> p(static_cast<std::size_t>(n) * n, 0.0);
  double total = 0.0;
  const Dims& d = labels.dims;
  for (std::size_t z = 0; z < d.d; ++z)
    for (std::size_t y = 0; y < d.h; ++y)
      for (std::size_t x = 0; x < d.w; ++x) {
        const int a = labels.labels[d.index(z, y, x)];
        if (a == 0) continue;
        const long j = neighbour(labels, z, y, x, o.dz, o.dy, o.dx);
        if (j < 0) continue;
        const int b = labels.labels[j];
        p[(a - 1) * n + (b - 1)] += 1.0;
        p[(b - 1) * n + (a - 1)] += 1.0;
        total += 2.0;
      }
  if (total == 0.0) return {};
  for (double& v : p) v /= total;
  return p;
}

std::array<double, kGlcmCount> glcm_features_from_matrix(const std::vector<double>& p, int n) {
  if (p.size() != static_cast<std::size_t>(n) * n) throw ContractViolation("GLCM size mismatch");
  double mu = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) mu += (i + 1) * p[i * n + j];
  double var = 0.0, cross = 0.0;
  double energy = 0.0, contrast = 0.0, idm = 0.0, entropy = 0.0, dissim = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double v = p[i * n + j];
      if (v == 0.0) continue;
      const double di = (i + 1) - mu, dj = (j + 1) - mu;
      const double diff = i - j;
      var += di * di * v;
      cross += di * dj * v;
      energy += v * v;
      contrast += diff * diff * v;
      idm += v / (1.0 + diff * diff);
      entropy -= v * std::log2(v);
      dissim += std::abs(diff) * v;
    }
  // Symmetric matrix: both marginals share mean and variance.
  const double corr = var > 1e-15 ? std::clamp(cross / var, -1.0, 1.0) : 1.0;
  return {energy, contrast, corr, idm, entropy, dissim};
}

GlcmResult glcm_features(const LabelMap& labels) {
  GlcmResult out;
  std::size_t used = 0;
  for (const auto& o : kDirections) {
    const auto p = glcm_matrix(labels, o);
    if (p.empty()) continue;
    const auto f = glcm_features_from_matrix(p, labels.bin_count);
    for (std::size_t k = 0; k < kGlcmCount; ++k) out.values[k] += f[k];
    ++used;
  }
  if (used == 0) {
    out.degenerate = true;
    out.values = {1.0, 0.0, 1.0, 1.0, 0.0, 0.0};
    return out;
  }
  for (double& v : out.values) v /= static_cast<double>(used);
  return out;
}

RunLengthMatrix glrlm_matrix(const LabelMap& labels, Offset o) {
  check_labels(labels);
  const Dims& d = labels.dims;
  RunLengthMatrix m;
  m.levels = labels.bin_count;
  m.max_length = std::max({d.d, d.h, d.w});
  m.counts.assign(static_cast<std::size_t>(m.levels) * m.max_length, 0.0);
  for (std::size_t z = 0; z < d.d; ++z)
    for (std::size_t y = 0; y < d.h; ++y)
      for (std::size_t x = 0; x < d.w; ++x) {
        const int g = labels.labels[d.index(z, y, x)];
        if (g == 0) continue;
        // Only start a run where the predecessor does not continue it.
        const long prev = neighbour(labels, z, y, x, -o.dz, -o.dy, -o.dx);
        if (prev >= 0 && labels.labels[prev] == g) continue;
        std::size_t len = 1;
        long cz = static_cast<long>(z), cy = static_cast<long>(y), cx = static_cast<long>(x);
        for (;;) {
          const long next = neighbour(labels, cz, cy, cx, o.dz, o.dy, o.dx);
          if (next < 0 || labels.labels[next] != g) break;
          cz += o.dz;
          cy += o.dy;
          cx += o.dx;
          ++len;
        }
        m.at(g, len) += 1.0;
      }
  return m;
}

std::array<double, kGlrlmCount> glrlm_features_from_matrix(const RunLengthMatrix& m) {
  double runs = 0.0;
  for (double c : m.counts) runs += c;
  if (runs == 0.0) throw ContractViolation("run-length matrix is empty");
  double mu = 0.0, sre = 0.0, lre = 0.0;
  std::vector<double> per_length(m.max_length, 0.0);
  for (int g = 1; g <= m.levels; ++g)
    for (std::size_t l = 1; l <= m.max_length; ++l) {
      const double c = m.at(g, l);
      if (c == 0.0) continue;
      const double len = static_cast<double>(l);
      mu += g * c / runs;
      sre += c / (len * len);
      lre += c * len * len;
      per_length[l - 1] += c;
    }
  double glv = 0.0;
  for (int g = 1; g <= m.levels; ++g)
    for (std::size_t l = 1; l <= m.max_length; ++l) {
      const double c = m.at(g, l);
      if (c != 0.0) glv += (c / runs) * (g - mu) * (g - mu);
    }
  double rln = 0.0;
  for (double s : per_length) rln += s * s;
  return {glv, sre / runs, lre / runs, rln / runs};
}

std::array<double, kGlrlmCount> glrlm_features(const LabelMap& labels) {
  RunLengthMatrix total;
  for (const auto& o : kDirections) {
    auto m = glrlm_matrix(labels, o);
    if (total.counts.empty()) {
      total = std::move(m);
    } else {
      for (std::size_t i = 0; i < m.counts.size(); ++i) total.counts[i] += m.counts[i];
    }
  }
  return glrlm_features_from_matrix(total);
}

DependenceMatrix gldm_matrix(const LabelMap& labels) {
  check_labels(labels);
  const Dims& d = labels.dims;
  DependenceMatrix m;
  m.levels = labels.bin_count;
  m.counts.assign(static_cast<std::size_t>(m.levels) * 27, 0.0);
  for (std::size_t z = 0; z < d.d; ++z)
    for (std::size_t y = 0; y < d.h; ++y)
      for (std::size_t x = 0; x < d.w; ++x) {
        const int g = labels.labels[d.index(z, y, x)];
        if (g == 0) continue;
        int dep = 0;
        for (int dz = -1; dz <= 1; ++dz)
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              if (dz == 0 && dy == 0 && dx == 0) continue;
              const long j = neighbour(labels, z, y, x, dz, dy, dx);
              if (j >= 0 && labels.labels[j] == g) ++dep;
            }
        m.counts[(g - 1) * 27 + dep] += 1.0;
      }
  return m;
}

std::array<double, kGldmCount> gldm_features(const LabelMap& labels) {
  const auto m = gldm_matrix(labels);
  double nz = 0.0, sde = 0.0, lde = 0.0;
  std::array<double, 27> per_dep{};
  for (int g = 1; g <= m.levels; ++g)
    for (int k = 0; k < 27; ++k) {
      const double c = m.at(g, k);
      if (c == 0.0) continue;
      const double j = k + 1.0;
      nz += c;
      sde += c / (j * j);
      lde += c * j * j;
      per_dep[k] += c;
    }
  double dnu = 0.0;
  for (double s : per_dep) dnu += s * s;
  return {dnu / nz, sde / nz, lde / nz};
}

FeatureVector extract_subject(const Volume& volume, const RoiMaskSet& rois, const ExtractionConfig& config) {
  volume.validate();
  rois.validate(volume.dims);
  FeatureVector out;
  out.values.reserve(rois.size() * kFeaturesPerRoi);
  for (std::size_t r = 0; r < rois.size(); ++r) {
    const Mask& mask = rois.masks[r];
    if (mask.empty()) throw EmptyRoiError(rois.names[r]);
    const auto fo = first_order(volume, mask);
    const auto labels = discretize(volume, mask, config.bin_count);
    const auto glcm = glcm_features(labels);
    const auto glrlm = glrlm_features(labels);
    const auto gldm = gldm_features(labels);
    out.values.insert(out.values.end(), fo.begin(), fo.end());
    out.values.insert(out.values.end(), glcm.values.begin(), glcm.values.end());
    out.values.insert(out.values.end(), glrlm.begin(), glrlm.end());
    out.values.insert(out.values.end(), gldm.begin(), gldm.end());
  }
  for (double v : out.values) {
    if (!std::isfinite(v)) throw NumericError("extraction produced a non-finite feature");
  }
  return out;
}

std::string feature_table_csv(const FeatureVector& features, const DescriptorTable& table) {
  if (features.values.size() != table.size()) {
    throw ContractViolation("feature vector and descriptor table differ in length");
  }
  std::ostringstream out;
  out.precision(17);
  out << "index,roi,family,name,value\n";
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& d = table[i];
    out << d.index << ',' << d.roi_name << ',' << family_name(d.family) << ',' << d.feature_name << ','
        << features.values[i] << '\n';
  }
  return out.str();
}

std::string descriptor_table_json(const DescriptorTable& table) {
  auto arr = nlohmann::json::array();
  for (const auto& d : table) {
    arr.push_back({{"index", d.index},
                   {"roi", d.roi_name},
                   {"family", family_name(d.family)},
                   {"name", d.feature_name},
                   {"roi_id", d.roi_id},
                   {"feature_id", d.feature_id}});
  }
  return arr.dump(1);
}

DescriptorTable parse_descriptor_table_json(const std::string& text) {
  DescriptorTable table;
  try {
    const auto arr = nlohmann::json::parse(text);
    if (!arr.is_array()) throw FormatError("descriptor table must be a JSON array");
    for (const auto& e : arr) {
      FeatureDescriptor d;
      d.index = e.at("index").get<std::size_t>();
      d.roi_name = e.at("roi").get<std::string>();
      d.family = parse_family(e.at("family").get<std::string>());
      d.feature_name = e.at("name").get<std::string>();
      d.roi_id = e.at("roi_id").get<std::size_t>();
      d.feature_id = e.at("feature_id").get<std::size_t>();
      if (d.index != table.size()) throw FormatError("descriptor indices are not contiguous");
      table.push_back(std::move(d));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed descriptor table: ") + e.what());
  }
  return table;
}

}  // namespace strv::radiomics
