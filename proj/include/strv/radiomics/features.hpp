#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "strv/radiomics/volume.hpp"

namespace strv::radiomics {

enum class Family { FirstOrder = 0, Glcm = 1, Glrlm = 2, Gldm = 3 };

std::string_view family_name(Family f);
Family parse_family(std::string_view name);

inline constexpr int kDefaultBinCount = 32;
inline constexpr std::size_t kFirstOrderCount = 10;
inline constexpr std::size_t kGlcmCount = 6;
inline constexpr std::size_t kGlrlmCount = 4;
inline constexpr std::size_t kGldmCount = 3;
inline constexpr std::size_t kFeaturesPerRoi = kFirstOrderCount + kGlcmCount + kGlrlmCount + kGldmCount;
inline constexpr std::size_t kFamilyCount = 4;

// Fixed per-ROI roster, in extraction order.
const std::array<std::string_view, kFeaturesPerRoi>& roster_names();
Family roster_family(std::size_t within_roi);

struct FeatureDescriptor {
  std::size_t index = 0;
  std::string roi_name;
  Family family = Family::FirstOrder;
  std::string feature_name;
  // Small integer ids used by the set encoder's embedding tables.
  std::size_t roi_id = 0;
  std::size_t feature_id = 0;  // position within the per-ROI roster

  friend bool operator==(const FeatureDescriptor&, const FeatureDescriptor&) = default;
};

using DescriptorTable = std::vector<FeatureDescriptor>;

DescriptorTable make_descriptor_table(const std::vector<std::string>& roi_names);

// Gray levels for masked voxels, 0 outside the mask.
struct LabelMap {
  Dims dims;
  std::vector<int> labels;
  int bin_count = 0;
};

// One of the 13 unique neighbour offsets (first nonzero component positive).
struct Offset {
  int dz, dy, dx;
};
const std::array<Offset, 13>& unique_directions();

// Uniform bins over [min, max] of the masked intensities, labels in
// [1, bin_count]; a constant region maps to 1. Throws EmptyRoiError.
LabelMap discretize(const Volume& volume, const Mask& mask, int bin_count = kDefaultBinCount);

// Mean, Median, Minimum, Maximum, Range, Energy (sum of squares), Entropy
// (32-bin, log2), Variance (population), Skewness, Kurtosis (m4 / m2^2).
// A constant region yields Skewness 0 and Kurtosis 3.
std::array<double, kFirstOrderCount> first_order(const Volume& volume, const Mask& mask);

// Symmetric, normalized co-occurrence matrix for one offset. Returns an empty
// vector when the direction has no voxel pairs inside the mask.
std::vector<double> glcm_matrix(const LabelMap& labels, Offset offset);

struct GlcmResult {
  std::array<double, kGlcmCount> values{};
  // No direction had a voxel pair; values hold the flat-region convention.
  bool degenerate = false;
};

std::array<double, kGlcmCount> glcm_features_from_matrix(const std::vector<double>& p, int bin_count);
// JointEnergy, Contrast, Correlation, InverseDifferenceMoment, JointEntropy,
// Dissimilarity; per-direction features averaged over the directions that
// contain pairs.
GlcmResult glcm_features(const LabelMap& labels);

// Run-length matrix indexed [gray - 1][length - 1].
struct RunLengthMatrix {
  int levels = 0;
  std::size_t max_length = 0;
  std::vector<double> counts;  // levels x max_length

  double& at(int gray, std::size_t length) { return counts[(gray - 1) * max_length + (length - 1)]; }
  double at(int gray, std::size_t length) const {
    return counts[(gray - 1) * max_length + (length - 1)];
  }
};

RunLengthMatrix glrlm_matrix(const LabelMap& labels, Offset offset);
// GrayLevelVariance, ShortRunEmphasis, LongRunEmphasis, RunLengthNonUniformity.
std::array<double, kGlrlmCount> glrlm_features_from_matrix(const RunLengthMatrix& m);
// Matrices summed over the 13 directions before the features are taken.
std::array<double, kGlrlmCount> glrlm_features(const LabelMap& labels);

// Dependence matrix indexed [gray - 1][dependence]; dependence is the number
// of 26-neighbours inside the mask with an equal gray level (alpha = 0).
struct DependenceMatrix {
  int levels = 0;
  std::vector<double> counts;  // levels x 27

  double at(int gray, int dependence) const { return counts[(gray - 1) * 27 + dependence]; }
};

DependenceMatrix gldm_matrix(const LabelMap& labels);
// DependenceNonUniformity, SmallDependenceEmphasis, LargeDependenceEmphasis.
std::array<double, kGldmCount> gldm_features(const LabelMap& labels);

struct ExtractionConfig {
  int bin_count = kDefaultBinCount;
};

struct FeatureVector {
  std::vector<double> values;

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

// Pooled features ordered by (ROI order, family order, roster order);
// F = |ROIs| x 23. An empty ROI raises EmptyRoiError naming the ROI.
FeatureVector extract_subject(const Volume& volume, const RoiMaskSet& rois,
                              const ExtractionConfig& config = {});

// CSV with header index,roi,family,name,value.
std::string feature_table_csv(const FeatureVector& features, const DescriptorTable& table);
// JSON array of {index, roi, family, name}.
std::string descriptor_table_json(const DescriptorTable& table);
DescriptorTable parse_descriptor_table_json(const std::string& json);

}  // namespace strv::radiomics
