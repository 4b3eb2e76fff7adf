#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "strv/numkit/random.hpp"
#include "strv/numkit/tensor.hpp"
#include "strv/radiomics/features.hpp"
#include "strv/radiomics/volume.hpp"

namespace strv::cohort {

using radiomics::Dims;
using radiomics::Mask;
using radiomics::RoiMaskSet;
using radiomics::Volume;

enum class Effect { IntensityShift, NoiseBoost, CheckerTexture };

std::string effect_name(Effect e);
Effect parse_effect(const std::string& name);

struct Plant {
  int label = 0;
  std::string roi;
  Effect effect = Effect::IntensityShift;
  double magnitude = 0.0;

  friend bool operator==(const Plant&, const Plant&) = default;
};

using PlantSpec = std::vector<Plant>;

// Class 1 gets a brighter core, class 2 a checker texture in one grid cell;
// class 0 is background only.
PlantSpec default_plant_spec(int num_classes);

enum class Split : std::uint8_t { Train = 0, Validation = 1 };

struct SubjectRecord {
  std::string subject_id;
  Volume volume;
  RoiMaskSet masks;
  int label = 0;
  std::optional<radiomics::FeatureVector> features;  // raw, un-normalized

  friend bool operator==(const SubjectRecord&, const SubjectRecord&) = default;
};

struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;

  bool empty() const { return mean.empty(); }
  friend bool operator==(const NormStats&, const NormStats&) = default;
};

struct CohortManifest {
  int num_classes = 0;
  Dims dims;
  std::uint64_t seed = 0;
  PlantSpec plants;
  std::vector<std::string> roi_names;
  radiomics::DescriptorTable descriptors;
  std::vector<Split> splits;  // per subject, aligned with Cohort::subjects
  NormStats norm;
  // Feature indices that carry planted signal, ascending.
  std::vector<std::size_t> informative;

  std::size_t pool_size() const { return descriptors.size(); }
  friend bool operator==(const CohortManifest&, const CohortManifest&) = default;
};

struct Cohort {
  CohortManifest manifest;
  std::vector<SubjectRecord> subjects;

  std::size_t size() const { return subjects.size(); }
  std::vector<int> labels() const;
  // Subject positions in the given split, ascending.
  std::vector<std::size_t> indices(Split s) const;
  friend bool operator==(const Cohort&, const Cohort&) = default;
};

struct GenerateOptions {
  std::size_t n_subjects = 120;
  Dims dims{16, 32, 32};
  int num_classes = 3;
  std::optional<PlantSpec> plants;  // default_plant_spec(num_classes) when unset
  // Per-subject plant strength is magnitude * U(1 - jitter, 1 + jitter).
  double magnitude_jitter = 0.5;
  std::uint64_t seed = 0;
  int smoothing_passes = 2;  // box-filter passes shaping the background
};

// ROI set shared by all generated subjects: an anatomical "core" ellipsoid
// followed by the eight grid cells.
RoiMaskSet cohort_rois(const Dims& dims);

// Volumes are unit-variance smoothed noise plus the planted effects inside the
// named ROIs; labels are i mod C.
Cohort generate_cohort(const GenerateOptions& options);

// Ground-truth informative indices for a plant spec: IntensityShift marks the
// ROI's first-order block, CheckerTexture its texture blocks, NoiseBoost both.
std::vector<std::size_t> informative_indices(const PlantSpec& plants, const radiomics::DescriptorTable& table);

// Populates raw features for every subject and the descriptor table.
void extract_features(Cohort& cohort, const radiomics::ExtractionConfig& config = {});

// Stratified assignment; train/validation fractions must sum to 1.
void split(Cohort& cohort, double train_fraction, double validation_fraction, std::uint64_t seed);

// Population statistics over the training split; stored in the manifest.
void compute_norm_stats(Cohort& cohort);

// z = clamp((v - mean) / std, -8, 8); std < 1e-12 gives 0.
std::vector<double> normalize(const radiomics::FeatureVector& raw, const NormStats& stats);

// N x F matrix of normalized features for every subject.
numkit::Tensor normalized_matrix(const Cohort& cohort);

// Normalized, split view of a cohort; the common input of training and
// evaluation.
struct Dataset {
  numkit::Tensor z;  // N x F, normalized
  std::vector<int> labels;
  int num_classes = 0;
  radiomics::DescriptorTable descriptors;
  std::vector<std::string> ids;
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> informative;

  std::size_t size() const { return labels.size(); }
  std::size_t pool_size() const { return descriptors.size(); }
};

// Requires extracted features, a split and normalization statistics.
Dataset make_dataset(const Cohort& cohort);

struct SupportQuery {
  std::vector<std::size_t> support;
  std::vector<std::size_t> query;
};

// Disjoint, class-stratified draw from `pool` (subject positions with the
// given labels) with at least one member of every class in each part.
// When n_sup + n_qry equals the pool size the two parts partition it.
SupportQuery draw_support_query(const std::vector<std::size_t>& pool, const std::vector<int>& labels,
                                int num_classes, std::size_t n_sup, std::size_t n_qry, numkit::Rng& rng);

// Replaces raw features with a feature-level construction used to study
// redundancy: one strong feature duplicated with small noise plus a weak
// complementary feature, every other feature pure noise.
struct CloneSpec {
  std::size_t strong = 0;
  std::vector<std::size_t> clones;
  std::size_t weak = 0;
  double strong_gap = 6.0;
  double weak_gap = 2.2;
  double clone_noise = 0.1;
};

CloneSpec default_clone_spec(std::size_t pool_size);
void apply_clone_transform(Cohort& cohort, const CloneSpec& spec, std::uint64_t seed);

// Persistence: <dir>/manifest.json, <dir>/volumes/<id>.vol,
// <dir>/masks/<id>/<roi>.msk.
void save_cohort(const Cohort& cohort, const std::string& dir);
Cohort load_cohort(const std::string& dir);

void write_volume(const std::string& path, const Volume& volume);
Volume read_volume(const std::string& path);
void write_mask(const std::string& path, const Mask& mask);
Mask read_mask(const std::string& path);

inline constexpr std::uint32_t kVolumeVersion = 1;
inline constexpr std::uint32_t kManifestVersion = 1;

}  // namespace strv::cohort
