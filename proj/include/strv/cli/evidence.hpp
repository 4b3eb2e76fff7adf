#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "strv/evalkit/evalkit.hpp"
#include "strv/radiomics/features.hpp"
#include "strv/setenc/setenc.hpp"

namespace strv::cli {

enum class Direction { High, Low, Neutral };

// High above z = +1, low below -1.
Direction direction_of(double z);
std::string direction_name(Direction d);
Direction parse_direction(const std::string& name);

struct EvidenceEntry {
  std::size_t rank = 0;  // 1-based, by descending |z|
  std::size_t index = 0;
  std::string roi;
  std::string family;
  std::string feature;
  double raw = 0.0;
  double z = 0.0;
  Direction direction = Direction::Neutral;

  friend bool operator==(const EvidenceEntry&, const EvidenceEntry&) = default;
};

struct EvidenceReport {
  std::string subject_id;
  int label = 0;
  int predicted = 0;
  std::vector<double> probabilities;
  std::vector<EvidenceEntry> entries;
  // Every ROI of the roster with its count of selected features.
  std::vector<std::pair<std::string, std::size_t>> roi_counts;

  friend bool operator==(const EvidenceReport&, const EvidenceReport&) = default;
};

// Entries are ordered by descending |z|, lower feature index on ties.
EvidenceReport make_evidence_report(const std::string& subject_id, int label, const evalkit::Prediction& prediction,
                                    const setenc::FeatureSet& set, std::span<const double> raw,
                                    std::span<const double> z, const radiomics::DescriptorTable& descriptors,
                                    const std::vector<std::string>& roi_names);

std::string evidence_json(const EvidenceReport& report);
EvidenceReport parse_evidence_json(const std::string& text);
// Aligned table followed by the ROI histogram.
std::string evidence_text(const EvidenceReport& report);

}  // namespace strv::cli
