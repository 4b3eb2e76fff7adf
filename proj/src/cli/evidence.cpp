#include "strv/cli/evidence.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <json.hpp>
#include <sstream>

#include "strv/errors.hpp"

namespace strv::cli {

using json = nlohmann::json;

Direction direction_of(double z) {
  if (z > 1.0) return Direction::High;
  if (z < -1.0) return Direction::Low;
  return Direction::Neutral;
}

std::string direction_name(Direction d) {
  switch (d) {
    case Direction::High:
      return "high";
    case Direction::Low:
      return "low";
    case Direction::Neutral:
      return "neutral";
  }
  return "neutral";
}

Direction parse_direction(const std::string& name) {
  if (name == "high") return Direction::High;
  if (name == "low") return Direction::Low;
  if (name == "neutral") return Direction::Neutral;
  throw FormatError("unknown direction: " + name);
}

EvidenceReport make_evidence_report(const std::string& subject_id, int label, const evalkit::Prediction& prediction,
                                    const setenc::FeatureSet& set, std::span<const double> raw,
                                    std::span<const double> z, const radiomics::DescriptorTable& descriptors,
                                    const std::vector<std::string>& roi_names) {
  if (raw.size() != descriptors.size() || z.size() != descriptors.size()) {
    throw ContractViolation("feature rows do not match the descriptor table");
  }
  EvidenceReport r;
  r.subject_id = subject_id;
  r.label = label;
  r.predicted = prediction.predicted;
  r.probabilities = prediction.probabilities;

  auto order = set;
  for (auto f : order) {
    if (f >= descriptors.size()) throw ContractViolation("feature index out of range");
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double za = std::abs(z[a]), zb = std::abs(z[b]);
    return za != zb ? za > zb : a < b;
  });
  for (std::size_t j = 0; j < order.size(); ++j) {
    const auto& d = descriptors[order[j]];
    r.entries.push_back({j + 1, d.index, d.roi_name, std::string(radiomics::family_name(d.family)), d.feature_name,
                         raw[d.index], z[d.index], direction_of(z[d.index])});
  }
  for (const auto& roi : roi_names) {
    const auto n = std::count_if(r.entries.begin(), r.entries.end(), [&](const auto& e) { return e.roi == roi; });
    r.roi_counts.emplace_back(roi, static_cast<std::size_t>(n));
  }
  return r;
}

std::string evidence_json(const EvidenceReport& r) {
  json j;
  j["subject_id"] = r.subject_id;
  j["label"] = r.label;
  j["predicted"] = r.predicted;
  j["probabilities"] = r.probabilities;
  j["k"] = r.entries.size();
  j["entries"] = json::array();
  for (const auto& e : r.entries) {
    j["entries"].push_back({{"rank", e.rank},
                            {"index", e.index},
                            {"roi", e.roi},
                            {"family", e.family},
                            {"feature", e.feature},
                            {"raw", e.raw},
                            {"z", e.z},
                            {"direction", direction_name(e.direction)}});
  }
  j["roi_counts"] = json::array();
  for (const auto& [roi, n] : r.roi_counts) j["roi_counts"].push_back({{"roi", roi}, {"count", n}});
  return j.dump(1);
}

EvidenceReport parse_evidence_json(const std::string& text) {
  try {
    const auto j = json::parse(text);
    EvidenceReport r;
    r.subject_id = j.at("subject_id").get<std::string>();
    r.label = j.at("label").get<int>();
    r.predicted = j.at("predicted").get<int>();
    r.probabilities = j.at("probabilities").get<std::vector<double>>();
    for (const auto& e : j.at("entries")) {
      r.entries.push_back({e.at("rank").get<std::size_t>(), e.at("index").get<std::size_t>(),
                           e.at("roi").get<std::string>(), e.at("family").get<std::string>(),
                           e.at("feature").get<std::string>(), e.at("raw").get<double>(), e.at("z").get<double>(),
                           parse_direction(e.at("direction").get<std::string>())});
    }
    for (const auto& c : j.at("roi_counts")) {
      r.roi_counts.emplace_back(c.at("roi").get<std::string>(), c.at("count").get<std::size_t>());
    }
    if (j.at("k").get<std::size_t>() != r.entries.size()) throw FormatError("evidence entry count does not match k");
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed evidence report: ") + e.what());
  }
}

std::string evidence_text(const EvidenceReport& r) {
  std::ostringstream out;
  out << "subject " << r.subject_id << "  label " << r.label << "  predicted " << r.predicted << "  p = [";
  out << std::fixed << std::setprecision(3);
  for (std::size_t c = 0; c < r.probabilities.size(); ++c) out << (c ? ", " : "") << r.probabilities[c];
  out << "]\n\n";

  std::size_t roi_w = 3, fam_w = 6, feat_w = 7;
  for (const auto& e : r.entries) {
    roi_w = std::max(roi_w, e.roi.size());
    fam_w = std::max(fam_w, e.family.size());
    feat_w = std::max(feat_w, e.feature.size());
  }
  out << std::left << std::setw(5) << "rank" << std::setw(7) << "index" << std::setw(static_cast<int>(roi_w) + 2)
      << "roi" << std::setw(static_cast<int>(fam_w) + 2) << "family" << std::setw(static_cast<int>(feat_w) + 2)
      << "feature" << std::right << std::setw(14) << "raw" << std::setw(9) << "z" << "  direction\n";
  for (const auto& e : r.entries) {
    out << std::left << std::setw(5) << e.rank << std::setw(7) << e.index << std::setw(static_cast<int>(roi_w) + 2)
        << e.roi << std::setw(static_cast<int>(fam_w) + 2) << e.family << std::setw(static_cast<int>(feat_w) + 2)
        << e.feature << std::right << std::setw(14) << e.raw << std::setw(9) << e.z << "  "
        << direction_name(e.direction) << '\n';
  }
  out << "\nselected features per ROI\n";
  for (const auto& [roi, n] : r.roi_counts) {
    out << "  " << std::left << std::setw(static_cast<int>(roi_w) + 2) << roi << std::right << std::setw(3) << n
        << "  " << std::string(n, '#') << '\n';
  }
  return out.str();
}

}  // namespace strv::cli
