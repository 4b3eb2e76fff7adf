#include "strv/cli/artifacts.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <sstream>

#include "strv/errors.hpp"

namespace strv::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const std::string& path, const std::string& text) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << text;
}

std::string selections_json(const SelectionFile& file) {
  json j;
  j["k"] = file.k;
  j["roi_names"] = file.roi_names;
  j["subjects"] = json::array();
  for (const auto& s : file.subjects) {
    j["subjects"].push_back({{"subject_id", s.subject_id},
                             {"split", s.split},
                             {"s_star", s.s_star},
                             {"score", s.score},
                             {"ensemble", s.ensemble},
                             {"rois", s.rois}});
  }
  return j.dump(1);
}

SelectionFile parse_selections_json(const std::string& text) {
  try {
    const auto j = json::parse(text);
    SelectionFile f;
    f.k = j.at("k").get<std::size_t>();
    f.roi_names = j.at("roi_names").get<std::vector<std::string>>();
    for (const auto& e : j.at("subjects")) {
      SubjectSelection s;
      s.subject_id = e.at("subject_id").get<std::string>();
      s.split = e.at("split").get<std::string>();
      s.s_star = e.at("s_star").get<retrieval::FeatureSet>();
      s.score = e.at("score").get<double>();
      s.ensemble = e.at("ensemble").get<std::vector<retrieval::FeatureSet>>();
      s.rois = e.at("rois").get<std::vector<std::string>>();
      if (s.s_star.size() != f.k || s.rois.size() != f.k) {
        throw FormatError("selection for " + s.subject_id + " does not have k members");
      }
      f.subjects.push_back(std::move(s));
    }
    return f;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed selections: ") + e.what());
  }
}

std::string pool_scores_csv(const std::vector<retrieval::CandidatePool>& pools) {
  std::ostringstream out;
  out.precision(17);
  out << "subject_id,rank,score,set\n";
  for (const auto& p : pools) {
    for (std::size_t j = 0; j < p.sets.size(); ++j) {
      out << p.subject_id << ',' << j + 1 << ',' << p.scores[j] << ',' << retrieval::format_set(p.sets[j]) << '\n';
    }
  }
  return out.str();
}

std::vector<PoolScoreRow> parse_pool_scores_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "subject_id,rank,score,set") {
    throw FormatError("pool scores: unexpected header");
  }
  std::vector<PoolScoreRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string id, rank, score, set;
    if (!std::getline(fields, id, ',') || !std::getline(fields, rank, ',') || !std::getline(fields, score, ',') ||
        !std::getline(fields, set)) {
      throw FormatError("pool scores: malformed row: " + line);
    }
    PoolScoreRow r;
    r.subject_id = id;
    try {
      r.rank = std::stoul(rank);
      r.score = std::stod(score);
    } catch (const std::exception&) {
      throw FormatError("pool scores: malformed row: " + line);
    }
    r.set = retrieval::parse_set(set);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string score_histogram_csv(const std::vector<PoolScoreRow>& rows, std::size_t bins) {
  if (bins == 0) throw ConfigError("histogram needs at least one bin");
  // Preserve first-appearance order of subjects.
  std::vector<std::string> order;
  std::map<std::string, std::vector<double>> scores;
  for (const auto& r : rows) {
    auto [it, fresh] = scores.try_emplace(r.subject_id);
    if (fresh) order.push_back(r.subject_id);
    it->second.push_back(r.score);
  }
  std::ostringstream out;
  out.precision(17);
  out << "subject_id,bin_lo,bin_hi,count,top1\n";
  for (const auto& id : order) {
    const auto& s = scores[id];
    const auto [mn, mx] = std::minmax_element(s.begin(), s.end());
    const double lo = *mn, hi = *mx;
    const double width = hi > lo ? (hi - lo) / static_cast<double>(bins) : 0.0;
    std::vector<std::size_t> counts(bins, 0);
    auto bin_of = [&](double v) {
      if (width == 0.0) return bins - 1;
      const auto b = static_cast<std::size_t>((v - lo) / width);
      return std::min(b, bins - 1);
    };
    for (double v : s) ++counts[bin_of(v)];
    const std::size_t top = bin_of(hi);
    for (std::size_t b = 0; b < bins; ++b) {
      const double a = lo + width * static_cast<double>(b);
      const double z = b + 1 == bins ? hi : lo + width * static_cast<double>(b + 1);
      out << id << ',' << a << ',' << z << ',' << counts[b] << ',' << (b == top ? 1 : 0) << '\n';
    }
  }
  return out.str();
}

std::string roi_counts_csv(const SelectionFile& selections) {
  std::ostringstream out;
  out << "subject_id,roi,count\n";
  for (const auto& s : selections.subjects) {
    for (const auto& roi : selections.roi_names) {
      out << s.subject_id << ',' << roi << ',' << std::count(s.rois.begin(), s.rois.end(), roi) << '\n';
    }
  }
  return out.str();
}

std::string training_curves_csv(const std::vector<retrieval::HistoryRecord>& history) {
  std::ostringstream out;
  out.precision(17);
  out << "step,stage,epoch,l_cls,l_scr,total,mean_reward,eval_l_scr\n";
  for (std::size_t i = 0; i < history.size(); ++i) {
    const auto& h = history[i];
    out << i + 1 << ',' << h.stage << ',' << h.epoch << ',' << h.l_cls << ',' << h.l_scr << ',' << h.total << ','
        << h.mean_reward << ',';
    if (h.eval_l_scr) out << *h.eval_l_scr;
    out << '\n';
  }
  return out.str();
}

void export_plots(const std::string& run_dir, std::size_t bins) {
  const fs::path run(run_dir);
  for (const char* name : {"history.jsonl", "pool_scores.csv", "selections.json"}) {
    if (!fs::exists(run / name)) throw IoError("missing run artifact: " + (run / name).string());
  }
  const auto history = retrieval::parse_history_jsonl(read_file((run / "history.jsonl").string()));
  const auto rows = parse_pool_scores_csv(read_file((run / "pool_scores.csv").string()));
  const auto selections = parse_selections_json(read_file((run / "selections.json").string()));
  write_file((run / "plots" / "score_histogram.csv").string(), score_histogram_csv(rows, bins));
  write_file((run / "plots" / "roi_counts.csv").string(), roi_counts_csv(selections));
  write_file((run / "plots" / "training_curves.csv").string(), training_curves_csv(history));
}

}  // namespace strv::cli
