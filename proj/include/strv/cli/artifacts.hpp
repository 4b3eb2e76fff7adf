#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "strv/retrieval/retrieval.hpp"

namespace strv::cli {

// One subject's retrieval outcome as stored in selections.json.
struct SubjectSelection {
  std::string subject_id;
  std::string split;  // "train" or "validation"
  retrieval::FeatureSet s_star;
  double score = 0.0;
  std::vector<retrieval::FeatureSet> ensemble;
  std::vector<std::string> rois;  // ROI of each S* member

  friend bool operator==(const SubjectSelection&, const SubjectSelection&) = default;
};

struct SelectionFile {
  std::size_t k = 0;
  std::vector<std::string> roi_names;  // full ROI roster of the cohort
  std::vector<SubjectSelection> subjects;

  friend bool operator==(const SelectionFile&, const SelectionFile&) = default;
};

std::string selections_json(const SelectionFile& file);
SelectionFile parse_selections_json(const std::string& text);

// Rows of pool_scores.csv: subject_id,rank,score,set. Ranks are 1-based in
// pool order (descending score).
struct PoolScoreRow {
  std::string subject_id;
  std::size_t rank = 0;
  double score = 0.0;
  retrieval::FeatureSet set;

  friend bool operator==(const PoolScoreRow&, const PoolScoreRow&) = default;
};

std::string pool_scores_csv(const std::vector<retrieval::CandidatePool>& pools);
std::vector<PoolScoreRow> parse_pool_scores_csv(const std::string& text);

// Per subject, `bins` equal-width bins over [min, max] of its scored
// candidates; the last bin is closed. top1 marks the bin holding the maximum.
std::string score_histogram_csv(const std::vector<PoolScoreRow>& rows, std::size_t bins);
// subject_id,roi,count over every ROI of the roster.
std::string roi_counts_csv(const SelectionFile& selections);
// One row per epoch across both stages.
std::string training_curves_csv(const std::vector<retrieval::HistoryRecord>& history);

// Reads the run's history.jsonl, pool_scores.csv and selections.json and
// writes <run>/plots/{score_histogram,roi_counts,training_curves}.csv.
// Missing artifacts raise IoError naming the file.
void export_plots(const std::string& run_dir, std::size_t bins = 20);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& text);

}  // namespace strv::cli
