#pragma once

#include <cstdint>
#include <vector>

#include "strv/cohort/cohort.hpp"
#include "strv/evalkit/evalkit.hpp"
#include "strv/probe/probe.hpp"
#include "strv/setenc/setenc.hpp"

namespace strv::evalkit {

// Every baseline fits its own linear head on the training split and reports
// on the validation split.

// One uniform random k-set per subject, embedded by the given encoder.
// `universe` restricts the draw (empty: the whole pool).
EvalReport baseline_random_sets(const cohort::Dataset& data, const setenc::SetEncoder& encoder, std::size_t k,
                                std::uint64_t seed, const std::vector<std::size_t>& universe = {},
                                const HeadOptions& head = {});

// Head on the full normalized feature vector.
EvalReport baseline_all_radiomics(const cohort::Dataset& data, const HeadOptions& head = {});

struct MarginalOptions {
  std::size_t draws = 5;
  std::size_t n_support = 24;
  std::size_t n_query = 24;
  probe::FitOptions probe;
};

struct MarginalTopK {
  EvalReport report;
  std::vector<std::size_t> selected;  // ascending
  std::vector<double> relevance;      // per feature
};

// Single-feature probe reward averaged over support/query draws of the
// training split; the k most relevant features (lower index on ties) form one
// population-level set.
MarginalTopK baseline_marginal_topk(const cohort::Dataset& data, std::size_t k, std::uint64_t seed,
                                    const MarginalOptions& options = {}, const HeadOptions& head = {});

}  // namespace strv::evalkit
