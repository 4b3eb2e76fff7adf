#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "strv/numkit/autodiff.hpp"
#include "strv/numkit/random.hpp"
#include "strv/radiomics/volume.hpp"

namespace strv::scorer {

using numkit::Tensor;
using numkit::Var;

// Block statistics of a volume on a grid x grid x grid partition: all block
// means (z-major block order) followed by all block population standard
// deviations. Blocks are floor(dim / grid) wide; the last block along each
// axis absorbs the remainder. Returns a 1 x (2 grid^3) row.
Tensor encode_context(const radiomics::Volume& volume, std::size_t grid = 4);

struct ScorerConfig {
  std::size_t context_raw = 128;
  std::size_t context_dim = 64;
  std::size_t embedding_dim = 64;
  std::size_t hidden = 128;
};

// s(c, e) = relu(concat(c W_c + b_c, e) W_1 + b_1) W_2 + b_2
class Scorer {
 public:
  Scorer() = default;
  Scorer(const ScorerConfig& config, numkit::Rng& rng);

  const ScorerConfig& config() const { return config_; }
  std::vector<numkit::NamedParameter> parameters();
  void set_zero();

  // 1 x context_dim projection of a raw context row.
  Var project_context(numkit::Tape& tape, Var raw_context);
  // One score per embedding row (B x 1).
  Var score(numkit::Tape& tape, Var projected_context, Var embeddings);

  // Tape-free scoring with bitwise-identical arithmetic. prepare() folds the
  // subject's context into the fusion layer once.
  struct Prepared {
    std::vector<double> partial;  // context share of the fusion pre-activation
  };
  Prepared prepare(const Tensor& raw_context) const;
  double score_value(const Prepared& prepared, std::span<const double> embedding) const;

 private:
  ScorerConfig config_;
  numkit::Parameter w_ctx_, b_ctx_, w1_, b1_, w2_, b2_;
};

// Candidate order by descending score; equal scores fall back to the
// lexicographically smaller index list.
std::vector<std::size_t> rank_order(std::span<const double> scores,
                                    const std::vector<std::vector<std::size_t>>& sets);

}  // namespace strv::scorer
