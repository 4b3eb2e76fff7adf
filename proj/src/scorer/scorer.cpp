#include "strv/scorer/scorer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "strv/errors.hpp"

namespace strv::scorer {

using numkit::Parameter;
using numkit::Tape;

Tensor encode_context(const radiomics::Volume& volume, std::size_t grid) {
  const auto& d = volume.dims;
  if (grid == 0 || d.d < grid || d.h < grid || d.w < grid) {
    throw ContractViolation("volume " + radiomics::to_string(d) + " is smaller than the context grid");
  }
  if (volume.voxels.size() != d.count()) throw ContractViolation("volume voxel count does not match dims");
  const std::size_t ext[3] = {d.d, d.h, d.w};
  auto bounds = [&](int axis, std::size_t b) {
    const std::size_t w = ext[axis] / grid;
    return std::pair<std::size_t, std::size_t>{b * w, b + 1 == grid ? ext[axis] : (b + 1) * w};
  };
  const std::size_t nb = grid * grid * grid;
  auto out = Tensor::matrix(1, 2 * nb);
  std::size_t block = 0;
  for (std::size_t bz = 0; bz < grid; ++bz)
    for (std::size_t by = 0; by < grid; ++by)
      for (std::size_t bx = 0; bx < grid; ++bx, ++block) {
        const auto [z0, z1] = bounds(0, bz);
        const auto [y0, y1] = bounds(1, by);
        const auto [x0, x1] = bounds(2, bx);
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t z = z0; z < z1; ++z)
          for (std::size_t y = y0; y < y1; ++y)
            for (std::size_t x = x0; x < x1; ++x, ++n) sum += volume.at(z, y, x);
        const double mean = sum / static_cast<double>(n);
        double var = 0.0;
        for (std::size_t z = z0; z < z1; ++z)
          for (std::size_t y = y0; y < y1; ++y)
            for (std::size_t x = x0; x < x1; ++x) {
              const double dv = volume.at(z, y, x) - mean;
              var += dv * dv;
            }
        out[block] = mean;
        out[nb + block] = std::sqrt(var / static_cast<double>(n));
      }
  return out;
}

Scorer::Scorer(const ScorerConfig& c, numkit::Rng& rng) : config_(c) {
  if (c.context_raw == 0 || c.context_dim == 0 || c.embedding_dim == 0 || c.hidden == 0) {
    throw ConfigError("scorer sizes must be positive");
  }
  w_ctx_ = Parameter(numkit::glorot_uniform(c.context_raw, c.context_dim, rng));
  b_ctx_ = Parameter(Tensor::matrix(1, c.context_dim));
  w1_ = Parameter(numkit::glorot_uniform(c.context_dim + c.embedding_dim, c.hidden, rng));
  b1_ = Parameter(Tensor::matrix(1, c.hidden));
  w2_ = Parameter(numkit::glorot_uniform(c.hidden, 1, rng));
  b2_ = Parameter(Tensor::matrix(1, 1));
}

std::vector<numkit::NamedParameter> Scorer::parameters() {
  return {{"scorer.w_context", &w_ctx_}, {"scorer.b_context", &b_ctx_}, {"scorer.w1", &w1_},
          {"scorer.b1", &b1_},           {"scorer.w2", &w2_},           {"scorer.b2", &b2_}};
}

void Scorer::set_zero() {
  for (auto& [name, p] : parameters()) p->value.fill(0.0);
}

Var Scorer::project_context(Tape& tape, Var raw_context) {
  const auto& v = raw_context.value();
  if (v.rows() != 1 || v.cols() != config_.context_raw) throw ContractViolation("context row has the wrong size");
  return numkit::add_bias(numkit::matmul(raw_context, tape.parameter(w_ctx_)), tape.parameter(b_ctx_));
}

Var Scorer::score(Tape& tape, Var projected_context, Var embeddings) {
  const auto& e = embeddings.value();
  if (e.cols() != config_.embedding_dim) throw ContractViolation("embedding width does not match the scorer");
  if (projected_context.value().rows() != 1 || projected_context.value().cols() != config_.context_dim) {
    throw ContractViolation("projected context has the wrong shape");
  }
  const std::vector<std::size_t> rows(e.rows(), 0);
  const Var ctx = numkit::gather_rows(projected_context, rows);
  const Var h = numkit::relu(
      numkit::add_bias(numkit::matmul(numkit::concat_cols(ctx, embeddings), tape.parameter(w1_)), tape.parameter(b1_)));
  return numkit::add_bias(numkit::matmul(h, tape.parameter(w2_)), tape.parameter(b2_));
}

Scorer::Prepared Scorer::prepare(const Tensor& raw_context) const {
  if (raw_context.rows() != 1 || raw_context.cols() != config_.context_raw) {
    throw ContractViolation("context row has the wrong size");
  }
  Tensor proj = numkit::matmul(raw_context, w_ctx_.value);
  for (std::size_t j = 0; j < proj.size(); ++j) proj[j] += b_ctx_.value[j];
  const std::size_t H = config_.hidden;
  Prepared p;
  p.partial.assign(H, 0.0);
  for (std::size_t k = 0; k < config_.context_dim; ++k) {
    const double a = proj[k];
    if (a == 0.0) continue;
    const double* row = w1_.value.data().data() + k * H;
    for (std::size_t j = 0; j < H; ++j) p.partial[j] += a * row[j];
  }
  return p;
}

double Scorer::score_value(const Prepared& prepared, std::span<const double> embedding) const {
  const std::size_t H = config_.hidden, C = config_.context_dim;
  if (embedding.size() != config_.embedding_dim || prepared.partial.size() != H) {
    throw ContractViolation("embedding width does not match the scorer");
  }
  double pre[1024];
  if (H > 1024) throw ContractViolation("scorer hidden width too large for the fast path");
  std::copy(prepared.partial.begin(), prepared.partial.end(), pre);
  const double* w1 = w1_.value.data().data();
  for (std::size_t k = 0; k < embedding.size(); ++k) {
    const double a = embedding[k];
    if (a == 0.0) continue;
    const double* row = w1 + (C + k) * H;
    for (std::size_t j = 0; j < H; ++j) pre[j] += a * row[j];
  }
  double out = 0.0;
  for (std::size_t j = 0; j < H; ++j) {
    double v = pre[j] + b1_.value[j];
    if (v < 0.0) v = 0.0;
    if (v == 0.0) continue;
    out += v * w2_.value[j];
  }
  return out + b2_.value[0];
}

std::vector<std::size_t> rank_order(std::span<const double> scores,
                                    const std::vector<std::vector<std::size_t>>& sets) {
  if (scores.size() != sets.size()) throw ContractViolation("scores and candidate sets differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return sets[a] < sets[b];
  });
  return order;
}

}  // namespace strv::scorer
