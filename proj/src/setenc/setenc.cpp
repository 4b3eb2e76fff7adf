#include "strv/setenc/setenc.hpp"

#include <algorithm>

#include "strv/errors.hpp"

namespace strv::setenc {

using numkit::Parameter;
using numkit::Tape;

void validate_set(std::span<const std::size_t> set, std::size_t pool_size, std::size_t k) {
  if (set.empty()) throw ContractViolation("feature set is empty");
  if (k > 0 && set.size() != k) {
    throw ContractViolation("feature set has " + std::to_string(set.size()) + " members, expected " +
                            std::to_string(k));
  }
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (set[i] >= pool_size) throw ContractViolation("feature index " + std::to_string(set[i]) + " out of range");
    if (i > 0 && set[i] <= set[i - 1]) throw ContractViolation("feature set must be strictly increasing");
  }
}

std::vector<FeatureToken> tokenize(std::span<const double> z_row, std::span<const std::size_t> set,
                                   const radiomics::DescriptorTable& table) {
  if (z_row.size() != table.size()) throw ContractViolation("feature row does not match the descriptor table");
  std::vector<FeatureToken> out;
  out.reserve(set.size());
  for (auto i : set) {
    if (i >= table.size()) throw ContractViolation("feature index " + std::to_string(i) + " out of range");
    const auto& d = table[i];
    out.push_back({i, z_row[i], d.roi_id, static_cast<std::size_t>(d.family), d.feature_id});
  }
  return out;
}

SetEncoder::SetEncoder(const EncoderConfig& c, numkit::Rng& rng) : config_(c) {
  if (c.embedding_dim == 0 || c.hidden == 0 || c.meta_dim == 0 || c.num_rois == 0 || c.num_families == 0 ||
      c.num_features == 0) {
    throw ConfigError("encoder sizes must be positive");
  }
  e_roi_ = Parameter(numkit::glorot_uniform(c.num_rois, c.meta_dim, rng));
  e_fam_ = Parameter(numkit::glorot_uniform(c.num_families, c.meta_dim, rng));
  e_feat_ = Parameter(numkit::glorot_uniform(c.num_features, c.meta_dim, rng));
  // Row blocks of one (1 + 3 * meta_dim) x hidden layer, initialized with that
  // layer's fan-in and fan-out.
  auto first = numkit::glorot_uniform(1 + 3 * c.meta_dim, c.hidden, rng);
  auto block = [&](std::size_t row0, std::size_t rows) {
    auto t = Tensor::matrix(rows, c.hidden);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t h = 0; h < c.hidden; ++h) t.at(r, h) = first.at(row0 + r, h);
    return Parameter(std::move(t));
  };
  w_val_ = block(0, 1);
  w_roi_ = block(1, c.meta_dim);
  w_fam_ = block(1 + c.meta_dim, c.meta_dim);
  w_feat_ = block(1 + 2 * c.meta_dim, c.meta_dim);
  b1_ = Parameter(Tensor::matrix(1, c.hidden));
  w2_ = Parameter(numkit::glorot_uniform(c.hidden, c.embedding_dim, rng));
  b2_ = Parameter(Tensor::matrix(1, c.embedding_dim));
}

std::vector<numkit::NamedParameter> SetEncoder::parameters() {
  return {{"encoder.e_roi", &e_roi_}, {"encoder.e_family", &e_fam_}, {"encoder.e_feature", &e_feat_},
          {"encoder.w_value", &w_val_}, {"encoder.w_roi", &w_roi_},  {"encoder.w_family", &w_fam_},
          {"encoder.w_feature", &w_feat_}, {"encoder.b1", &b1_},     {"encoder.w2", &w2_},
          {"encoder.b2", &b2_}};
}

void SetEncoder::set_zero() {
  for (auto& [name, p] : parameters()) p->value.fill(0.0);
}

void SetEncoder::check_token(const FeatureToken& t) const {
  if (t.roi_id >= config_.num_rois || t.family_id >= config_.num_families || t.feature_id >= config_.num_features) {
    throw ContractViolation("token metadata id outside the embedding tables");
  }
}

Var SetEncoder::encode(Tape& tape, const std::vector<std::vector<FeatureToken>>& sets, Var* z_leaf) {
  if (sets.empty()) throw ContractViolation("encode needs at least one set");
  const std::size_t k = sets.front().size();
  if (k == 0) throw ContractViolation("feature set is empty");
  const std::size_t n = sets.size() * k;
  auto z = Tensor::matrix(n, 1);
  std::vector<std::size_t> roi(n), fam(n), feat(n);
  std::size_t row = 0;
  for (const auto& s : sets) {
    if (s.size() != k) throw ContractViolation("all sets in a batch must have the same size");
    std::vector<const FeatureToken*> sorted;
    for (const auto& t : s) sorted.push_back(&t);
    std::stable_sort(sorted.begin(), sorted.end(), [](auto a, auto b) { return a->index < b->index; });
    for (const auto* t : sorted) {
      check_token(*t);
      z[row] = t->z;
      roi[row] = t->roi_id;
      fam[row] = t->family_id;
      feat[row] = t->feature_id;
      ++row;
    }
  }
  const Var p_roi = numkit::matmul(tape.parameter(e_roi_), tape.parameter(w_roi_));
  const Var p_fam = numkit::matmul(tape.parameter(e_fam_), tape.parameter(w_fam_));
  const Var p_feat = numkit::matmul(tape.parameter(e_feat_), tape.parameter(w_feat_));
  Var meta = numkit::add(numkit::gather_rows(p_roi, roi), numkit::gather_rows(p_fam, fam));
  meta = numkit::add(meta, numkit::gather_rows(p_feat, feat));
  meta = numkit::add_bias(meta, tape.parameter(b1_));
  const Var zv = tape.constant(std::move(z));
  if (z_leaf) *z_leaf = zv;
  const Var zw = numkit::matmul(zv, tape.parameter(w_val_));
  const Var h = numkit::relu(numkit::add(zw, meta));
  const Var pooled = numkit::segment_mean(h, k);
  return numkit::add_bias(numkit::matmul(pooled, tape.parameter(w2_)), tape.parameter(b2_));
}

Tensor SetEncoder::projected(const Parameter& table, const Parameter& block) const {
  return numkit::matmul(table.value, block.value);
}

Tensor SetEncoder::hidden_table(std::span<const double> z_row, const radiomics::DescriptorTable& table) const {
  if (z_row.size() != table.size()) throw ContractViolation("feature row does not match the descriptor table");
  const Tensor pr = projected(e_roi_, w_roi_), pf = projected(e_fam_, w_fam_), pt = projected(e_feat_, w_feat_);
  const std::size_t H = config_.hidden;
  auto out = Tensor::matrix(table.size(), H);
  for (std::size_t f = 0; f < table.size(); ++f) {
    const auto& d = table[f];
    const FeatureToken tok{f, z_row[f], d.roi_id, static_cast<std::size_t>(d.family), d.feature_id};
    check_token(tok);
    auto dst = out.row_span(f);
    const double z = z_row[f];
    for (std::size_t h = 0; h < H; ++h) {
      double meta = pr.at(tok.roi_id, h) + pf.at(tok.family_id, h);
      meta += pt.at(tok.feature_id, h);
      meta += b1_.value[h];
      double zw = 0.0;
      if (z != 0.0) zw += z * w_val_.value[h];
      double v = zw + meta;
      if (v < 0.0) v = 0.0;
      dst[h] = v;
    }
  }
  return out;
}

void SetEncoder::embed_from_hidden(const Tensor& hidden, std::span<const std::size_t> set,
                                   std::span<double> out) const {
  const std::size_t H = config_.hidden, D = config_.embedding_dim;
  if (out.size() != D || hidden.cols() != H) throw ContractViolation("embedding buffer has the wrong size");
  double pooled[512];
  if (H > 512) throw ContractViolation("hidden width too large for the fast path");
  std::fill(pooled, pooled + H, 0.0);
  for (auto f : set) {
    const double* src = hidden.data().data() + f * H;
    for (std::size_t h = 0; h < H; ++h) pooled[h] += src[h];
  }
  const double k = static_cast<double>(set.size());
  for (std::size_t h = 0; h < H; ++h) pooled[h] /= k;
  std::fill(out.begin(), out.end(), 0.0);
  const double* w2 = w2_.value.data().data();
  for (std::size_t h = 0; h < H; ++h) {
    const double a = pooled[h];
    if (a == 0.0) continue;
    const double* row = w2 + h * D;
    for (std::size_t j = 0; j < D; ++j) out[j] += a * row[j];
  }
  for (std::size_t j = 0; j < D; ++j) out[j] += b2_.value[j];
}

Tensor SetEncoder::encode_value(std::span<const FeatureToken> tokens) const {
  if (tokens.empty()) throw ContractViolation("feature set is empty");
  std::vector<FeatureToken> sorted(tokens.begin(), tokens.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
  const Tensor pr = projected(e_roi_, w_roi_), pf = projected(e_fam_, w_fam_), pt = projected(e_feat_, w_feat_);
  const std::size_t H = config_.hidden;
  auto hidden = Tensor::matrix(sorted.size(), H);
  std::vector<std::size_t> rows(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const auto& t = sorted[i];
    check_token(t);
    rows[i] = i;
    for (std::size_t h = 0; h < H; ++h) {
      double meta = pr.at(t.roi_id, h) + pf.at(t.family_id, h);
      meta += pt.at(t.feature_id, h);
      meta += b1_.value[h];
      double zw = 0.0;
      if (t.z != 0.0) zw += t.z * w_val_.value[h];
      double v = zw + meta;
      if (v < 0.0) v = 0.0;
      hidden.at(i, h) = v;
    }
  }
  auto out = Tensor::matrix(1, config_.embedding_dim);
  embed_from_hidden(hidden, rows, out.data());
  return out;
}

}  // namespace strv::setenc
