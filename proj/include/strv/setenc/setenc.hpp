#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "strv/numkit/autodiff.hpp"
#include "strv/numkit/random.hpp"
#include "strv/radiomics/features.hpp"

namespace strv::setenc {

using numkit::Tensor;
using numkit::Var;

// Strictly increasing feature indices.
using FeatureSet = std::vector<std::size_t>;

// Throws ContractViolation unless `set` is sorted, duplicate-free, inside
// [0, pool_size) and, when k > 0, of size k.
void validate_set(std::span<const std::size_t> set, std::size_t pool_size, std::size_t k = 0);

struct FeatureToken {
  std::size_t index = 0;  // position in the pool; the pooling order key
  double z = 0.0;
  std::size_t roi_id = 0;
  std::size_t family_id = 0;
  std::size_t feature_id = 0;

  friend bool operator==(const FeatureToken&, const FeatureToken&) = default;
};

// One token per member of `set`, in set order.
std::vector<FeatureToken> tokenize(std::span<const double> z_row, std::span<const std::size_t> set,
                                   const radiomics::DescriptorTable& table);

struct EncoderConfig {
  std::size_t embedding_dim = 64;
  std::size_t hidden = 64;
  std::size_t meta_dim = 8;
  std::size_t num_rois = 9;
  std::size_t num_families = radiomics::kFamilyCount;
  std::size_t num_features = radiomics::kFeaturesPerRoi;
};

// Per-token MLP over concat(z, roi embedding, family embedding, feature
// embedding), mean-pooled over the tokens:
//   h_t = relu(z_t w_val + E_roi[r] W_roi + E_fam[f] W_fam + E_feat[t] W_feat + b1)
//   e   = mean_t(h_t) W2 + b2
// The first layer is stored as row blocks so each embedding table can be
// projected once and gathered per token; the affine output layer commutes
// with the mean.
class SetEncoder {
 public:
  SetEncoder() = default;
  SetEncoder(const EncoderConfig& config, numkit::Rng& rng);

  const EncoderConfig& config() const { return config_; }
  std::vector<numkit::NamedParameter> parameters();
  void set_zero();

  // One row per set; every set must hold the same number of tokens. Tokens
  // are pooled in ascending index order regardless of input order. When
  // z_leaf is given it receives the (sets x k) x 1 node of token values in
  // pooling order, so gradients w.r.t. the values can be read back.
  Var encode(numkit::Tape& tape, const std::vector<std::vector<FeatureToken>>& sets, Var* z_leaf = nullptr);

  // Tape-free path with bitwise-identical arithmetic.
  Tensor encode_value(std::span<const FeatureToken> tokens) const;

  // First-layer activations for all F features of one subject; with these,
  // embed_from_hidden pools any set without recomputing token MLPs.
  Tensor hidden_table(std::span<const double> z_row, const radiomics::DescriptorTable& table) const;
  // Writes the embedding of `set` (ascending indices) into out (size d).
  void embed_from_hidden(const Tensor& hidden, std::span<const std::size_t> set, std::span<double> out) const;

 private:
  Tensor projected(const numkit::Parameter& table, const numkit::Parameter& block) const;
  void check_token(const FeatureToken& t) const;

  EncoderConfig config_;
  numkit::Parameter e_roi_, e_fam_, e_feat_;
  numkit::Parameter w_val_, w_roi_, w_fam_, w_feat_, b1_;
  numkit::Parameter w2_, b2_;
};

}  // namespace strv::setenc
