#include "strv/evalkit/baselines.hpp"

#include <algorithm>
#include <numeric>

#include "strv/errors.hpp"

namespace strv::evalkit {

namespace {

constexpr std::uint64_t kRandomSetsStream = 0x72736574;
constexpr std::uint64_t kMarginalStream = 0x6d617267;

std::vector<int> labels_of(const cohort::Dataset& d, const std::vector<std::size_t>& rows) {
  std::vector<int> y;
  for (auto i : rows) y.push_back(d.labels[i]);
  return y;
}

std::vector<std::string> ids_of(const cohort::Dataset& d, const std::vector<std::size_t>& rows) {
  std::vector<std::string> out;
  for (auto i : rows) out.push_back(d.ids[i]);
  return out;
}

Tensor rows_of(const Tensor& x, const std::vector<std::size_t>& rows) {
  auto out = Tensor::matrix(rows.size(), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto src = x.row_span(rows[r]);
    std::copy(src.begin(), src.end(), out.row_span(r).begin());
  }
  return out;
}

void check_splits(const cohort::Dataset& d) {
  if (d.train.empty() || d.validation.empty()) throw ContractViolation("baselines need train and validation subjects");
}

EvalReport fit_and_report(const std::string& name, std::size_t k, const cohort::Dataset& d, const Tensor& x,
                          const HeadOptions& head) {
  const auto y_train = labels_of(d, d.train);
  const auto clf = fit_linear_head(rows_of(x, d.train), y_train, d.num_classes, head);
  const auto preds = predict_rows(clf, rows_of(x, d.validation));
  const auto ids = ids_of(d, d.validation);
  const auto y_val = labels_of(d, d.validation);
  return report_from_predictions(name, k, ids, y_val, preds, d.num_classes);
}

}  // namespace

EvalReport baseline_random_sets(const cohort::Dataset& d, const setenc::SetEncoder& encoder, std::size_t k,
                                std::uint64_t seed, const std::vector<std::size_t>& universe,
                                const HeadOptions& head) {
  check_splits(d);
  std::vector<std::size_t> u = universe;
  if (u.empty()) {
    u.resize(d.pool_size());
    std::iota(u.begin(), u.end(), 0);
  }
  if (k == 0 || k > u.size()) throw ContractViolation("k must lie in [1, universe size]");
  auto emb = Tensor::matrix(d.size(), encoder.config().embedding_dim);
  for (std::size_t i = 0; i < d.size(); ++i) {
    numkit::Rng rng(numkit::derive_seed(seed, {kRandomSetsStream, i}));
    auto scratch = u;
    for (std::size_t j = 0; j < k; ++j) std::swap(scratch[j], scratch[j + numkit::uniform_index(rng, u.size() - j)]);
    std::vector<std::size_t> set(scratch.begin(), scratch.begin() + k);
    std::sort(set.begin(), set.end());
    const auto e = encoder.encode_value(setenc::tokenize(d.z.row_span(i), set, d.descriptors));
    std::copy(e.data().begin(), e.data().end(), emb.row_span(i).begin());
  }
  return fit_and_report("RS", k, d, emb, head);
}

EvalReport baseline_all_radiomics(const cohort::Dataset& d, const HeadOptions& head) {
  check_splits(d);
  return fit_and_report("all-radiomics", d.pool_size(), d, d.z, head);
}

MarginalTopK baseline_marginal_topk(const cohort::Dataset& d, std::size_t k, std::uint64_t seed,
                                    const MarginalOptions& options, const HeadOptions& head) {
  check_splits(d);
  const std::size_t F = d.pool_size();
  if (k == 0 || k > F) throw ContractViolation("k must lie in [1, F]");
  if (options.draws == 0) throw ConfigError("marginal relevance needs at least one draw");
  MarginalTopK out;
  out.relevance.assign(F, 0.0);
  for (std::size_t t = 0; t < options.draws; ++t) {
    numkit::Rng rng(numkit::derive_seed(seed, {kMarginalStream, t}));
    const auto sq = cohort::draw_support_query(d.train, d.labels, d.num_classes, options.n_support, options.n_query, rng);
    for (std::size_t f = 0; f < F; ++f) {
      const std::size_t set[1] = {f};
      out.relevance[f] += probe::reward_for_set(set, sq.support, sq.query, d.z, d.labels, d.num_classes, options.probe);
    }
  }
  for (double& r : out.relevance) r /= static_cast<double>(options.draws);
  std::vector<std::size_t> order(F);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return out.relevance[a] > out.relevance[b]; });
  out.selected.assign(order.begin(), order.begin() + k);
  std::sort(out.selected.begin(), out.selected.end());
  auto x = Tensor::matrix(d.size(), k);
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = 0; j < k; ++j) x.at(i, j) = d.z.at(i, out.selected[j]);
  out.report = fit_and_report("top-k", k, d, x, head);
  return out;
}

}  // namespace strv::evalkit
