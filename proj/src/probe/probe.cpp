#include "strv/probe/probe.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "strv/errors.hpp"

namespace strv::probe {

namespace {

void check_inputs(const ProbeParams& p, const Tensor& x, std::span<const int> y) {
  if (x.rank() != 2 || p.w.rank() != 2 || p.b.rank() != 2) throw ContractViolation("probe expects matrices");
  if (x.cols() != p.w.rows() || p.b.rows() != 1 || p.b.cols() != p.w.cols()) {
    throw ContractViolation("probe parameter shapes do not match the features");
  }
  if (x.rows() != y.size()) throw ContractViolation("probe features and labels differ in length");
  if (y.empty()) throw ContractViolation("probe evaluation needs at least one subject");
  const int C = static_cast<int>(p.w.cols());
  for (int l : y) {
    if (l < 0 || l >= C) throw ContractViolation("probe label out of range");
  }
}

// Row-wise softmax of x W + b into probs (n x C); returns mean cross-entropy.
double forward(const ProbeParams& p, const Tensor& x, std::span<const int> y, std::vector<double>& probs) {
  const std::size_t n = x.rows(), k = x.cols(), C = p.w.cols();
  probs.assign(n * C, 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double* z = probs.data() + i * C;
    for (std::size_t c = 0; c < C; ++c) z[c] = p.b[c];
    for (std::size_t j = 0; j < k; ++j) {
      const double xv = x.at(i, j);
      for (std::size_t c = 0; c < C; ++c) z[c] += xv * p.w.at(j, c);
    }
    const double mx = *std::max_element(z, z + C);
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += std::exp(z[c] - mx);
    const double lse = mx + std::log(s);
    loss += lse - z[y[i]];
    for (std::size_t c = 0; c < C; ++c) z[c] = std::exp(z[c] - lse);
  }
  return loss / static_cast<double>(n);
}

}  // namespace

ProbeParams ProbeParams::zeros(std::size_t k, int num_classes) {
  return {Tensor::matrix(k, num_classes), Tensor::matrix(1, num_classes)};
}

LossAndGrad loss_and_grad(const ProbeParams& p, const Tensor& x, std::span<const int> y) {
  check_inputs(p, x, y);
  std::vector<double> probs;
  LossAndGrad out;
  out.loss = forward(p, x, y, probs);
  const std::size_t n = x.rows(), k = x.cols(), C = p.w.cols();
  out.grad_w = Tensor::matrix(k, C);
  out.grad_b = Tensor::matrix(1, C);
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    double* g = probs.data() + i * C;
    g[y[i]] -= 1.0;
    for (std::size_t c = 0; c < C; ++c) out.grad_b[c] += g[c] * inv;
    for (std::size_t j = 0; j < k; ++j) {
      const double xv = x.at(i, j) * inv;
      for (std::size_t c = 0; c < C; ++c) out.grad_w.at(j, c) += xv * g[c];
    }
  }
  return out;
}

double mean_cross_entropy(const ProbeParams& p, const Tensor& x, std::span<const int> y) {
  check_inputs(p, x, y);
  std::vector<double> probs;
  return forward(p, x, y, probs);
}

double descent_learning_rate(const Tensor& x) {
  double max_norm2 = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (double v : x.row_span(i)) s += v * v;
    max_norm2 = std::max(max_norm2, s);
  }
  const double lambda = max_norm2 / 4.0 + 1.0;
  return 0.5 / (1.0 + lambda);
}

ProbeParams fit_probe(const Tensor& x, std::span<const int> y, int num_classes, const FitOptions& options) {
  if (options.steps < 1) throw ContractViolation("probe needs at least one step");
  if (num_classes < 2) throw ContractViolation("probe needs at least two classes");
  if (std::set<int>(y.begin(), y.end()).size() < 2) {
    throw DegenerateSupportError("support contains a single class");
  }
  auto p = ProbeParams::zeros(x.cols(), num_classes);
  check_inputs(p, x, y);
  const double lr = options.learning_rate > 0 ? options.learning_rate : descent_learning_rate(x);
  for (int s = 0; s < options.steps; ++s) {
    const auto g = loss_and_grad(p, x, y);
    for (std::size_t i = 0; i < p.w.size(); ++i) p.w[i] -= lr * g.grad_w[i];
    for (std::size_t i = 0; i < p.b.size(); ++i) p.b[i] -= lr * g.grad_b[i];
  }
  return p;
}

double probe_reward(const ProbeParams& p, const Tensor& x, std::span<const int> y) {
  return -mean_cross_entropy(p, x, y);
}

Tensor gather(const Tensor& features, std::span<const std::size_t> subjects, std::span<const std::size_t> set) {
  auto out = Tensor::matrix(subjects.size(), set.size());
  for (std::size_t r = 0; r < subjects.size(); ++r) {
    if (subjects[r] >= features.rows()) throw ContractViolation("subject index out of range");
    const auto row = features.row_span(subjects[r]);
    for (std::size_t c = 0; c < set.size(); ++c) {
      if (set[c] >= features.cols()) throw ContractViolation("feature index out of range");
      out.at(r, c) = row[set[c]];
    }
  }
  return out;
}

double reward_for_set(std::span<const std::size_t> set, std::span<const std::size_t> support,
                      std::span<const std::size_t> query, const Tensor& features, std::span<const int> labels,
                      int num_classes, const FitOptions& options) {
  if (set.empty()) throw ContractViolation("feature set is empty");
  for (auto s : support) {
    if (std::find(query.begin(), query.end(), s) != query.end()) {
      throw ContractViolation("support and query share a subject");
    }
  }
  auto take_labels = [&](std::span<const std::size_t> ids) {
    std::vector<int> out;
    out.reserve(ids.size());
    for (auto i : ids) {
      if (i >= labels.size()) throw ContractViolation("subject index out of range");
      out.push_back(labels[i]);
    }
    return out;
  };
  const auto ys = take_labels(support), yq = take_labels(query);
  const auto p = fit_probe(gather(features, support, set), ys, num_classes, options);
  return probe_reward(p, gather(features, query, set), yq);
}

}  // namespace strv::probe
