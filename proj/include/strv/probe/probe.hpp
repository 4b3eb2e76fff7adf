#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "strv/numkit/tensor.hpp"

namespace strv::probe {

using numkit::Tensor;

// Linear probe q(x) = softmax(x W + b), W is k x C, b is 1 x C.
struct ProbeParams {
  Tensor w;
  Tensor b;

  static ProbeParams zeros(std::size_t k, int num_classes);
};

struct LossAndGrad {
  double loss = 0.0;
  Tensor grad_w;
  Tensor grad_b;
};

// Mean softmax cross-entropy of the probe on (x, y) and its gradient.
LossAndGrad loss_and_grad(const ProbeParams& p, const Tensor& x, std::span<const int> y);
double mean_cross_entropy(const ProbeParams& p, const Tensor& x, std::span<const int> y);

// 0.5 / (1 + lambda) with lambda = max_i ||x_i||^2 / 4 + 1. The mean
// cross-entropy is L-smooth with L <= (max ||x_i||^2 + 1) / 2, so this step is
// well below 2 / L and every gradient step is a descent step.
double descent_learning_rate(const Tensor& x);

struct FitOptions {
  int steps = 10;
  // Non-positive selects descent_learning_rate(x).
  double learning_rate = 0.0;
};

// Zero-initialized full-batch gradient descent. Throws DegenerateSupportError
// when the support contains fewer than two classes.
ProbeParams fit_probe(const Tensor& x, std::span<const int> y, int num_classes, const FitOptions& options = {});

// -(mean query cross-entropy).
double probe_reward(const ProbeParams& p, const Tensor& x, std::span<const int> y);

// Rows `subjects`, columns `set` of a subjects x features matrix.
Tensor gather(const Tensor& features, std::span<const std::size_t> subjects, std::span<const std::size_t> set);

// Fits on the support rows and scores on the query rows, both restricted to
// the columns in `set`.
double reward_for_set(std::span<const std::size_t> set, std::span<const std::size_t> support,
                      std::span<const std::size_t> query, const Tensor& features, std::span<const int> labels,
                      int num_classes, const FitOptions& options = {});

}  // namespace strv::probe
