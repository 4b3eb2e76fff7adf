#include "strv/numkit/optim.hpp"

#include <cmath>

#include "strv/errors.hpp"

namespace strv::numkit {

Adam::Adam(AdamOptions options) : options_(options) {
  if (!(options_.learning_rate > 0.0)) throw ContractViolation("Adam: learning rate must be > 0");
}

void Adam::step(std::span<const NamedParameter> params) {
  if (first_moment_.empty()) {
    for (const auto& [name, p] : params) {
      first_moment_.emplace_back(p->value.shape(), 0.0);
      second_moment_.emplace_back(p->value.shape(), 0.0);
    }
  }
  if (first_moment_.size() != params.size()) {
    throw ContractViolation("Adam: parameter list changed between steps");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = *params[i].second;
    if (!p.grad.same_shape(p.value) || !first_moment_[i].same_shape(p.value)) {
      throw ContractViolation("Adam: gradient/moment shape mismatch for " + params[i].first);
    }
  }

  ++step_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].second->value.data();
    auto g = params[i].second->grad.data();
    auto m = first_moment_[i].data();
    auto v = second_moment_[i].data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      w[j] -= options_.learning_rate * mhat / (std::sqrt(vhat) + options_.epsilon);
    }
  }
}

Sgd::Sgd(double learning_rate) : learning_rate_(learning_rate) {
  if (!(learning_rate_ > 0.0)) throw ContractViolation("Sgd: learning rate must be > 0");
}

void Sgd::step(std::span<const NamedParameter> params) {
  for (const auto& [name, p] : params) {
    if (!p->grad.same_shape(p->value)) throw ContractViolation("Sgd: gradient shape mismatch for " + name);
  }
  ++step_;
  for (const auto& [name, p] : params) {
    auto w = p->value.data();
    auto g = p->grad.data();
    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= learning_rate_ * g[j];
  }
}

}  // namespace strv::numkit
