#include "strv/numkit/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "strv/errors.hpp"

namespace strv::numkit {

namespace {

void check_epsilon(double epsilon) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) {
    throw ContractViolation("finite_difference_check: epsilon must lie in [1e-7, 1e-3]");
  }
}

double finite_or_throw(double v) {
  if (!std::isfinite(v)) throw NumericError("finite_difference_check: non-finite function value");
  return v;
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / (std::abs(analytic) + 1e-8);
}

}  // namespace

double finite_difference_check(const std::function<double()>& loss,
                               std::span<const NamedParameter> params,
                               const GradCheckOptions& options) {
  check_epsilon(options.epsilon);
  finite_or_throw(loss());
  std::mt19937_64 rng(options.seed);
  double worst = 0.0;
  for (const auto& [name, p] : params) {
    auto values = p->value.data();
    std::vector<std::size_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.coordinates_per_parameter > 0 && options.coordinates_per_parameter < coords.size()) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.coordinates_per_parameter);
    }
    for (std::size_t c : coords) {
      const double saved = values[c];
      values[c] = saved + options.epsilon;
      const double up = finite_or_throw(loss());
      values[c] = saved - options.epsilon;
      const double down = finite_or_throw(loss());
      values[c] = saved;
      const double numeric = (up - down) / (2.0 * options.epsilon);
      worst = std::max(worst, relative_error(p->grad[c], numeric));
    }
  }
  return worst;
}

double finite_difference_check(const std::function<double(std::span<const double>)>& loss,
                               std::span<const double> point,
                               std::span<const double> analytic_grad, double epsilon) {
  check_epsilon(epsilon);
  if (point.size() != analytic_grad.size()) {
    throw ContractViolation("finite_difference_check: gradient length differs from point");
  }
  std::vector<double> x(point.begin(), point.end());
  finite_or_throw(loss(x));
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + epsilon;
    const double up = finite_or_throw(loss(x));
    x[i] = saved - epsilon;
    const double down = finite_or_throw(loss(x));
    x[i] = saved;
    worst = std::max(worst, relative_error(analytic_grad[i], (up - down) / (2.0 * epsilon)));
  }
  return worst;
}

}  // namespace strv::numkit
