#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>

#include "strv/numkit/autodiff.hpp"

namespace strv::numkit {

struct GradCheckOptions {
  double epsilon = 1e-6;
  // Coordinates sampled per parameter; 0 checks every coordinate.
  std::size_t coordinates_per_parameter = 0;
  std::uint64_t seed = 0;
};

// Compares the analytic gradients currently stored in each Parameter::grad
// against central differences of `loss`, which must read the parameter values
// in place. Returns max |analytic - numeric| / (|analytic| + 1e-8) over the
// checked coordinates. Parameter values are restored before returning.
double finite_difference_check(const std::function<double()>& loss,
                               std::span<const NamedParameter> params,
                               const GradCheckOptions& options = {});

// Same check for a plain vector of coordinates with a supplied gradient.
double finite_difference_check(const std::function<double(std::span<const double>)>& loss,
                               std::span<const double> point,
                               std::span<const double> analytic_grad, double epsilon);

}  // namespace strv::numkit
