#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "strv/numkit/autodiff.hpp"

namespace strv::numkit {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction. Moment buffers are created on the first step and
// bound to the parameter order used in that call.
class Adam {
 public:
  explicit Adam(AdamOptions options = {});

  void step(std::span<const NamedParameter> params);
  std::uint64_t steps() const { return step_; }
  const AdamOptions& options() const { return options_; }

 private:
  AdamOptions options_;
  std::uint64_t step_ = 0;
  std::vector<Tensor> first_moment_;
  std::vector<Tensor> second_moment_;
};

class Sgd {
 public:
  explicit Sgd(double learning_rate);

  void step(std::span<const NamedParameter> params);
  std::uint64_t steps() const { return step_; }

 private:
  double learning_rate_;
  std::uint64_t step_ = 0;
};

}  // namespace strv::numkit
