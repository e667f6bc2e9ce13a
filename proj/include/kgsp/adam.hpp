#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "kgsp/tape.hpp"

namespace kgsp {

struct AdamConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Coupled L2: added to the gradient before the moment updates.
  double weight_decay = 5e-5;
};

// Adam with coupled weight decay. Moments are allocated on the first step
// and must keep matching the parameter shapes afterwards.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // Applies one update to every parameter using its accumulated grad.
  // Throws NumericError on a non-finite gradient, before touching anything.
  void step(std::span<Parameter* const> params);

  std::uint64_t steps() const { return t_; }
  const AdamConfig& config() const { return config_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

 private:
  AdamConfig config_;
  std::uint64_t t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace kgsp
