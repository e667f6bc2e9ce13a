#include "kgsp/adam.hpp"

#include <cmath>

#include "kgsp/error.hpp"

namespace kgsp {

void Adam::step(std::span<Parameter* const> params) {
  for (const Parameter* p : params) p->grad.require_finite("gradient of " + p->name);

  if (m_.empty()) {
    for (const Parameter* p : params) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }
  if (m_.size() != params.size()) throw ShapeError("adam: parameter list changed size");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->grad.shape() != params[i]->value.shape())
      throw ShapeError("adam: gradient shape mismatch for " + params[i]->name);
    if (m_[i].shape() != params[i]->value.shape())
      throw ShapeError("adam: state shape mismatch for " + params[i]->name);
  }

  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double lr_hat = config_.lr / bc1;
  const double inv_bc2 = 1.0 / bc2;
  const double wd = config_.weight_decay, eps = config_.eps;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    double* __restrict theta = p.value.data().data();
    const double* __restrict grad = p.grad.data().data();
    double* __restrict m = m_[i].data().data();
    double* __restrict v = v_[i].data().data();
    const std::size_t n = p.value.size();
#pragma omp simd
    for (std::size_t k = 0; k < n; ++k) {
      const double g = grad[k] + wd * theta[k];
      m[k] = b1 * m[k] + (1.0 - b1) * g;
      v[k] = b2 * v[k] + (1.0 - b2) * g * g;
      theta[k] -= lr_hat * m[k] / (std::sqrt(v[k] * inv_bc2) + eps);
    }
    ++p.version;
  }
}

}  // namespace kgsp
