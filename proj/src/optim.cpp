#include "dceiflow/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace dceiflow {

AdamW::AdamW(std::vector<NamedParameter> params, AdamWOptions options)
    : params_(std::move(params)), options_(options) {
  if (!(options_.lr > 0.0) || !(options_.eps > 0.0) || options_.weight_decay < 0.0 || options_.beta1 < 0.0 ||
      options_.beta1 >= 1.0 || options_.beta2 < 0.0 || options_.beta2 >= 1.0) {
    throw std::invalid_argument("AdamW: invalid hyper-parameters");
  }
  for (const auto& p : params_) {
    m_.emplace_back(p.value.numel(), 0.0F);
    v_.emplace_back(p.value.numel(), 0.0F);
  }
}

void AdamW::step() {
  for (const auto& p : params_) {
    for (float g : p.value.grad()) {
      if (!std::isfinite(g)) throw std::runtime_error("AdamW: non-finite gradient in " + p.name + "; step rejected");
    }
  }
  ++step_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const double decay = 1.0 - options_.lr * options_.weight_decay;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& param = params_[k].value;
    auto values = param.mutable_data();
    const auto grad = param.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i];
      double p = static_cast<double>(values[i]) * decay;
      const double mi = b1 * m[i] + (1.0 - b1) * g;
      const double vi = b2 * v[i] + (1.0 - b2) * g * g;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      p -= options_.lr * (mi / correction1) / (std::sqrt(vi / correction2) + options_.eps);
      values[i] = static_cast<float>(p);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

}  // namespace dceiflow
