#pragma once

#include <cstdint>
#include <vector>

#include "dceiflow/network.hpp"

namespace dceiflow {

struct AdamWOptions {
  double lr = 4e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// Adam with decoupled weight decay:
///   p -= lr * wd * p
///   m = b1 m + (1 - b1) g,  v = b2 v + (1 - b2) g^2
///   p -= lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
class AdamW {
 public:
  AdamW(std::vector<NamedParameter> params, AdamWOptions options = {});

  /// Applies one update from the parameters' current gradients. Throws
  /// std::runtime_error, leaving every parameter untouched, when any
  /// gradient is non-finite.
  void step();
  void zero_grad();

  std::int64_t step_count() const { return step_; }
  const AdamWOptions& options() const { return options_; }
  const std::vector<float>& first_moment(std::size_t i) const { return m_[i]; }
  const std::vector<float>& second_moment(std::size_t i) const { return v_[i]; }

 private:
  std::vector<NamedParameter> params_;
  AdamWOptions options_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  std::int64_t step_ = 0;
};

}  // namespace dceiflow
