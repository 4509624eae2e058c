#pragma once

#include <functional>
#include <random>
#include <vector>

#include "dceiflow/ops.hpp"
#include "reference.hpp"

namespace ref {

using FloatOp = std::function<Tensor(const std::vector<Tensor>&)>;
using DoubleOp = std::function<DTensor(const std::vector<DTensor>&)>;

/// Compares the engine's gradient of sum(w * op(inputs)) against central
/// differences of the double reference, for every input. Returns one
/// relative error per input.
inline std::vector<double> check_gradients(const FloatOp& op, const DoubleOp& oracle, const std::vector<DTensor>& inputs,
                                           std::mt19937_64& rng, double h = 1e-4) {
  std::vector<Tensor> xs;
  for (const DTensor& d : inputs) xs.push_back(to_float(d, true));
  dceiflow::Tape tape;
  Tensor y;
  {
    dceiflow::TapeScope scope(tape);
    y = op(xs);
  }
  const DTensor w = random_tensor(y.shape(), rng);
  {
    dceiflow::TapeScope scope(tape);
    dceiflow::backward(dceiflow::ops::sum(dceiflow::ops::mul(y, to_float(w))));
  }

  std::vector<double> errors;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto f = [&](const DTensor& probe) {
      std::vector<DTensor> args = inputs;
      args[i] = probe;
      return weighted_sum(oracle(args), w);
    };
    errors.push_back(relative_error(xs[i].grad(), numeric_gradient(f, inputs[i], h)));
  }
  return errors;
}

/// Same as check_gradients for an op that already produces a scalar.
inline std::vector<double> check_scalar_gradients(const FloatOp& op, const std::function<double(const std::vector<DTensor>&)>& oracle,
                                                  const std::vector<DTensor>& inputs, double h = 1e-4) {
  std::vector<Tensor> xs;
  for (const DTensor& d : inputs) xs.push_back(to_float(d, true));
  {
    dceiflow::Tape tape;
    dceiflow::TapeScope scope(tape);
    dceiflow::backward(op(xs));
  }
  std::vector<double> errors;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto f = [&](const DTensor& probe) {
      std::vector<DTensor> args = inputs;
      args[i] = probe;
      return oracle(args);
    };
    errors.push_back(relative_error(xs[i].grad(), numeric_gradient(f, inputs[i], h)));
  }
  return errors;
}

/// Uniform values bounded away from zero, for kinked activations.
inline DTensor away_from_zero(Shape shape, std::mt19937_64& rng, double margin = 0.05) {
  DTensor d = random_tensor(std::move(shape), rng);
  for (double& x : d.v) x = static_cast<double>(static_cast<float>(x < 0 ? x - margin : x + margin));
  return d;
}

/// Sampling positions in [-1, extent] with fractional parts in [0.2, 0.8],
/// so finite-difference probes never straddle a texel boundary.
inline DTensor sampling_coords(int n, int ho, int wo, int h, int w, std::mt19937_64& rng) {
  DTensor c({n, 2, ho, wo});
  std::uniform_int_distribution<int> col(-1, w), row(-1, h);
  std::uniform_real_distribution<double> frac(0.2, 0.8);
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
  for (int s = 0; s < n; ++s)
    for (std::size_t k = 0; k < plane; ++k) {
      c.v[(static_cast<std::size_t>(s) * 2) * plane + k] = static_cast<float>(col(rng) + frac(rng));
      c.v[(static_cast<std::size_t>(s) * 2 + 1) * plane + k] = static_cast<float>(row(rng) + frac(rng));
    }
  return c;
}

}  // namespace ref
