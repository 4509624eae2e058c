#pragma once

#include <span>

#include "dceiflow/tensor.hpp"

namespace dceiflow {

struct LossConfig {
  double phi = 0.8;      // iteration weight base
  double q = 0.5;        // robust exponent
  double eps = 1e-8;     // robust offset
  double lambda = 100.0; // similarity weight

  void validate() const;
};

enum class LossMode { bidirectional, unidirectional };

/// Weight of iterate i (1-based) out of n: phi^(n - i + 1).
double iteration_weight(const LossConfig& cfg, int i, int n);

/// sum_i phi^(N-i+1) * mean over valid pixels of (|F_i - F_gt|^2 + eps)^q.
/// preds and gt are (1, 2, H, W); valid is (1, 1, H, W) holding 0/1.
Tensor flow_loss(std::span<const Tensor> preds, const Tensor& gt, const Tensor& valid, const LossConfig& cfg);

/// Half the sum of the forward and backward flow losses.
Tensor bidirectional_flow_loss(std::span<const Tensor> preds_fwd, std::span<const Tensor> preds_bwd,
                               const Tensor& gt_fwd, const Tensor& valid_fwd, const Tensor& gt_bwd,
                               const Tensor& valid_bwd, const LossConfig& cfg);

/// Mean of squared differences between the pseudo and real second-frame features.
Tensor similarity_loss(const Tensor& pseudo_feat, const Tensor& image2_feat);

/// flow_term + lambda * sim_term. flow_term is L_fb in bidirectional mode
/// and L_f in unidirectional mode; the combination is the same.
Tensor total_loss(LossMode mode, const Tensor& flow_term, const Tensor& sim_term, double lambda);

}  // namespace dceiflow
