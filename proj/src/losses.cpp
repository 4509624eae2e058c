#include "dceiflow/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "dceiflow/ops.hpp"

namespace dceiflow {

void LossConfig::validate() const {
  if (!(phi > 0.0 && phi <= 1.0)) throw std::invalid_argument("loss config: phi must lie in (0, 1]");
  if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("loss config: q must lie in (0, 1)");
  if (!(eps > 0.0)) throw std::invalid_argument("loss config: eps must be positive");
  if (!(lambda >= 0.0)) throw std::invalid_argument("loss config: lambda must be >= 0");
}

double iteration_weight(const LossConfig& cfg, int i, int n) { return std::pow(cfg.phi, n - i + 1); }

Tensor flow_loss(std::span<const Tensor> preds, const Tensor& gt, const Tensor& valid, const LossConfig& cfg) {
  cfg.validate();
  if (preds.empty()) throw std::invalid_argument("flow_loss: no predictions");
  if (gt.rank() != 4 || gt.dim(0) != 1 || gt.dim(1) != 2) {
    throw std::invalid_argument("flow_loss: ground truth must be (1,2,H,W), got " + shape_to_string(gt.shape()));
  }
  if (valid.shape() != Shape{1, 1, gt.dim(2), gt.dim(3)}) {
    throw std::invalid_argument("flow_loss: valid mask must be (1,1,H,W), got " + shape_to_string(valid.shape()));
  }
  double count = 0.0;
  for (float v : valid.data()) count += v != 0.0F ? 1.0 : 0.0;
  if (count == 0.0) throw std::invalid_argument("flow_loss: empty valid mask");

  const int n = static_cast<int>(preds.size());
  Tensor total;
  for (int i = 1; i <= n; ++i) {
    const Tensor& pred = preds[static_cast<std::size_t>(i - 1)];
    if (pred.shape() != gt.shape()) {
      throw std::invalid_argument("flow_loss: prediction " + shape_to_string(pred.shape()) + " vs ground truth " +
                                  shape_to_string(gt.shape()));
    }
    const Tensor diff = ops::sub(pred, gt);
    const Tensor sq_norm = ops::channel_sum(ops::mul(diff, diff));
    const Tensor robust = ops::pow_scalar(ops::add_scalar(sq_norm, static_cast<float>(cfg.eps)), static_cast<float>(cfg.q));
    const Tensor masked_mean = ops::scale(ops::sum(ops::mul(robust, valid)), static_cast<float>(1.0 / count));
    const Tensor term = ops::scale(masked_mean, static_cast<float>(iteration_weight(cfg, i, n)));
    total = total.defined() ? ops::add(total, term) : term;
  }
  return total;
}

Tensor bidirectional_flow_loss(std::span<const Tensor> preds_fwd, std::span<const Tensor> preds_bwd,
                               const Tensor& gt_fwd, const Tensor& valid_fwd, const Tensor& gt_bwd,
                               const Tensor& valid_bwd, const LossConfig& cfg) {
  const Tensor fwd = flow_loss(preds_fwd, gt_fwd, valid_fwd, cfg);
  const Tensor bwd = flow_loss(preds_bwd, gt_bwd, valid_bwd, cfg);
  return ops::scale(ops::add(fwd, bwd), 0.5F);
}

Tensor similarity_loss(const Tensor& pseudo_feat, const Tensor& image2_feat) {
  if (pseudo_feat.shape() != image2_feat.shape()) {
    throw std::invalid_argument("similarity_loss: shape mismatch " + shape_to_string(pseudo_feat.shape()) + " vs " +
                                shape_to_string(image2_feat.shape()));
  }
  const Tensor diff = ops::sub(image2_feat, pseudo_feat);
  return ops::mean(ops::mul(diff, diff));
}

Tensor total_loss(LossMode, const Tensor& flow_term, const Tensor& sim_term, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("total_loss: lambda must be >= 0");
  return ops::add(flow_term, ops::scale(sim_term, static_cast<float>(lambda)));
}

}  // namespace dceiflow
