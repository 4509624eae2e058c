#include "dceiflow/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "dceiflow/metrics.hpp"
#include "dceiflow/ops.hpp"

namespace dceiflow {

TrainSample TrainSample::from(const SceneSample& sample) {
  return {sample.image1, sample.image2, sample.events, sample.gt_fwd, sample.gt_bwd, sample.dt};
}

BidirectionalPair make_bidirectional_pair(const TrainSample& sample, int bins) {
  BidirectionalPair pair;
  pair.forward = {image_to_tensor(sample.image1), voxelize(sample.events, bins).data};
  pair.backward = {image_to_tensor(sample.image2), voxelize(reverse(sample.events), bins).data};
  return pair;
}

LossRecord bidirectional_step(const DCEIFlowNet& net, const BidirectionalPair& pair, const TrainSample& sample,
                              const LossConfig& cfg, double grad_scale) {
  Tape tape;
  TapeScope scope(tape);
  // Each image feature serves as the context of one direction and the
  // similarity target of the other. Targets are constants for the
  // similarity term, so it cannot be lowered by shrinking both sides.
  const Tensor feat1 = net.encode_image(pair.forward.image);
  const Tensor feat2 = net.encode_image(pair.backward.image);
  const auto fwd = net.forward_features(feat1, net.encode_events(pair.forward.volume));
  const auto bwd = net.forward_features(feat2, net.encode_events(pair.backward.volume));

  const Tensor flow_term =
      bidirectional_flow_loss(fwd.flows, bwd.flows, flow_to_tensor(sample.gt_fwd), valid_to_tensor(sample.gt_fwd),
                              flow_to_tensor(sample.gt_bwd), valid_to_tensor(sample.gt_bwd), cfg);
  const Tensor sim_term = ops::scale(
      ops::add(similarity_loss(fwd.pseudo_feat, feat2.detach()), similarity_loss(bwd.pseudo_feat, feat1.detach())),
      0.5F);
  const Tensor total = total_loss(LossMode::bidirectional, flow_term, sim_term, cfg.lambda);

  LossRecord record;
  record.total = total.item();
  record.flow = flow_term.item();
  record.sim = sim_term.item();
  if (grad_scale != 0.0 && std::isfinite(record.total)) backward(ops::scale(total, static_cast<float>(grad_scale)));
  return record;
}

TrainResult train(std::span<const TrainSample> dataset, const TrainConfig& cfg,
                  const std::function<void(const LossRecord&)>& on_step) {
  cfg.model.validate();
  cfg.loss.validate();
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  if (cfg.steps < 0) throw std::invalid_argument("train: steps must be >= 0");
  if (cfg.batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
  if (cfg.checkpoint_every < 0) throw std::invalid_argument("train: checkpoint interval must be >= 0");

  TrainResult result{DCEIFlowNet(cfg.model, cfg.seed), {}};
  DCEIFlowNet& net = result.net;
  AdamW optimizer(net.parameters(), cfg.optimizer);

  std::vector<BidirectionalPair> pairs;
  pairs.reserve(dataset.size());
  for (const TrainSample& s : dataset) pairs.push_back(make_bidirectional_pair(s, cfg.model.event_bins));

  std::mt19937_64 rng(cfg.seed ^ 0x5DEECE66DULL);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();
  auto next_index = [&]() {
    if (cursor == order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    return order[cursor++];
  };

  const double grad_scale = 1.0 / cfg.batch_size;
  for (int step = 0; step < cfg.steps; ++step) {
    optimizer.zero_grad();
    LossRecord record;
    record.step = step;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const std::size_t i = next_index();
      const LossRecord part = bidirectional_step(net, pairs[i], dataset[i], cfg.loss, grad_scale);
      record.total += part.total * grad_scale;
      record.flow += part.flow * grad_scale;
      record.sim += part.sim * grad_scale;
    }
    if (!std::isfinite(record.total)) {
      if (!cfg.checkpoint_path.empty()) save_checkpoint(cfg.checkpoint_path, net);
      if (!cfg.log_path.empty()) write_loss_log(cfg.log_path, result.history);
      throw std::runtime_error("train: non-finite loss at step " + std::to_string(step) +
                               "; last good weights kept in the checkpoint");
    }
    optimizer.step();
    result.history.push_back(record);
    if (on_step) on_step(record);
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && !cfg.checkpoint_path.empty()) {
      save_checkpoint(cfg.checkpoint_path, net);
    }
  }
  if (!cfg.checkpoint_path.empty()) save_checkpoint(cfg.checkpoint_path, net);
  if (!cfg.log_path.empty()) write_loss_log(cfg.log_path, result.history);
  return result;
}

void write_loss_log(const std::filesystem::path& path, std::span<const LossRecord> history) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(std::numeric_limits<double>::max_digits10);
  out << "step,loss_total,loss_flow,loss_sim\n";
  for (const LossRecord& r : history) out << r.step << ',' << r.total << ',' << r.flow << ',' << r.sim << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

double mean_epe(const DCEIFlowNet& net, std::span<const TrainSample> samples) {
  if (samples.empty()) throw std::invalid_argument("mean_epe: no samples");
  double total = 0.0;
  for (const TrainSample& s : samples) total += epe(predict_flow(net, s.image1, s.events, 1.0), s.gt_fwd);
  return total / static_cast<double>(samples.size());
}

}  // namespace dceiflow
