#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "dceiflow/events.hpp"
#include "dceiflow/flow.hpp"
#include "dceiflow/image.hpp"
#include "dceiflow/losses.hpp"
#include "dceiflow/network.hpp"
#include "dceiflow/optim.hpp"
#include "dceiflow/simdata.hpp"

namespace dceiflow {

/// Frame pair with the events between them and flow in both directions.
struct TrainSample {
  Image image1;
  Image image2;
  EventStream events;
  FlowField gt_fwd;
  FlowField gt_bwd;
  double dt = 1.0;

  static TrainSample from(const SceneSample& sample);
};

struct DirectionInput {
  Tensor image;   // (1, 3, H, W)
  Tensor volume;  // (2B, H, W)
};

struct BidirectionalPair {
  DirectionInput forward;
  DirectionInput backward;
};

/// forward = (image1, voxelize(events)); backward = (image2, voxelize(reverse(events))).
BidirectionalPair make_bidirectional_pair(const TrainSample& sample, int bins = kDefaultEventBins);

/// Reads a directory written by write_dataset, in sample order.
std::vector<TrainSample> read_dataset(const std::filesystem::path& dir);

struct TrainConfig {
  ModelConfig model;
  LossConfig loss;
  AdamWOptions optimizer;
  int steps = 200;
  int batch_size = 1;  // samples accumulated per optimizer step
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::filesystem::path checkpoint_path;
  std::filesystem::path log_path;  // CSV: step,loss_total,loss_flow,loss_sim
};

struct LossRecord {
  int step = 0;
  double total = 0.0;
  double flow = 0.0;
  double sim = 0.0;
};

struct TrainResult {
  DCEIFlowNet net;
  std::vector<LossRecord> history;
};

/// Loss terms of one sample; gradients accumulate into the parameters
/// scaled by grad_scale when it is non-zero.
LossRecord bidirectional_step(const DCEIFlowNet& net, const BidirectionalPair& pair, const TrainSample& sample,
                              const LossConfig& cfg, double grad_scale);

/// Samples are visited in a seeded shuffled order, reshuffled every epoch.
/// A non-finite loss stops training with std::runtime_error after writing
/// the last good weights to cfg.checkpoint_path (when set).
TrainResult train(std::span<const TrainSample> dataset, const TrainConfig& cfg,
                  const std::function<void(const LossRecord&)>& on_step = {});

void write_loss_log(const std::filesystem::path& path, std::span<const LossRecord> history);

/// Mean dense EPE of the final iterate over the samples.
double mean_epe(const DCEIFlowNet& net, std::span<const TrainSample> samples);

}  // namespace dceiflow
