#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "dceiflow/events.hpp"
#include "dceiflow/flow.hpp"
#include "dceiflow/image.hpp"
#include "dceiflow/tensor.hpp"

namespace dceiflow {

enum class FusionVariant { conv, add };

std::string to_string(FusionVariant variant);
FusionVariant parse_fusion(std::string_view name);

struct ModelConfig {
  int feature_channels = 32;
  int gru_hidden = 64;
  int iterations = 6;
  int lookup_radius = 3;
  int pyramid_levels = 4;
  int downsample = 8;
  int event_bins = kDefaultEventBins;
  FusionVariant fusion = FusionVariant::conv;

  /// Throws std::invalid_argument when an invariant is violated.
  void validate() const;
  int lookup_channels() const { return pyramid_levels * (2 * lookup_radius + 1) * (2 * lookup_radius + 1); }
};

struct NamedParameter {
  std::string name;
  Tensor value;
};

class Conv2d {
 public:
  /// fan_in: weights and bias drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  /// relu: weights from U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero bias; keeps
  /// activation variance through stacks of rectified layers.
  enum class Init { fan_in, relu };

  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, std::mt19937_64& rng,
         Init init = Init::fan_in);

  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, std::vector<NamedParameter>& out) const;

  Tensor weight;
  Tensor bias;
  int stride = 1;
  int padding = 0;
};

/// relu(shortcut(x) + relu(conv2(relu(conv1(x))))), no normalization.
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(int in_channels, int out_channels, int stride, std::mt19937_64& rng);

  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, std::vector<NamedParameter>& out) const;

  Conv2d conv1;
  Conv2d conv2;
  std::optional<Conv2d> shortcut;
};

/// Stride-2 7x7 stem, six residual blocks (two of them stride 2) and a
/// 1x1 projection: (N, Ci, H, W) -> (N, C, H/8, W/8). Rectified layers use
/// the relu initialization, the projection the fan_in one.
class FeatureEncoder {
 public:
  FeatureEncoder() = default;
  FeatureEncoder(int in_channels, int out_channels, std::mt19937_64& rng);

  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, std::vector<NamedParameter>& out) const;

  Conv2d stem;
  std::vector<ResidualBlock> blocks;
  Conv2d head;
};

/// Builds the pseudo second-frame feature from the first-image and event
/// features.
class FusionModule {
 public:
  FusionModule() = default;
  FusionModule(FusionVariant variant, int channels, std::mt19937_64& rng);

  /// add:  image_feat + event_feat
  /// conv: fuse_conv([relu(image_conv(image_feat)), relu(event_conv(event_feat))]) + image_feat
  Tensor operator()(const Tensor& image_feat, const Tensor& event_feat) const;
  void collect(const std::string& prefix, std::vector<NamedParameter>& out) const;

  FusionVariant variant = FusionVariant::conv;
  Conv2d image_conv;
  Conv2d event_conv;
  Conv2d fuse_conv;
};

/// Levels of all-pairs feature correlation. Level k has shape
/// (h, w, h / 2^k, w / 2^k); level k+1 is level k average-pooled over the
/// last two dimensions.
struct CorrelationPyramid {
  std::vector<Tensor> levels;
};

/// feat1, feat2: (1, C, h, w) or (C, h, w). Level 0 is the full dot-product
/// table sum_c feat1(x, c) feat2(y, c).
CorrelationPyramid build_correlation(const Tensor& feat1, const Tensor& feat2, int levels = 4);

/// Samples every level at (x + flow(x)) / 2^k + delta for all delta in
/// [-radius, radius]^2, bilinearly, zero outside the grid. Output
/// (1, levels * (2r+1)^2, h, w); channel = level * (2r+1)^2 + (dy + r) * (2r+1) + (dx + r).
/// flow is (1, 2, h, w) at feature resolution and is treated as a constant.
Tensor lookup(const CorrelationPyramid& pyramid, const Tensor& flow, int radius);

/// Reference local correlation: feat1(x) . Warp{feat2, flow}(x + delta),
/// with the warp done by bilinear sampling at x + flow(x). Entries whose
/// x + delta leaves the grid are zero. Same channel layout as one lookup level.
Tensor local_correlation(const Tensor& feat1, const Tensor& feat2, const Tensor& flow, int radius);

/// Motion encoder, ConvGRU and flow head operating at 1/8 resolution.
class UpdateBlock {
 public:
  UpdateBlock() = default;
  UpdateBlock(const ModelConfig& cfg, std::mt19937_64& rng);

  struct Step {
    Tensor hidden;
    Tensor delta_flow;
  };

  /// tanh of a 1x1 projection of the first-image feature.
  Tensor initial_hidden(const Tensor& image1_feat) const;
  Step operator()(const Tensor& hidden, const Tensor& lookup_feats, const Tensor& flow, const Tensor& image1_feat,
                  const Tensor& event_feat) const;
  /// h' = (1 - z) h + z q with z, r sigmoid gates and q = tanh candidate.
  Tensor gru(const Tensor& hidden, const Tensor& input) const;
  void collect(const std::string& prefix, std::vector<NamedParameter>& out) const;

  Conv2d hidden_init;
  Conv2d motion1;
  Conv2d motion2;
  Conv2d gate_update;
  Conv2d gate_reset;
  Conv2d candidate;
  Conv2d head1;
  Conv2d head2;
  /// Applied to the lookup features before the motion encoder: 1/C.
  float correlation_scale = 1.0F;
};

class DCEIFlowNet {
 public:
  DCEIFlowNet() = default;
  DCEIFlowNet(const ModelConfig& cfg, std::uint64_t seed);

  struct Prediction {
    /// One (1, 2, H, W) full-resolution flow per iteration; the last is the estimate.
    std::vector<Tensor> flows;
    Tensor image1_feat;
    Tensor event_feat;
    Tensor pseudo_feat;
  };

  /// image: (1, 3, H, W) with values in [0, 1].
  Tensor encode_image(const Tensor& image) const;
  /// volume: (2B, H, W) or (1, 2B, H, W).
  Tensor encode_events(const Tensor& volume) const;
  Tensor fuse(const Tensor& image1_feat, const Tensor& event_feat) const;

  Prediction forward(const Tensor& image1, const Tensor& volume) const;
  Prediction forward_features(const Tensor& image1_feat, const Tensor& event_feat) const;

  const ModelConfig& config() const { return cfg_; }
  void set_iterations(int iterations);
  std::vector<NamedParameter> parameters() const;

  FeatureEncoder image_encoder;
  FeatureEncoder event_encoder;
  FusionModule fusion;
  UpdateBlock update;

 private:
  ModelConfig cfg_;
};

/// Runs the network on the events inside [t_start, t_start + dt * window]
/// and returns the final full-resolution flow.
FlowField predict_flow(const DCEIFlowNet& net, const Image& image1, const EventStream& events, double dt = 1.0);

/// Binary checkpoint: "DCEI", u32 version, u32 parameter count, then per
/// parameter u16 name length, name bytes, u8 rank, u32 extents, f32 data.
void save_checkpoint(const std::filesystem::path& path, const DCEIFlowNet& net);
/// Rebuilds the architecture from the stored shapes and verifies every
/// expected parameter name and shape. The iteration count is not stored.
DCEIFlowNet load_checkpoint(const std::filesystem::path& path, int iterations = 6);

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace dceiflow
