#include "dceiflow/network.hpp"

#include <cmath>
#include <stdexcept>

#include "dceiflow/ops.hpp"

namespace dceiflow {

std::string to_string(FusionVariant variant) { return variant == FusionVariant::conv ? "conv" : "add"; }

FusionVariant parse_fusion(std::string_view name) {
  if (name == "conv") return FusionVariant::conv;
  if (name == "add") return FusionVariant::add;
  throw std::invalid_argument("unknown fusion variant '" + std::string(name) + "' (expected conv or add)");
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("model config: ") + what);
  };
  require(iterations >= 1, "iterations must be >= 1");
  require(lookup_radius >= 1, "lookup radius must be >= 1");
  require(feature_channels >= 8 && feature_channels % 4 == 0, "feature channels must be >= 8 and a multiple of 4");
  require(gru_hidden >= 4, "gru hidden width must be >= 4");
  require(pyramid_levels == 4, "pyramid levels is fixed at 4");
  require(downsample == 8, "downsample factor is fixed at 8");
  require(event_bins >= 1, "event bins must be >= 1");
}

// ---------------------------------------------------------------------------

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride_, int padding_, std::mt19937_64& rng,
               Init init)
    : stride(stride_), padding(padding_) {
  const int fan_in = in_channels * kernel * kernel;
  const float gain = init == Init::relu ? std::sqrt(6.0F) : 1.0F;
  const float bound = gain / std::sqrt(static_cast<float>(fan_in));
  std::uniform_real_distribution<float> dist(-bound, bound);
  std::vector<float> w(static_cast<std::size_t>(out_channels) * fan_in);
  for (float& v : w) v = dist(rng);
  std::vector<float> b(static_cast<std::size_t>(out_channels));
  if (init == Init::fan_in)
    for (float& v : b) v = dist(rng);
  weight = Tensor({out_channels, in_channels, kernel, kernel}, std::move(w), true);
  bias = Tensor({out_channels}, std::move(b), true);
}

Tensor Conv2d::operator()(const Tensor& x) const { return ops::conv2d(x, weight, bias, stride, padding); }

void Conv2d::collect(const std::string& prefix, std::vector<NamedParameter>& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

ResidualBlock::ResidualBlock(int in_channels, int out_channels, int stride, std::mt19937_64& rng)
    : conv1(in_channels, out_channels, 3, stride, 1, rng, Conv2d::Init::relu),
      conv2(out_channels, out_channels, 3, 1, 1, rng, Conv2d::Init::relu) {
  if (stride != 1 || in_channels != out_channels) {
    shortcut.emplace(in_channels, out_channels, 1, stride, 0, rng, Conv2d::Init::relu);
  }
}

Tensor ResidualBlock::operator()(const Tensor& x) const {
  Tensor y = ops::relu(conv1(x));
  y = ops::relu(conv2(y));
  const Tensor skip = shortcut ? (*shortcut)(x) : x;
  return ops::relu(ops::add(skip, y));
}

void ResidualBlock::collect(const std::string& prefix, std::vector<NamedParameter>& out) const {
  conv1.collect(prefix + ".conv1", out);
  conv2.collect(prefix + ".conv2", out);
  if (shortcut) shortcut->collect(prefix + ".shortcut", out);
}

FeatureEncoder::FeatureEncoder(int in_channels, int out_channels, std::mt19937_64& rng) {
  const int c1 = out_channels / 2, c2 = 3 * out_channels / 4, c3 = out_channels;
  stem = Conv2d(in_channels, c1, 7, 2, 3, rng, Conv2d::Init::relu);
  blocks.emplace_back(c1, c1, 1, rng);
  blocks.emplace_back(c1, c1, 1, rng);
  blocks.emplace_back(c1, c2, 2, rng);
  blocks.emplace_back(c2, c2, 1, rng);
  blocks.emplace_back(c2, c3, 2, rng);
  blocks.emplace_back(c3, c3, 1, rng);
  head = Conv2d(c3, out_channels, 1, 1, 0, rng);
}

Tensor FeatureEncoder::operator()(const Tensor& x) const {
  Tensor y = ops::relu(stem(x));
  for (const ResidualBlock& block : blocks) y = block(y);
  return head(y);
}

void FeatureEncoder::collect(const std::string& prefix, std::vector<NamedParameter>& out) const {
  stem.collect(prefix + ".stem", out);
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + ".block" + std::to_string(i), out);
  head.collect(prefix + ".head", out);
}

FusionModule::FusionModule(FusionVariant variant_, int channels, std::mt19937_64& rng) : variant(variant_) {
  if (variant == FusionVariant::conv) {
    image_conv = Conv2d(channels, channels, 3, 1, 1, rng);
    event_conv = Conv2d(channels, channels, 3, 1, 1, rng);
    fuse_conv = Conv2d(2 * channels, channels, 3, 1, 1, rng);
  }
}

Tensor FusionModule::operator()(const Tensor& image_feat, const Tensor& event_feat) const {
  if (image_feat.shape() != event_feat.shape()) {
    throw std::invalid_argument("fuse: feature shapes differ " + shape_to_string(image_feat.shape()) + " vs " +
                                shape_to_string(event_feat.shape()));
  }
  if (variant == FusionVariant::add) return ops::add(image_feat, event_feat);
  const Tensor parts[] = {ops::relu(image_conv(image_feat)), ops::relu(event_conv(event_feat))};
  return ops::add(fuse_conv(ops::concat(parts, 1)), image_feat);
}

void FusionModule::collect(const std::string& prefix, std::vector<NamedParameter>& out) const {
  if (variant != FusionVariant::conv) return;
  image_conv.collect(prefix + ".image_conv", out);
  event_conv.collect(prefix + ".event_conv", out);
  fuse_conv.collect(prefix + ".fuse_conv", out);
}

// ---------------------------------------------------------------------------

namespace {

// Accepts (C, h, w) or (1, C, h, w); returns the (C, h, w) extents.
std::array<int, 3> feature_extents(const Tensor& feat, const char* what) {
  if (feat.rank() == 3) return {feat.dim(0), feat.dim(1), feat.dim(2)};
  if (feat.rank() == 4 && feat.dim(0) == 1) return {feat.dim(1), feat.dim(2), feat.dim(3)};
  throw std::invalid_argument(std::string(what) + ": expected (C,h,w) or (1,C,h,w), got " + shape_to_string(feat.shape()));
}

void check_flow(const Tensor& flow, int h, int w, const char* what) {
  if (flow.shape() != Shape{1, 2, h, w}) {
    throw std::invalid_argument(std::string(what) + ": flow must be (1,2," + std::to_string(h) + "," +
                                std::to_string(w) + "), got " + shape_to_string(flow.shape()));
  }
  for (float v : flow.data())
    if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + ": non-finite flow");
}

}  // namespace

CorrelationPyramid build_correlation(const Tensor& feat1, const Tensor& feat2, int levels) {
  const auto [c, h, w] = feature_extents(feat1, "build_correlation");
  if (feature_extents(feat2, "build_correlation") != std::array<int, 3>{c, h, w}) {
    throw std::invalid_argument("build_correlation: feature shapes differ " + shape_to_string(feat1.shape()) + " vs " +
                                shape_to_string(feat2.shape()));
  }
  if (levels < 1) throw std::invalid_argument("build_correlation: levels must be >= 1");
  const Tensor a = ops::transpose2d(ops::reshape(feat1, {c, h * w}));
  const Tensor b = ops::reshape(feat2, {c, h * w});
  CorrelationPyramid pyramid;
  pyramid.levels.push_back(ops::reshape(ops::matmul(a, b), {h, w, h, w}));
  for (int k = 1; k < levels; ++k) pyramid.levels.push_back(ops::avg_pool2(pyramid.levels.back()));
  return pyramid;
}

Tensor lookup(const CorrelationPyramid& pyramid, const Tensor& flow, int radius) {
  if (pyramid.levels.empty()) throw std::invalid_argument("lookup: empty pyramid");
  if (radius < 0) throw std::invalid_argument("lookup: radius must be >= 0");
  const Tensor& base = pyramid.levels.front();
  const int h = base.dim(0), w = base.dim(1);
  check_flow(flow, h, w, "lookup");
  const int diameter = 2 * radius + 1;
  const int window = diameter * diameter;
  const auto f = flow.data();
  const std::size_t hw = static_cast<std::size_t>(h) * w;

  std::vector<Tensor> sampled;
  for (std::size_t k = 0; k < pyramid.levels.size(); ++k) {
    const Tensor& level = pyramid.levels[k];
    const int hk = level.dim(2), wk = level.dim(3);
    const float inv_scale = 1.0F / static_cast<float>(1 << k);
    Tensor coords({h * w, 2, diameter, diameter});
    float* pc = coords.mutable_data().data();
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        const float cx = (static_cast<float>(x) + f[i]) * inv_scale;
        const float cy = (static_cast<float>(y) + f[hw + i]) * inv_scale;
        float* px = pc + i * 2 * window;
        float* py = px + window;
        for (int dy = -radius; dy <= radius; ++dy)
          for (int dx = -radius; dx <= radius; ++dx) {
            const int o = (dy + radius) * diameter + (dx + radius);
            px[o] = cx + static_cast<float>(dx);
            py[o] = cy + static_cast<float>(dy);
          }
      }
    const Tensor samples = ops::grid_sample(ops::reshape(level, {h * w, 1, hk, wk}), coords);
    sampled.push_back(ops::reshape(ops::transpose2d(ops::reshape(samples, {h * w, window})), {1, window, h, w}));
  }
  return ops::concat(sampled, 1);
}

Tensor local_correlation(const Tensor& feat1, const Tensor& feat2, const Tensor& flow, int radius) {
  const auto [c, h, w] = feature_extents(feat1, "local_correlation");
  if (feature_extents(feat2, "local_correlation") != std::array<int, 3>{c, h, w}) {
    throw std::invalid_argument("local_correlation: feature shapes differ");
  }
  check_flow(flow, h, w, "local_correlation");
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  Tensor coords({1, 2, h, w});
  float* pc = coords.mutable_data().data();
  const auto f = flow.data();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      pc[i] = static_cast<float>(x) + f[i];
      pc[hw + i] = static_cast<float>(y) + f[hw + i];
    }
  const Tensor warped = ops::grid_sample(ops::reshape(feat2.detach(), {1, c, h, w}), coords);
  const auto p1 = feat1.data();
  const auto p2 = warped.data();
  const int diameter = 2 * radius + 1;
  Tensor out({1, diameter * diameter, h, w});
  float* po = out.mutable_data().data();
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx) {
      const int o = (dy + radius) * diameter + (dx + radius);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const int ty = y + dy, tx = x + dx;
          if (ty < 0 || ty >= h || tx < 0 || tx >= w) continue;
          double acc = 0.0;
          for (int ch = 0; ch < c; ++ch) {
            acc += static_cast<double>(p1[ch * hw + static_cast<std::size_t>(y) * w + x]) *
                   p2[ch * hw + static_cast<std::size_t>(ty) * w + tx];
          }
          po[o * hw + static_cast<std::size_t>(y) * w + x] = static_cast<float>(acc);
        }
    }
  return out;
}

// ---------------------------------------------------------------------------

UpdateBlock::UpdateBlock(const ModelConfig& cfg, std::mt19937_64& rng)
    : correlation_scale(1.0F / static_cast<float>(cfg.feature_channels)) {
  const int hidden = cfg.gru_hidden;
  const int motion = hidden;
  const int context = 2 * cfg.feature_channels;
  hidden_init = Conv2d(cfg.feature_channels, hidden, 1, 1, 0, rng);
  motion1 = Conv2d(cfg.lookup_channels() + 2, motion, 3, 1, 1, rng);
  motion2 = Conv2d(motion, motion - 2, 3, 1, 1, rng);
  const int gru_in = hidden + motion + context;
  gate_update = Conv2d(gru_in, hidden, 3, 1, 1, rng);
  gate_reset = Conv2d(gru_in, hidden, 3, 1, 1, rng);
  candidate = Conv2d(gru_in, hidden, 3, 1, 1, rng);
  head1 = Conv2d(hidden, hidden, 3, 1, 1, rng);
  head2 = Conv2d(hidden, 2, 3, 1, 1, rng);
}

Tensor UpdateBlock::initial_hidden(const Tensor& image1_feat) const { return ops::tanh(hidden_init(image1_feat)); }

Tensor UpdateBlock::gru(const Tensor& hidden, const Tensor& input) const {
  const Tensor hx_parts[] = {hidden, input};
  const Tensor hx = ops::concat(hx_parts, 1);
  const Tensor z = ops::sigmoid(gate_update(hx));
  const Tensor r = ops::sigmoid(gate_reset(hx));
  const Tensor rh_parts[] = {ops::mul(r, hidden), input};
  const Tensor q = ops::tanh(candidate(ops::concat(rh_parts, 1)));
  // (1 - z) h + z q  ==  h + z (q - h)
  return ops::add(hidden, ops::mul(z, ops::sub(q, hidden)));
}

UpdateBlock::Step UpdateBlock::operator()(const Tensor& hidden, const Tensor& lookup_feats, const Tensor& flow,
                                          const Tensor& image1_feat, const Tensor& event_feat) const {
  const Tensor motion_in[] = {ops::scale(lookup_feats, correlation_scale), flow};
  Tensor m = ops::relu(motion1(ops::concat(motion_in, 1)));
  m = ops::relu(motion2(m));
  const Tensor gru_in[] = {m, flow, image1_feat, event_feat};
  Tensor h = gru(hidden, ops::concat(gru_in, 1));
  Tensor delta = head2(ops::relu(head1(h)));
  return {std::move(h), std::move(delta)};
}

void UpdateBlock::collect(const std::string& prefix, std::vector<NamedParameter>& out) const {
  hidden_init.collect(prefix + ".hidden_init", out);
  motion1.collect(prefix + ".motion1", out);
  motion2.collect(prefix + ".motion2", out);
  gate_update.collect(prefix + ".gate_update", out);
  gate_reset.collect(prefix + ".gate_reset", out);
  candidate.collect(prefix + ".candidate", out);
  head1.collect(prefix + ".head1", out);
  head2.collect(prefix + ".head2", out);
}

// ---------------------------------------------------------------------------

DCEIFlowNet::DCEIFlowNet(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  image_encoder = FeatureEncoder(3, cfg.feature_channels, rng);
  event_encoder = FeatureEncoder(2 * cfg.event_bins, cfg.feature_channels, rng);
  fusion = FusionModule(cfg.fusion, cfg.feature_channels, rng);
  update = UpdateBlock(cfg, rng);
}

void DCEIFlowNet::set_iterations(int iterations) {
  if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
  cfg_.iterations = iterations;
}

std::vector<NamedParameter> DCEIFlowNet::parameters() const {
  std::vector<NamedParameter> out;
  image_encoder.collect("image_encoder", out);
  event_encoder.collect("event_encoder", out);
  fusion.collect("fusion", out);
  update.collect("update", out);
  return out;
}

namespace {

void check_spatial(int h, int w, int factor, const char* what) {
  if (h <= 0 || w <= 0 || h % factor != 0 || w % factor != 0) {
    throw std::invalid_argument(std::string(what) + ": spatial size " + std::to_string(h) + "x" + std::to_string(w) +
                                " is not divisible by " + std::to_string(factor) + " (pad the input)");
  }
}

}  // namespace

Tensor DCEIFlowNet::encode_image(const Tensor& image) const {
  if (image.rank() != 4 || image.dim(0) != 1 || image.dim(1) != 3) {
    throw std::invalid_argument("encode_image: expected (1,3,H,W), got " + shape_to_string(image.shape()));
  }
  check_spatial(image.dim(2), image.dim(3), cfg_.downsample, "encode_image");
  return image_encoder(ops::add_scalar(ops::scale(image, 2.0F), -1.0F));
}

Tensor DCEIFlowNet::encode_events(const Tensor& volume) const {
  Tensor v = volume.rank() == 3 ? ops::reshape(volume, {1, volume.dim(0), volume.dim(1), volume.dim(2)}) : volume;
  if (v.rank() != 4 || v.dim(0) != 1 || v.dim(1) != 2 * cfg_.event_bins) {
    throw std::invalid_argument("encode_events: expected (" + std::to_string(2 * cfg_.event_bins) +
                                ",H,W) volume, got " + shape_to_string(volume.shape()));
  }
  check_spatial(v.dim(2), v.dim(3), cfg_.downsample, "encode_events");
  return event_encoder(v);
}

Tensor DCEIFlowNet::fuse(const Tensor& image1_feat, const Tensor& event_feat) const {
  return fusion(image1_feat, event_feat);
}

DCEIFlowNet::Prediction DCEIFlowNet::forward(const Tensor& image1, const Tensor& volume) const {
  const int h = image1.rank() == 4 ? image1.dim(2) : -1;
  const int w = image1.rank() == 4 ? image1.dim(3) : -1;
  if (volume.dim(-2) != h || volume.dim(-1) != w) {
    throw std::invalid_argument("forward: image " + shape_to_string(image1.shape()) + " and event volume " +
                                shape_to_string(volume.shape()) + " differ in size");
  }
  return forward_features(encode_image(image1), encode_events(volume));
}

DCEIFlowNet::Prediction DCEIFlowNet::forward_features(const Tensor& image1_feat, const Tensor& event_feat) const {
  Prediction pred;
  pred.image1_feat = image1_feat;
  pred.event_feat = event_feat;
  pred.pseudo_feat = fuse(image1_feat, event_feat);
  const CorrelationPyramid pyramid = build_correlation(image1_feat, pred.pseudo_feat, cfg_.pyramid_levels);
  const int h = image1_feat.dim(2), w = image1_feat.dim(3);

  Tensor hidden = update.initial_hidden(image1_feat);
  Tensor flow({1, 2, h, w});
  for (int i = 0; i < cfg_.iterations; ++i) {
    // Each iterate refines a constant copy of the previous estimate; the
    // gradient reaches earlier iterations through the hidden state only.
    const Tensor base = flow.detach();
    const Tensor corr = lookup(pyramid, base, cfg_.lookup_radius);
    UpdateBlock::Step step = update(hidden, corr, base, image1_feat, event_feat);
    hidden = step.hidden;
    flow = ops::add(base, step.delta_flow);
    const auto factor = static_cast<float>(cfg_.downsample);
    pred.flows.push_back(ops::scale(ops::upsample_bilinear(flow, cfg_.downsample), factor));
  }
  return pred;
}

FlowField predict_flow(const DCEIFlowNet& net, const Image& image1, const EventStream& events, double dt) {
  if (events.width() != image1.width || events.height() != image1.height) {
    throw std::invalid_argument("predict_flow: image is " + std::to_string(image1.width) + "x" +
                                std::to_string(image1.height) + " but events are " + std::to_string(events.width()) +
                                "x" + std::to_string(events.height()));
  }
  const EventStream window = clip_prefix(events, dt);
  const EventVolume volume = voxelize(window, net.config().event_bins);
  const auto pred = net.forward(image_to_tensor(image1), volume.data);
  return flow_from_tensor(pred.flows.back());
}

}  // namespace dceiflow
