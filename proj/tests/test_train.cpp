#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "dceiflow/losses.hpp"
#include "dceiflow/ops.hpp"
#include "dceiflow/optim.hpp"
#include "dceiflow/train.hpp"

using namespace dceiflow;

namespace {

ModelConfig tiny_model() {
  ModelConfig m;
  m.feature_channels = 8;
  m.gru_hidden = 8;
  m.iterations = 2;
  m.lookup_radius = 1;
  return m;
}

SceneConfig tiny_scenes() {
  SceneConfig cfg;
  cfg.width = 32;
  cfg.height = 32;
  cfg.max_speed = 3.0;
  cfg.max_patches = 0;
  return cfg;
}

std::vector<TrainSample> tiny_dataset(int n, std::uint64_t seed = 1) {
  const double dts[] = {1.0};
  std::vector<TrainSample> out;
  for (const SceneSample& s : make_dataset(n, tiny_scenes(), dts, seed)) out.push_back(TrainSample::from(s));
  return out;
}

TrainConfig tiny_config(int steps) {
  TrainConfig cfg;
  cfg.model = tiny_model();
  cfg.steps = steps;
  cfg.seed = 5;
  return cfg;
}

double channel_mass(const Tensor& volume, int first, int count) {
  const std::size_t plane = static_cast<std::size_t>(volume.dim(1)) * volume.dim(2);
  const auto d = volume.data();
  return std::accumulate(d.begin() + static_cast<std::ptrdiff_t>(first * plane),
                         d.begin() + static_cast<std::ptrdiff_t>((first + count) * plane), 0.0);
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("dceiflow_train_" + name);
}

std::vector<std::vector<float>> snapshot(const DCEIFlowNet& net) {
  std::vector<std::vector<float>> out;
  for (const auto& p : net.parameters()) out.emplace_back(p.value.data().begin(), p.value.data().end());
  return out;
}

std::vector<std::vector<float>> gradients(const DCEIFlowNet& net) {
  std::vector<std::vector<float>> out;
  for (const auto& p : net.parameters()) out.emplace_back(p.value.grad().begin(), p.value.grad().end());
  return out;
}

}  // namespace

TEST(BidirectionalPair, ReversalSwapsPolarityCounts) {
  const TrainSample s = tiny_dataset(1)[0];
  ASSERT_FALSE(s.events.empty());
  const BidirectionalPair pair = make_bidirectional_pair(s, 5);
  std::size_t positive = 0;
  for (const Event& e : s.events.events()) positive += e.p > 0;
  const std::size_t negative = s.events.size() - positive;
  EXPECT_NEAR(channel_mass(pair.forward.volume, 0, 5), static_cast<double>(positive), 1e-3);
  EXPECT_NEAR(channel_mass(pair.backward.volume, 0, 5), static_cast<double>(negative), 1e-3);
  EXPECT_NEAR(channel_mass(pair.backward.volume, 5, 5), static_cast<double>(positive), 1e-3);
  EXPECT_EQ(pair.forward.image.shape(), (Shape{1, 3, 32, 32}));
}

TEST(BidirectionalPair, StaticSceneHasZeroFlowAndEmptyVolumes) {
  Scene scene = random_scene(tiny_scenes(), 4);
  scene.vx = scene.vy = 0.0;
  const TrainSample s = TrainSample::from(make_sample(scene, 1.0));
  const BidirectionalPair pair = make_bidirectional_pair(s);
  for (float v : pair.forward.volume.data()) EXPECT_EQ(v, 0.0F);
  for (float v : pair.backward.volume.data()) EXPECT_EQ(v, 0.0F);
  for (std::size_t i = 0; i < s.gt_fwd.u.size(); ++i) {
    EXPECT_EQ(s.gt_fwd.u.values[i], 0.0F);
    EXPECT_EQ(s.gt_bwd.v.values[i], 0.0F);
  }
}

TEST(BidirectionalPair, TranslationBackwardGroundTruthIsNegated) {
  const TrainSample s = tiny_dataset(1, 8)[0];
  for (std::size_t i = 0; i < s.gt_fwd.u.size(); ++i) {
    EXPECT_EQ(s.gt_bwd.u.values[i], -s.gt_fwd.u.values[i]);
    EXPECT_EQ(s.gt_bwd.v.values[i], -s.gt_fwd.v.values[i]);
  }
}

TEST(AdamW, ZeroGradientOnlyDecays) {
  Tensor p({3}, {1.0F, -2.0F, 0.5F}, true);
  AdamWOptions opt;
  opt.lr = 0.1;
  opt.weight_decay = 0.01;
  AdamW adam({{"p", p}}, opt);
  adam.zero_grad();
  adam.step();
  const float expected[] = {1.0F, -2.0F, 0.5F};
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(p.data()[i], expected[i] * (1.0 - 0.1 * 0.01), 1e-7);
  }
}

TEST(AdamW, FirstStepMovesByLearningRateAgainstGradient) {
  Tensor p({4}, {0.0F, 1.0F, -1.0F, 3.0F}, true);
  AdamWOptions opt;
  opt.lr = 1e-3;
  opt.weight_decay = 0.0;
  AdamW adam({{"p", p}}, opt);
  const float g[] = {0.5F, -2.0F, 1e-3F, -7.0F};
  auto grad = p.mutable_grad();
  for (int i = 0; i < 4; ++i) grad[i] = g[i];
  const float before[] = {0.0F, 1.0F, -1.0F, 3.0F};
  adam.step();
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR(p.data()[i] - before[i], -1e-3 * (g[i] > 0 ? 1.0 : -1.0), 1e-7) << i;
  }
}

TEST(AdamW, MatchesTextbookAdamOnScalars) {
  Tensor p({2}, {0.3F, -1.2F}, true);
  AdamWOptions opt;
  opt.lr = 1e-2;
  opt.weight_decay = 0.0;
  AdamW adam({{"p", p}}, opt);
  double x[2] = {0.3, -1.2}, m[2] = {0, 0}, v[2] = {0, 0};
  for (int t = 1; t <= 20; ++t) {
    auto grad = p.mutable_grad();
    for (int i = 0; i < 2; ++i) {
      // Gradient of a quadratic bowl evaluated at the current parameter.
      const double g = 2.0 * (static_cast<double>(p.data()[i]) - 0.7 * i);
      grad[i] = static_cast<float>(g);
      const double gf = grad[i];
      m[i] = 0.9 * m[i] + 0.1 * gf;
      v[i] = 0.999 * v[i] + 0.001 * gf * gf;
      x[i] -= 1e-2 * (m[i] / (1 - std::pow(0.9, t))) / (std::sqrt(v[i] / (1 - std::pow(0.999, t))) + 1e-8);
    }
    adam.step();
    for (int i = 0; i < 2; ++i) ASSERT_NEAR(p.data()[i], x[i], 1e-6) << "step " << t;
  }
  EXPECT_EQ(adam.step_count(), 20);
}

TEST(AdamW, RejectsNonFiniteGradient) {
  Tensor p({2}, {1.0F, 2.0F}, true);
  AdamW adam({{"p", p}});
  p.mutable_grad()[1] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(adam.step(), std::runtime_error);
  EXPECT_EQ(p.data()[0], 1.0F);
  EXPECT_EQ(p.data()[1], 2.0F);
  EXPECT_EQ(adam.step_count(), 0);
}

TEST(AdamW, RejectsBadOptions) {
  Tensor p({1}, true);
  AdamWOptions opt;
  opt.lr = 0.0;
  EXPECT_THROW(AdamW({{"p", p}}, opt), std::invalid_argument);
  opt = {};
  opt.beta1 = 1.0;
  EXPECT_THROW(AdamW({{"p", p}}, opt), std::invalid_argument);
}

TEST(BidirectionalStep, DirectionsShareWeights) {
  const TrainSample s = tiny_dataset(1, 3)[0];
  const DCEIFlowNet net(tiny_model(), 9);
  const BidirectionalPair pair = make_bidirectional_pair(s);
  LossConfig cfg;
  cfg.lambda = 0.0;
  for (auto& p : net.parameters()) p.value.zero_grad();
  bidirectional_step(net, pair, s, cfg, 1.0);
  const auto joint = gradients(net);

  // The same gradient, accumulated from each direction on its own.
  for (auto& p : net.parameters()) p.value.zero_grad();
  const DirectionInput* inputs[] = {&pair.forward, &pair.backward};
  const FlowField* gts[] = {&s.gt_fwd, &s.gt_bwd};
  for (int d = 0; d < 2; ++d) {
    Tape tape;
    TapeScope scope(tape);
    const auto pred = net.forward(inputs[d]->image, inputs[d]->volume);
    backward(ops::scale(flow_loss(pred.flows, flow_to_tensor(*gts[d]), valid_to_tensor(*gts[d]), cfg), 0.5F));
  }
  const auto separate = gradients(net);
  ASSERT_EQ(joint.size(), separate.size());
  double worst = 0.0, largest = 0.0;
  for (std::size_t k = 0; k < joint.size(); ++k)
    for (std::size_t i = 0; i < joint[k].size(); ++i) {
      worst = std::max(worst, static_cast<double>(std::abs(joint[k][i] - separate[k][i])));
      largest = std::max(largest, static_cast<double>(std::abs(joint[k][i])));
    }
  EXPECT_GT(largest, 0.0);
  EXPECT_LE(worst, 1e-5 * largest);
}

TEST(BidirectionalStep, SimilarityTermFollowsLambda) {
  const TrainSample s = tiny_dataset(1, 3)[0];
  const DCEIFlowNet net(tiny_model(), 9);
  const BidirectionalPair pair = make_bidirectional_pair(s);
  LossConfig cfg;
  cfg.lambda = 0.0;
  const LossRecord a = bidirectional_step(net, pair, s, cfg, 0.0);
  cfg.lambda = 100.0;
  const LossRecord b = bidirectional_step(net, pair, s, cfg, 0.0);
  EXPECT_EQ(a.flow, b.flow);
  EXPECT_EQ(a.sim, b.sim);
  EXPECT_NEAR(a.total, a.flow, 1e-6 * a.flow);
  EXPECT_NEAR(b.total, b.flow + 100.0 * b.sim, 1e-5 * b.total);
}

TEST(Train, ZeroStepsKeepsInitialization) {
  const auto ds = tiny_dataset(2);
  TrainConfig cfg = tiny_config(0);
  cfg.checkpoint_path = temp_path("zero.ckpt");
  const TrainResult r = train(ds, cfg);
  EXPECT_TRUE(r.history.empty());
  const auto init = temp_path("init.ckpt");
  save_checkpoint(init, DCEIFlowNet(cfg.model, cfg.seed));
  EXPECT_EQ(read_file(cfg.checkpoint_path), read_file(init));
  std::filesystem::remove(cfg.checkpoint_path);
  std::filesystem::remove(init);
}

TEST(Train, IdenticalSeedsGiveIdenticalRuns) {
  const auto ds = tiny_dataset(3);
  TrainConfig cfg = tiny_config(6);
  cfg.batch_size = 2;
  const TrainResult a = train(ds, cfg), b = train(ds, cfg);
  ASSERT_EQ(a.history.size(), 6U);
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].total, b.history[i].total);
    EXPECT_EQ(a.history[i].flow, b.history[i].flow);
    EXPECT_EQ(a.history[i].sim, b.history[i].sim);
  }
  EXPECT_EQ(snapshot(a.net), snapshot(b.net));
  cfg.seed = 6;
  EXPECT_NE(train(ds, cfg).history.back().total, a.history.back().total);
}

TEST(Train, DisablingSimilarityChangesTheCurve) {
  const auto ds = tiny_dataset(2);
  TrainConfig cfg = tiny_config(4);
  const TrainResult with_sim = train(ds, cfg);
  cfg.loss.lambda = 0.0;
  const TrainResult without = train(ds, cfg);
  EXPECT_EQ(without.history[0].total, without.history[0].flow);
  EXPECT_EQ(without.history[0].flow, with_sim.history[0].flow);
  EXPECT_NE(without.history.back().flow, with_sim.history.back().flow);
}

TEST(Train, LossDecreasesOnToyTranslations) {
  const auto ds = tiny_dataset(4, 12);
  TrainConfig cfg = tiny_config(200);
  cfg.loss.lambda = 0.0;
  const TrainResult r = train(ds, cfg);
  ASSERT_EQ(r.history.size(), 200U);
  auto window_mean = [&](std::size_t from) {
    double total = 0.0;
    for (std::size_t i = from; i < from + 20; ++i) total += r.history[i].total;
    return total / 20.0;
  };
  EXPECT_LT(window_mean(180), window_mean(0));
}

TEST(Train, WritesLogAndCheckpoints) {
  const auto ds = tiny_dataset(2);
  TrainConfig cfg = tiny_config(3);
  cfg.checkpoint_path = temp_path("run.ckpt");
  cfg.log_path = temp_path("run.csv");
  cfg.checkpoint_every = 2;
  const TrainResult r = train(ds, cfg);
  std::ifstream log(cfg.log_path);
  std::string line;
  std::getline(log, line);
  EXPECT_EQ(line, "step,loss_total,loss_flow,loss_sim");
  int rows = 0;
  while (std::getline(log, line)) ++rows;
  EXPECT_EQ(rows, 3);
  const DCEIFlowNet back = load_checkpoint(cfg.checkpoint_path, cfg.model.iterations);
  EXPECT_EQ(snapshot(back), snapshot(r.net));
  std::filesystem::remove(cfg.checkpoint_path);
  std::filesystem::remove(cfg.log_path);
}

TEST(Train, NonFiniteLossStopsWithLastGoodWeights) {
  auto ds = tiny_dataset(1);
  ds[0].gt_fwd.u.values[0] = std::numeric_limits<float>::quiet_NaN();
  TrainConfig cfg = tiny_config(3);
  cfg.checkpoint_path = temp_path("nan.ckpt");
  EXPECT_THROW(train(ds, cfg), std::runtime_error);
  ASSERT_TRUE(std::filesystem::exists(cfg.checkpoint_path));
  EXPECT_EQ(snapshot(load_checkpoint(cfg.checkpoint_path, cfg.model.iterations)),
            snapshot(DCEIFlowNet(cfg.model, cfg.seed)));
  std::filesystem::remove(cfg.checkpoint_path);
}

TEST(Train, RejectsBadConfiguration) {
  const auto ds = tiny_dataset(1);
  TrainConfig cfg = tiny_config(1);
  EXPECT_THROW(train(std::span<const TrainSample>{}, cfg), std::invalid_argument);
  cfg.batch_size = 0;
  EXPECT_THROW(train(ds, cfg), std::invalid_argument);
  cfg = tiny_config(-1);
  EXPECT_THROW(train(ds, cfg), std::invalid_argument);
  cfg = tiny_config(1);
  cfg.loss.phi = 0.0;
  EXPECT_THROW(train(ds, cfg), std::invalid_argument);
}

TEST(MeanEpe, ZeroForPerfectPredictorIsUnreachableButFinite) {
  const auto ds = tiny_dataset(2);
  const double e = mean_epe(DCEIFlowNet(tiny_model(), 1), ds);
  EXPECT_TRUE(std::isfinite(e));
  EXPECT_GT(e, 0.0);
  EXPECT_THROW(mean_epe(DCEIFlowNet(tiny_model(), 1), std::span<const TrainSample>{}), std::invalid_argument);
}
