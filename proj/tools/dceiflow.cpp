// Command-line front end: simulate, train, infer, eval and viz.

#include <CLI11.hpp>

#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dceiflow/events.hpp"
#include "dceiflow/flow.hpp"
#include "dceiflow/image.hpp"
#include "dceiflow/metrics.hpp"
#include "dceiflow/network.hpp"
#include "dceiflow/simdata.hpp"
#include "dceiflow/train.hpp"
#include "dceiflow/visualize.hpp"

namespace fs = std::filesystem;
using namespace dceiflow;

namespace {

struct SimulateArgs {
  fs::path out;
  int count = 16;
  std::string size = "64x64";
  std::uint64_t seed = 0;
  std::string dt = "1";
  double max_speed = 8.0;
  int max_patches = 2;
};

struct TrainArgs {
  fs::path data;
  int steps = 200;
  double lr = 4e-4;
  double lambda = 100.0;
  int iters = 6;
  int channels = 32;
  std::string fusion = "conv";
  fs::path ckpt;
  std::uint64_t seed = 0;
  int batch = 1;
  fs::path log;
  int checkpoint_every = 0;
};

struct InferArgs {
  fs::path ckpt;
  fs::path image1;
  fs::path events;
  double dt = 1.0;
  fs::path out;
  int iters = 6;
};

struct EvalArgs {
  fs::path pred;
  fs::path gt;
  fs::path events;
  fs::path report;
};

struct VizArgs {
  fs::path flow;
  fs::path out;
  double max_magnitude = 0.0;
};

std::pair<int, int> parse_size(const std::string& text) {
  const auto x = text.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(text);
    std::size_t used_h = 0, used_w = 0;
    const int h = std::stoi(text.substr(0, x), &used_h);
    const int w = std::stoi(text.substr(x + 1), &used_w);
    if (used_h != x || used_w != text.size() - x - 1 || h <= 0 || w <= 0) throw std::invalid_argument(text);
    return {h, w};
  } catch (const std::exception&) {
    throw std::invalid_argument("--size expects HxW with positive integers, got '" + text + "'");
  }
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || item.empty() || !(v >= 0.0) || v > 1.0) {
      throw std::invalid_argument("--dt expects comma-separated values in [0, 1], got '" + text + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument("--dt list is empty");
  return out;
}

void run_simulate(const SimulateArgs& a) {
  if (a.count < 1) throw std::invalid_argument("--count must be >= 1");
  const auto [h, w] = parse_size(a.size);
  SceneConfig cfg;
  cfg.width = w;
  cfg.height = h;
  cfg.max_speed = a.max_speed;
  cfg.max_patches = a.max_patches;
  const std::vector<double> dts = parse_list(a.dt);
  const auto samples = make_dataset(a.count, cfg, dts, a.seed);
  write_dataset(a.out, samples);
  std::cout << "wrote " << samples.size() << " samples to " << a.out.string() << "\n";
}

void run_train(const TrainArgs& a) {
  const std::vector<TrainSample> data = read_dataset(a.data);
  TrainConfig cfg;
  cfg.model.iterations = a.iters;
  cfg.model.feature_channels = a.channels;
  cfg.model.fusion = parse_fusion(a.fusion);
  cfg.loss.lambda = a.lambda;
  cfg.optimizer.lr = a.lr;
  cfg.steps = a.steps;
  cfg.batch_size = a.batch;
  cfg.seed = a.seed;
  cfg.checkpoint_path = a.ckpt;
  cfg.log_path = a.log;
  cfg.checkpoint_every = a.checkpoint_every;
  const int every = std::max(1, a.steps / 10);
  const TrainResult r = train(data, cfg, [&](const LossRecord& rec) {
    if ((rec.step + 1) % every == 0 || rec.step + 1 == a.steps) {
      std::cout << "step " << rec.step + 1 << " loss " << rec.total << " flow " << rec.flow << " sim " << rec.sim
                << "\n";
    }
  });
  std::cout << "saved " << a.ckpt.string() << " after " << r.history.size() << " steps\n";
}

void run_infer(const InferArgs& a) {
  if (!(a.dt >= 0.0 && a.dt <= 1.0)) throw std::invalid_argument("--dt must lie in [0, 1]");
  const DCEIFlowNet net = load_checkpoint(a.ckpt, a.iters);
  const Image image = read_ppm(a.image1);
  const EventStream events = read_events(a.events);
  const std::size_t used = clip_prefix(events, a.dt).size();
  write_flo(a.out, predict_flow(net, image, events, a.dt));
  std::cout << "events used " << used << " of " << events.size() << "\n";
}

void run_eval(const EvalArgs& a) {
  const FlowField pred = read_flo(a.pred);
  const FlowField gt = read_flo(a.gt);
  const EventStream events = read_events(a.events);
  if (events.width() != gt.width() || events.height() != gt.height()) {
    throw std::invalid_argument("events are " + std::to_string(events.width()) + "x" + std::to_string(events.height()) +
                                " but ground truth is " + std::to_string(gt.width()) + "x" +
                                std::to_string(gt.height()));
  }
  const MetricsReport report = evaluate(pred, gt, event_mask(events));
  std::ofstream out(a.report);
  if (!out) throw std::runtime_error("cannot write " + a.report.string());
  out << metrics_csv_header() << "\n" << metrics_csv_row(report) << "\n";
  if (!out) throw std::runtime_error("write failed: " + a.report.string());
  std::cout << metrics_csv_header() << "\n" << metrics_csv_row(report) << "\n";
}

void run_viz(const VizArgs& a) {
  const FlowField flow = read_flo(a.flow);
  write_flow_ppm(a.out, flow, a.max_magnitude > 0.0 ? std::optional<double>(a.max_magnitude) : std::nullopt);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dense optical flow from one image and an event stream"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic dataset");
  simulate->add_option("--out", sim.out, "Output directory")->required();
  simulate->add_option("--count", sim.count, "Number of scenes")->capture_default_str();
  simulate->add_option("--size", sim.size, "Frame size HxW")->capture_default_str();
  simulate->add_option("--seed", sim.seed, "Dataset seed")->capture_default_str();
  simulate->add_option("--dt", sim.dt, "Comma-separated intervals, in frames")->capture_default_str();
  simulate->add_option("--max-speed", sim.max_speed, "Largest speed in px/frame")->capture_default_str();
  simulate->add_option("--max-patches", sim.max_patches, "Largest number of moving patches")->capture_default_str();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train on a simulated dataset");
  train_cmd->add_option("--data", tr.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--steps", tr.steps, "Optimizer steps")->capture_default_str();
  train_cmd->add_option("--lr", tr.lr, "Learning rate")->capture_default_str();
  train_cmd->add_option("--lambda", tr.lambda, "Similarity loss weight")->capture_default_str();
  train_cmd->add_option("--iters", tr.iters, "Refinement iterations")->capture_default_str();
  train_cmd->add_option("--channels", tr.channels, "Feature channels")->capture_default_str();
  train_cmd->add_option("--fusion", tr.fusion, "Fusion variant")
      ->check(CLI::IsMember({"conv", "add"}))
      ->capture_default_str();
  train_cmd->add_option("--ckpt", tr.ckpt, "Checkpoint output path")->required();
  train_cmd->add_option("--seed", tr.seed, "Initialization and shuffling seed")->capture_default_str();
  train_cmd->add_option("--batch", tr.batch, "Samples per optimizer step")->capture_default_str();
  train_cmd->add_option("--log", tr.log, "Loss log CSV");
  train_cmd->add_option("--checkpoint-every", tr.checkpoint_every, "Steps between checkpoints (0: end only)")
      ->capture_default_str();

  InferArgs inf;
  auto* infer = app.add_subcommand("infer", "Predict flow for one image and its events");
  infer->add_option("--ckpt", inf.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  infer->add_option("--image1", inf.image1, "First frame (PPM)")->required()->check(CLI::ExistingFile);
  infer->add_option("--events", inf.events, "Events (EVS1)")->required()->check(CLI::ExistingFile);
  infer->add_option("--dt", inf.dt, "Fraction of the event window to use")->capture_default_str();
  infer->add_option("--out", inf.out, "Output flow (.flo)")->required();
  infer->add_option("--iters", inf.iters, "Refinement iterations")->capture_default_str();

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Dense and event-masked metrics");
  eval->add_option("--pred", ev.pred, "Predicted flow (.flo)")->required()->check(CLI::ExistingFile);
  eval->add_option("--gt", ev.gt, "Ground-truth flow (.flo)")->required()->check(CLI::ExistingFile);
  eval->add_option("--events", ev.events, "Events (EVS1) defining the mask")->required()->check(CLI::ExistingFile);
  eval->add_option("--report", ev.report, "Output CSV")->required();

  VizArgs vz;
  auto* viz = app.add_subcommand("viz", "Render a flow field as a color-wheel PPM");
  viz->add_option("--flow", vz.flow, "Flow (.flo)")->required()->check(CLI::ExistingFile);
  viz->add_option("--out", vz.out, "Output PPM")->required();
  viz->add_option("--max", vz.max_magnitude, "Magnitude mapped to full saturation (default: 99th percentile)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "dceiflow: " << e.what() << "\n";
    return e.get_exit_code() == 0 ? 2 : e.get_exit_code();
  }

  try {
    if (*simulate) run_simulate(sim);
    if (*train_cmd) run_train(tr);
    if (*infer) run_infer(inf);
    if (*eval) run_eval(ev);
    if (*viz) run_viz(vz);
  } catch (const std::exception& e) {
    std::cerr << "dceiflow: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
