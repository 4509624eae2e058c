// Acceptance checks A1-A7. Prints one PASS/FAIL line per criterion and
// exits nonzero when any criterion fails.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstring>
#include <optional>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dceiflow/events.hpp"
#include "dceiflow/flow.hpp"
#include "dceiflow/metrics.hpp"
#include "dceiflow/network.hpp"
#include "dceiflow/ops.hpp"
#include "dceiflow/simdata.hpp"
#include "dceiflow/train.hpp"
#include "gradient_suite.hpp"
#include "reference.hpp"

namespace fs = std::filesystem;
using namespace dceiflow;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

int cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + DCEIFLOW_CLI + "\" " + args + " >> " + q(log) + " 2>&1";
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

// A1

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const auto cases = ref::run_gradient_suite(5);
  const double elapsed = seconds_since(t0);
  bool ok = elapsed < 120.0;
  int min_trials = 1 << 30;
  std::string failed;
  for (const auto& c : cases) {
    min_trials = std::min(min_trials, c.trials);
    if (!c.passed()) {
      ok = false;
      failed += " " + c.name + "=" + fmt(c.worst);
    }
  }
  ok = ok && min_trials >= 5;
  return {ok, std::to_string(cases.size()) + " gradients, >= " + std::to_string(min_trials) + " shapes each, " +
                  fmt(elapsed, 3) + " s" + (failed.empty() ? "" : ", failed:" + failed)};
}

// A2

// Same displacement at every pixel, so warping then shifting equals shifting
// then sampling.
Tensor uniform_flow(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> d(-2.0F, 2.0F);
  const float u = d(rng), v = d(rng);
  Tensor t({1, 2, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t i = 0; i < plane; ++i) {
    t.mutable_data()[i] = u;
    t.mutable_data()[plane + i] = v;
  }
  return t;
}

float entry(const Tensor& t, int c, int y, int x) {
  const int h = t.dim(2), w = t.dim(3);
  return t.data()[(static_cast<std::size_t>(c) * h + y) * w + x];
}

Outcome correlation_oracle() {
  std::mt19937_64 rng(2024);
  double worst_brute = 0.0, worst_pool = 0.0, worst_local = 0.0;
  int grids = 0;
  for (int h = 1; h <= 8; ++h)
    for (int w = 1; w <= 8; ++w)
      for (int c = 1; c <= 8; ++c) {
        const auto f1 = ref::random_tensor({1, c, h, w}, rng), f2 = ref::random_tensor({1, c, h, w}, rng);
        const auto pyr = build_correlation(ref::to_float(f1), ref::to_float(f2), 4);
        auto expected = ref::correlation(f1, f2);
        for (std::size_t k = 0; k < pyr.levels.size(); ++k) {
          if (k > 0) expected = ref::avg_pool2(expected);
          const auto& got = pyr.levels[k].data();
          if (got.size() != expected.v.size()) return {false, "level shape mismatch at " + std::to_string(h) + "x" + std::to_string(w)};
          for (std::size_t i = 0; i < got.size(); ++i) {
            const double err = std::abs(got[i] - expected.v[i]);
            (k == 0 ? worst_brute : worst_pool) = std::max(k == 0 ? worst_brute : worst_pool, err);
          }
        }
        ++grids;
      }

  for (int trial = 0; trial < 20; ++trial) {
    const int c = 1 + trial % 8, h = 3 + trial % 6, w = 4 + (trial * 3) % 5, r = 1 + trial % 3, d = 2 * r + 1;
    const Tensor f1 = ref::to_float(ref::random_tensor({1, c, h, w}, rng));
    const Tensor f2 = ref::to_float(ref::random_tensor({1, c, h, w}, rng));
    const Tensor flow = uniform_flow(h, w, rng);
    const Tensor ours = lookup(build_correlation(f1, f2, 1), flow, r);
    const Tensor local = local_correlation(f1, f2, flow, r);
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            if (x + dx < 0 || y + dy < 0 || x + dx >= w || y + dy >= h) continue;
            const int o = (dy + r) * d + (dx + r);
            worst_local = std::max(worst_local, static_cast<double>(std::abs(entry(ours, o, y, x) - entry(local, o, y, x))));
          }
  }
  const bool ok = worst_brute <= 1e-6 && worst_pool <= 1e-6 && worst_local <= 1e-5;
  return {ok, std::to_string(grids) + " grids, brute force " + fmt(worst_brute) + ", pooled levels " +
                  fmt(worst_pool) + ", warped local " + fmt(worst_local)};
}

// A3

EventStream random_stream(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> count(0, 500), size(1, 24), pol(0, 1);
  const int width = size(rng), height = size(rng);
  std::uniform_int_distribution<int> col(0, width - 1), row(0, height - 1);
  std::uniform_int_distribution<std::uint64_t> start(0, 100000), span(0, 100000);
  const std::uint64_t t0 = start(rng), t1 = t0 + span(rng);
  std::uniform_int_distribution<std::uint64_t> ts(t0, t1);
  std::vector<Event> events(static_cast<std::size_t>(count(rng)));
  for (Event& e : events) {
    e.x = static_cast<std::uint16_t>(col(rng));
    e.y = static_cast<std::uint16_t>(row(rng));
    e.t = ts(rng);
    e.p = pol(rng) ? 1 : -1;
  }
  return {width, height, t0, t1, std::move(events)};
}

Outcome event_invariants() {
  std::mt19937_64 rng(77);
  double worst_mass = 0.0;
  bool involution = true;
  for (int trial = 0; trial < 100; ++trial) {
    const EventStream s = random_stream(rng);
    const EventVolume volume = voxelize(s);
    double sum = 0.0;
    for (float v : volume.data.data()) sum += v;
    const double n = static_cast<double>(s.size());
    worst_mass = std::max(worst_mass, std::abs(sum - n) / std::max(1.0, n));
    involution = involution && reverse(reverse(s)) == s;
  }

  double worst_partition = 0.0;
  for (int bins = 1; bins <= 8; ++bins)
    for (int i = 0; i < 1000; ++i) {
      const double t = static_cast<double>(i) / 999.0;
      double total = 0.0;
      for (int b = 0; b < bins; ++b) total += bin_weight(t, b, bins);
      worst_partition = std::max(worst_partition, std::abs(total - 1.0));
    }

  // Linear log-intensity ramps of exactly two thresholds, sampled the way the
  // simulator samples a pixel.
  int ramps = 0, wrong = 0;
  std::uniform_real_distribution<double> level(-3.0, 3.0), contrast(0.05, 0.6);
  for (int trial = 0; trial < 200; ++trial) {
    const double c = contrast(rng), l0 = level(rng);
    const int sign = trial % 2 ? 1 : -1;
    const int substeps = 1 + trial % 32;
    std::vector<double> times, logs;
    for (int k = 0; k <= substeps; ++k) {
      const double a = static_cast<double>(k) / substeps;
      times.push_back(a * 1e6);
      logs.push_back(l0 + sign * 2.0 * c * a);
    }
    const auto events = threshold_crossings(times, logs, c, 0, 0);
    ++ramps;
    bool good = events.size() == 2;
    for (const Event& e : events) good = good && e.p == sign;
    if (!good) ++wrong;
  }
  // The same check through the full simulator: a one-pixel scene sliding over
  // texels 2^k, so two pixels of travel change log intensity by exactly 2 ln 2.
  int scenes = 0, scene_wrong = 0;
  for (int substeps = 1; substeps <= 32; ++substeps)
    for (int sign : {1, -1}) {
      Scene scene;
      scene.width = 1;
      scene.height = 1;
      scene.margin = 2;
      scene.background = Grid<float>(5, 5);
      for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x) scene.background(y, x) = std::ldexp(1.0F, x - 4);
      scene.vx = -2.0 * sign;
      scene.contrast_threshold = std::log(2.0);
      scene.substeps = substeps;
      const EventStream events = simulate_events(scene);
      bool good = events.size() == 2;
      for (const Event& e : events.events()) good = good && e.p == sign;
      ++scenes;
      if (!good) ++scene_wrong;
    }

  const bool ok = worst_mass <= 1e-5 && involution && worst_partition <= 1e-12 && wrong == 0 && scene_wrong == 0;
  return {ok, "mass rel err " + fmt(worst_mass) + ", partition err " + fmt(worst_partition) + ", involution " +
                  (involution ? "exact" : "broken") + ", 2c ramps with 2 events " + std::to_string(ramps - wrong) +
                  "/" + std::to_string(ramps) +
                  ", simulated 2c scenes with 2 events " + std::to_string(scenes - scene_wrong) + "/" +
                  std::to_string(scenes)};
}

// A4, A5

struct ToyRun {
  double epe_dt1 = 0.0;
  double epe_dt05 = 0.0;
  double seconds = 0.0;
};

constexpr int kToyScenes = 256;
constexpr int kHeldOutScenes = 32;
constexpr int kToySteps = 2000;
constexpr int kToyBatch = 8;

SceneConfig toy_scenes() {
  SceneConfig cfg;  // 64 x 64
  cfg.max_speed = 4.0;
  cfg.max_patches = 0;
  return cfg;
}

std::vector<TrainSample> toy_samples(int n, std::span<const double> dts, std::uint64_t seed) {
  std::vector<TrainSample> out;
  for (const SceneSample& s : make_dataset(n, toy_scenes(), dts, seed)) out.push_back(TrainSample::from(s));
  return out;
}

double half_interval_epe(const DCEIFlowNet& net, std::span<const TrainSample> samples) {
  double total = 0.0;
  for (const TrainSample& s : samples) {
    FlowField gt = s.gt_fwd;
    for (float& v : gt.u.values) v *= 0.5F;
    for (float& v : gt.v.values) v *= 0.5F;
    total += epe(predict_flow(net, s.image1, s.events, 0.5), gt);
  }
  return total / static_cast<double>(samples.size());
}

ToyRun toy_training(double lambda, const fs::path& dir) {
  const auto t0 = Clock::now();
  // Training sees both intervals; held-out scenes are scored at dt = 1 and
  // again on the prefix of their events at dt = 0.5.
  const double train_dts[] = {1.0, 0.5};
  const double held_out_dts[] = {1.0};
  const std::vector<TrainSample> train_set = toy_samples(kToyScenes, train_dts, 1);
  const std::vector<TrainSample> held_out = toy_samples(kHeldOutScenes, held_out_dts, 1000001);
  TrainConfig cfg;  // default model: C = 32, N = 6, r = 3, bidirectional loss
  cfg.loss.lambda = lambda;
  cfg.steps = kToySteps;
  cfg.batch_size = kToyBatch;
  cfg.seed = 0;
  cfg.checkpoint_path = dir / ("toy_lambda" + fmt(lambda) + ".ckpt");
  cfg.log_path = dir / ("toy_lambda" + fmt(lambda) + ".csv");
  const TrainResult r = train(train_set, cfg);
  ToyRun run;
  run.epe_dt1 = mean_epe(r.net, held_out);
  run.epe_dt05 = half_interval_epe(r.net, held_out);
  run.seconds = seconds_since(t0);
  return run;
}

std::string describe(const ToyRun& r) {
  return "held-out EPE dt=1 " + fmt(r.epe_dt1) + " px, dt=0.5 " + fmt(r.epe_dt05) + " px, " + fmt(r.seconds, 4) +
         " s";
}

Outcome toy_task(const ToyRun& r) {
  const bool ok = r.epe_dt1 < 0.5 && r.epe_dt05 < 0.5 && r.seconds < 45.0 * 60.0;
  return {ok, std::to_string(kToySteps) + " steps x batch " + std::to_string(kToyBatch) + ", " + describe(r)};
}

Outcome ablation(const ToyRun& with_sim, const ToyRun& without_sim) {
  return {without_sim.epe_dt1 >= with_sim.epe_dt1,
          "lambda=0: " + fmt(without_sim.epe_dt1) + " px, lambda=100: " + fmt(with_sim.epe_dt1) + " px"};
}

// A6

Outcome metric_exactness(const fs::path& dir) {
  const FlowField gt = FlowField::constant(17, 9, 0.0F, 0.0F);
  const double offset = epe(FlowField::constant(17, 9, 3.0F, 4.0F), gt);
  const auto three_places = [](double v) { return std::round(v * 1000.0) / 1000.0; };
  const double row_a = dense_ratio(1.14, 1.08, 1.15), row_b = dense_ratio(0.82, 0.97, 0.80);
  const bool anchors = three_places(row_a) == 0.969 && three_places(row_b) == 1.105;

  std::mt19937_64 rng(6);
  std::uniform_real_distribution<float> value(-50.0F, 50.0F);
  FlowField flow(23, 11);
  for (float& v : flow.u.values) v = value(rng);
  for (float& v : flow.v.values) v = value(rng);
  flow.u.values[3] = 1e-30F;
  flow.v.values[4] = -0.0F;
  const fs::path flo = dir / "roundtrip.flo";
  write_flo(flo, flow);
  const FlowField back = read_flo(flo);
  bool roundtrip = back.u.width == flow.u.width && back.u.height == flow.u.height;
  for (std::size_t i = 0; roundtrip && i < flow.u.values.size(); ++i) {
    roundtrip = std::memcmp(&back.u.values[i], &flow.u.values[i], sizeof(float)) == 0 &&
                std::memcmp(&back.v.values[i], &flow.v.values[i], sizeof(float)) == 0;
  }

  // eval CLI against the library on a simulated sample and a perturbed prediction.
  const double dts[] = {1.0};
  const SceneSample sample = make_dataset(1, SceneConfig{}, dts, 61).front();
  FlowField pred = sample.gt_fwd;
  for (std::size_t i = 0; i < pred.u.values.size(); ++i) {
    pred.u.values[i] += value(rng) * 0.01F;
    pred.v.values[i] += value(rng) * 0.01F;
  }
  const fs::path pred_path = dir / "pred.flo", gt_path = dir / "gt.flo", evs = dir / "events.evs";
  const fs::path report = dir / "report.csv";
  write_flo(pred_path, pred);
  write_flo(gt_path, sample.gt_fwd);
  write_events(evs, sample.events);
  const int status = cli("eval --pred " + q(pred_path) + " --gt " + q(gt_path) + " --events " + q(evs) +
                             " --report " + q(report),
                         dir / "eval.log");
  const MetricsReport expected = evaluate(read_flo(pred_path), read_flo(gt_path), event_mask(read_events(evs)));
  const bool cli_exact =
      status == 0 && slurp(report) == metrics_csv_header() + "\n" + metrics_csv_row(expected) + "\n";

  const bool ok = offset == 5.0 && anchors && roundtrip && cli_exact;
  return {ok, "offset EPE " + fmt(offset, 17) + ", anchors " + fmt(row_a, 6) + " / " + fmt(row_b, 6) +
                  ", .flo roundtrip " + (roundtrip ? "bit-exact" : "differs") + ", eval CLI " +
                  (cli_exact ? "matches" : "differs")};
}

// A7

Outcome determinism(const fs::path& dir) {
  const fs::path data = dir / "data";
  const fs::path log = dir / "cli.log";
  if (cli("simulate --out " + q(data) + " --count 8 --size 64x64 --seed 7 --dt 1,0.5", log) != 0) {
    return {false, "simulate failed, see " + log.string()};
  }
  std::vector<std::string> logs, checkpoints, reports;
  for (const char* run : {"run_a", "run_b"}) {
    const fs::path out = dir / run;
    fs::create_directories(out);
    const std::string ckpt = q(out / "model.ckpt");
    const fs::path sample = data / "sample_00001";
    const bool ok =
        cli("train --data " + q(data) + " --steps 12 --batch 2 --seed 3 --ckpt " + ckpt + " --log " +
                q(out / "loss.csv"),
            log) == 0 &&
        cli("infer --ckpt " + ckpt + " --image1 " + q(sample / "image1.ppm") + " --events " +
                q(sample / "events.evs") + " --dt 0.5 --out " + q(out / "pred.flo"),
            log) == 0 &&
        cli("eval --pred " + q(out / "pred.flo") + " --gt " + q(sample / "flow_fwd.flo") + " --events " +
                q(sample / "events.evs") + " --report " + q(out / "report.csv"),
            log) == 0;
    if (!ok) return {false, std::string(run) + " failed, see " + log.string()};
    logs.push_back(slurp(out / "loss.csv"));
    checkpoints.push_back(slurp(out / "model.ckpt"));
    reports.push_back(slurp(out / "report.csv"));
  }
  const bool same_log = logs[0] == logs[1], same_ckpt = checkpoints[0] == checkpoints[1];
  const bool same_report = reports[0] == reports[1];
  return {same_log && same_ckpt && same_report,
          std::string("loss CSV ") + (same_log ? "identical" : "differs") + ", checkpoint " +
              (same_ckpt ? "bit-identical" : "differs") + " (" + std::to_string(checkpoints[0].size()) +
              " bytes), eval CSV " + (same_report ? "identical" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  fs::path workdir = "acceptance_work";
  std::vector<std::string> only;
  app.add_option("--workdir", workdir, "Scratch directory")->capture_default_str();
  app.add_option("--only", only, "Run only these criteria (A1 ... A7)")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const auto wanted = [&](const std::string& id) {
    return only.empty() || std::find(only.begin(), only.end(), id) != only.end();
  };
  fs::remove_all(workdir);
  fs::create_directories(workdir);

  bool all = true;
  const auto report = [&](const std::string& id, const std::function<Outcome()>& check) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << id << " " << (o.pass ? "PASS" : "FAIL") << " " << o.detail << std::endl;
  };

  if (wanted("A1")) report("A1", gradient_suite);
  if (wanted("A2")) report("A2", correlation_oracle);
  if (wanted("A3")) report("A3", event_invariants);
  if (wanted("A4") || wanted("A5")) {
    std::optional<ToyRun> with_sim, without_sim;
    report("A4", [&] {
      with_sim = toy_training(100.0, workdir);
      return toy_task(*with_sim);
    });
    if (wanted("A5")) {
      report("A5", [&] {
        if (!with_sim) return Outcome{false, "lambda=100 run did not complete"};
        without_sim = toy_training(0.0, workdir);
        return ablation(*with_sim, *without_sim);
      });
    }
  }
  if (wanted("A6")) {
    fs::create_directories(workdir / "metrics");
    report("A6", [&] { return metric_exactness(workdir / "metrics"); });
  }
  if (wanted("A7")) {
    fs::create_directories(workdir / "determinism");
    report("A7", [&] { return determinism(workdir / "determinism"); });
  }
  return all ? 0 : 1;
}
