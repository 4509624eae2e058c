#include "dceiflow/simdata.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace dceiflow {

void Scene::validate() const {
  if (width <= 0 || height <= 0) throw std::invalid_argument("scene: size must be positive");
  if (background.width != width + 2 * margin || background.height != height + 2 * margin) {
    throw std::invalid_argument("scene: background must be (width + 2 margin) x (height + 2 margin)");
  }
  if (!(contrast_threshold > 0.0)) throw std::invalid_argument("scene: contrast threshold must be positive");
  if (substeps < 1) throw std::invalid_argument("scene: substeps must be >= 1");
  if (frame_interval_us == 0) throw std::invalid_argument("scene: frame interval must be positive");
  auto check_texture = [](const Grid<float>& g) {
    for (float v : g.values)
      if (!(v > 0.0F && v <= 1.0F)) throw std::invalid_argument("scene: intensities must lie in (0, 1]");
  };
  check_texture(background);
  for (const Patch& p : patches) {
    if (p.texture.width <= 0 || p.texture.height <= 0) throw std::invalid_argument("scene: empty patch texture");
    check_texture(p.texture);
  }
}

namespace {

// Bilinear texel lookup with coordinates clamped to the texture.
double sample_clamped(const Grid<float>& tex, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(tex.width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(tex.height - 1));
  const int x0 = std::min(static_cast<int>(x), tex.width - 1);
  const int y0 = std::min(static_cast<int>(y), tex.height - 1);
  const int x1 = std::min(x0 + 1, tex.width - 1);
  const int y1 = std::min(y0 + 1, tex.height - 1);
  const double ax = x - x0, ay = y - y0;
  return (1.0 - ay) * ((1.0 - ax) * tex(y0, x0) + ax * tex(y0, x1)) + ay * ((1.0 - ax) * tex(y1, x0) + ax * tex(y1, x1));
}

// Bilinear sample of the patch's indicator along one axis.
double coverage(double q, int extent) { return std::clamp(std::min(q + 1.0, static_cast<double>(extent) - q), 0.0, 1.0); }

// Index of the topmost patch whose area contains the pixel center at time t, or -1.
int covering_patch(const Scene& scene, int x, int y, double t) {
  for (int k = static_cast<int>(scene.patches.size()) - 1; k >= 0; --k) {
    const Patch& p = scene.patches[static_cast<std::size_t>(k)];
    const double qx = x - (p.x + p.vx * t);
    const double qy = y - (p.y + p.vy * t);
    if (qx >= -0.5 && qx < p.texture.width - 0.5 && qy >= -0.5 && qy < p.texture.height - 0.5) return k;
  }
  return -1;
}

std::vector<double> log_intensity(const Grid<float>& frame) {
  std::vector<double> out(frame.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(static_cast<double>(frame.values[i]));
  return out;
}

int substep_count(const Scene& scene, double duration) {
  return std::max(1, static_cast<int>(std::ceil(scene.substeps * duration - 1e-9)));
}

}  // namespace

Grid<float> render_intensity(const Scene& scene, double t) {
  Grid<float> frame(scene.width, scene.height);
  for (int y = 0; y < scene.height; ++y)
    for (int x = 0; x < scene.width; ++x) {
      double value = sample_clamped(scene.background, x - scene.vx * t + scene.margin, y - scene.vy * t + scene.margin);
      for (const Patch& p : scene.patches) {
        const double qx = x - (p.x + p.vx * t);
        const double qy = y - (p.y + p.vy * t);
        const double alpha = coverage(qx, p.texture.width) * coverage(qy, p.texture.height);
        if (alpha <= 0.0) continue;
        value = alpha * sample_clamped(p.texture, qx, qy) + (1.0 - alpha) * value;
      }
      frame(y, x) = static_cast<float>(value);
    }
  return frame;
}

Image render(const Scene& scene, double t) {
  const Grid<float> gray = render_intensity(scene, t);
  Image image(scene.width, scene.height);
  for (std::size_t i = 0; i < gray.size(); ++i)
    for (int c = 0; c < 3; ++c) image.rgb[i * 3 + c] = gray.values[i];
  return image;
}

std::vector<Event> threshold_crossings(std::span<const double> times_us, std::span<const double> log_intensity,
                                       double threshold, std::uint16_t x, std::uint16_t y) {
  if (times_us.size() != log_intensity.size()) throw std::invalid_argument("threshold_crossings: length mismatch");
  if (!(threshold > 0.0)) throw std::invalid_argument("threshold_crossings: threshold must be positive");
  constexpr double kTolerance = 1e-9;
  std::vector<Event> events;
  if (log_intensity.empty()) return events;
  double reference = log_intensity[0];
  for (std::size_t k = 1; k < log_intensity.size(); ++k) {
    const double l0 = log_intensity[k - 1], l1 = log_intensity[k];
    const double t0 = times_us[k - 1], t1 = times_us[k];
    if (l1 == l0) continue;
    const int polarity = l1 > l0 ? 1 : -1;
    while (polarity * (l1 - reference) >= threshold - kTolerance) {
      reference += polarity * threshold;
      const double fraction = std::clamp((reference - l0) / (l1 - l0), 0.0, 1.0);
      Event e;
      e.x = x;
      e.y = y;
      e.t = static_cast<std::uint64_t>(std::llround(t0 + fraction * (t1 - t0)));
      e.p = static_cast<std::int8_t>(polarity);
      events.push_back(e);
    }
  }
  return events;
}

EventStream simulate_events(const Scene& scene, double duration) {
  scene.validate();
  if (!(duration >= 0.0)) throw std::invalid_argument("simulate_events: duration must be >= 0");
  const auto t_end = static_cast<std::uint64_t>(std::llround(duration * static_cast<double>(scene.frame_interval_us)));
  if (duration == 0.0) return {scene.width, scene.height, 0, 0, {}};

  const int steps = substep_count(scene, duration);
  std::vector<double> times(static_cast<std::size_t>(steps) + 1);
  std::vector<std::vector<double>> logs;
  for (int k = 0; k <= steps; ++k) {
    const double t = duration * k / steps;
    times[static_cast<std::size_t>(k)] = t * static_cast<double>(scene.frame_interval_us);
    logs.push_back(log_intensity(render_intensity(scene, t)));
  }

  std::vector<Event> events;
  std::vector<double> pixel_log(times.size());
  for (int y = 0; y < scene.height; ++y)
    for (int x = 0; x < scene.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * scene.width + x;
      for (std::size_t k = 0; k < times.size(); ++k) pixel_log[k] = logs[k][i];
      auto px = threshold_crossings(times, pixel_log, scene.contrast_threshold, static_cast<std::uint16_t>(x),
                                    static_cast<std::uint16_t>(y));
      for (Event& e : px) e.t = std::min(e.t, t_end);
      events.insert(events.end(), px.begin(), px.end());
    }
  return {scene.width, scene.height, 0, t_end, std::move(events)};
}

FlowField ground_truth_flow(const Scene& scene, double dt, bool backward) {
  FlowField flow(scene.width, scene.height);
  const double sign = backward ? -1.0 : 1.0;
  const double t = backward ? dt : 0.0;
  for (int y = 0; y < scene.height; ++y)
    for (int x = 0; x < scene.width; ++x) {
      const int k = covering_patch(scene, x, y, t);
      const double vx = k < 0 ? scene.vx : scene.patches[static_cast<std::size_t>(k)].vx;
      const double vy = k < 0 ? scene.vy : scene.patches[static_cast<std::size_t>(k)].vy;
      flow.u(y, x) = static_cast<float>(sign * vx * dt);
      flow.v(y, x) = static_cast<float>(sign * vy * dt);
    }
  return flow;
}

BinaryMask event_free_mask(const Scene& scene, double dt) {
  BinaryMask mask(scene.width, scene.height, 1);
  if (dt <= 0.0) return mask;
  const std::vector<double> first = log_intensity(render_intensity(scene, 0.0));
  const int steps = substep_count(scene, dt);
  for (int k = 1; k <= steps; ++k) {
    const std::vector<double> current = log_intensity(render_intensity(scene, dt * k / steps));
    for (std::size_t i = 0; i < current.size(); ++i)
      if (std::abs(current[i] - first[i]) > 1e-12) mask.values[i] = 0;
  }
  return mask;
}

namespace {

// Smoothed white noise rescaled to [0.1, 1].
Grid<float> smooth_texture(int width, int height, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> field(static_cast<std::size_t>(width) * height);
  for (double& v : field) v = normal(rng);

  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) total += kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& k : kernel) k /= total;

  std::vector<double> tmp(field.size());
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int xx = std::clamp(x + i, 0, width - 1);
        acc += kernel[static_cast<std::size_t>(i + radius)] * field[static_cast<std::size_t>(y) * width + xx];
      }
      tmp[static_cast<std::size_t>(y) * width + x] = acc;
    }
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int yy = std::clamp(y + i, 0, height - 1);
        acc += kernel[static_cast<std::size_t>(i + radius)] * tmp[static_cast<std::size_t>(yy) * width + x];
      }
      field[static_cast<std::size_t>(y) * width + x] = acc;
    }

  const auto [lo, hi] = std::minmax_element(field.begin(), field.end());
  const double range = std::max(*hi - *lo, 1e-12);
  Grid<float> tex(width, height);
  for (std::size_t i = 0; i < field.size(); ++i) tex.values[i] = static_cast<float>(0.1 + 0.9 * (field[i] - *lo) / range);
  return tex;
}

void random_velocity(double max_speed, std::mt19937_64& rng, double& vx, double& vy) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double r = max_speed * std::sqrt(unit(rng));
  const double theta = 2.0 * M_PI * unit(rng);
  vx = r * std::cos(theta);
  vy = r * std::sin(theta);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

Scene random_scene(const SceneConfig& cfg, std::uint64_t seed) {
  if (cfg.width <= 0 || cfg.height <= 0) throw std::invalid_argument("scene config: size must be positive");
  if (cfg.max_speed < 0.0 || cfg.max_patches < 0 || cfg.min_patch_size < 1 || cfg.max_patch_size < cfg.min_patch_size) {
    throw std::invalid_argument("scene config: invalid speed or patch settings");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Scene scene;
  scene.width = cfg.width;
  scene.height = cfg.height;
  scene.margin = static_cast<int>(std::ceil(2.0 * cfg.max_speed)) + 2;
  scene.background = smooth_texture(cfg.width + 2 * scene.margin, cfg.height + 2 * scene.margin, cfg.texture_sigma, rng);
  random_velocity(cfg.max_speed, rng, scene.vx, scene.vy);
  scene.contrast_threshold = cfg.contrast_threshold;
  scene.substeps = cfg.substeps;
  scene.frame_interval_us = cfg.frame_interval_us;
  scene.seed = seed;

  const int count = std::uniform_int_distribution<int>(0, cfg.max_patches)(rng);
  for (int k = 0; k < count; ++k) {
    Patch p;
    std::uniform_int_distribution<int> size(cfg.min_patch_size, cfg.max_patch_size);
    const int w = size(rng), h = size(rng);
    if (unit(rng) < cfg.flat_patch_probability) {
      p.texture = Grid<float>(w, h, static_cast<float>(0.15 + 0.8 * unit(rng)));
    } else {
      p.texture = smooth_texture(w, h, cfg.texture_sigma, rng);
    }
    p.x = unit(rng) * std::max(1, cfg.width - w);
    p.y = unit(rng) * std::max(1, cfg.height - h);
    random_velocity(cfg.max_speed, rng, p.vx, p.vy);
    scene.patches.push_back(std::move(p));
  }
  scene.validate();
  return scene;
}

SceneSample make_sample(const Scene& scene, double dt) {
  if (!(dt >= 0.0)) throw std::invalid_argument("make_sample: dt must be >= 0");
  SceneSample s;
  s.dt = dt;
  s.seed = scene.seed;
  s.vx = scene.vx;
  s.vy = scene.vy;
  s.image1 = render(scene, 0.0);
  s.image2 = render(scene, dt);
  if (dt == 0.0) {
    s.events = EventStream(scene.width, scene.height, 0, 0, {});
  } else {
    const double duration = std::max(1.0, dt);
    s.events = clip_prefix(simulate_events(scene, duration), dt / duration);
  }
  s.gt_fwd = ground_truth_flow(scene, dt, false);
  s.gt_bwd = ground_truth_flow(scene, dt, true);
  s.event_free = event_free_mask(scene, dt);
  return s;
}

std::vector<SceneSample> make_dataset(int n, const SceneConfig& cfg, std::span<const double> dt_values,
                                      std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("make_dataset: n must be >= 1");
  if (dt_values.empty()) throw std::invalid_argument("make_dataset: no dt values");
  std::vector<SceneSample> samples;
  for (int i = 0; i < n; ++i) {
    const Scene scene = random_scene(cfg, mix_seed(seed, static_cast<std::uint64_t>(i)));
    for (double dt : dt_values) samples.push_back(make_sample(scene, dt));
  }
  return samples;
}

}  // namespace dceiflow
