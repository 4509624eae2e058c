#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dceiflow/events.hpp"
#include "dceiflow/flow.hpp"
#include "dceiflow/grid.hpp"
#include "dceiflow/image.hpp"

namespace dceiflow {

/// A textured rectangle translating at constant velocity (px/frame).
struct Patch {
  Grid<float> texture;
  double x = 0.0;  // top-left column at t = 0
  double y = 0.0;  // top-left row at t = 0
  double vx = 0.0;
  double vy = 0.0;
};

/// Background translating at (vx, vy) px/frame with patches composited on
/// top in list order. Background pixel (x, y) of the first frame is texel
/// (x + margin, y + margin).
struct Scene {
  int width = 0;
  int height = 0;
  Grid<float> background;
  int margin = 0;
  double vx = 0.0;
  double vy = 0.0;
  std::vector<Patch> patches;
  double contrast_threshold = 0.2;  // log-intensity units
  int substeps = 16;                // per frame interval
  std::uint64_t frame_interval_us = 100000;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Grayscale intensity at time t (in frame intervals).
Grid<float> render_intensity(const Scene& scene, double t);
/// Gray RGB image at time t.
Image render(const Scene& scene, double t);

/// Events of one pixel whose log intensity follows the piecewise-linear
/// curve through (times[k], log_intensity[k]). A reference level starts at
/// log_intensity[0]; every crossing of reference +- threshold emits one
/// event at the linearly interpolated time and moves the reference by one
/// threshold. Times are in microseconds and rounded to the nearest integer.
std::vector<Event> threshold_crossings(std::span<const double> times_us, std::span<const double> log_intensity,
                                       double threshold, std::uint16_t x, std::uint16_t y);

/// Noise-free events over [0, duration] frame intervals, sampling the scene
/// at substeps * duration evenly spaced instants.
EventStream simulate_events(const Scene& scene, double duration = 1.0);

/// Analytic ground truth over dt frame intervals. Forward flow is indexed
/// by first-frame pixels; backward flow by pixels at time dt.
FlowField ground_truth_flow(const Scene& scene, double dt, bool backward = false);

/// Pixels whose log intensity never changes on [0, dt].
BinaryMask event_free_mask(const Scene& scene, double dt);

struct SceneConfig {
  int width = 64;
  int height = 64;
  double max_speed = 8.0;  // px/frame, velocity drawn uniformly from the disk
  int max_patches = 2;
  double flat_patch_probability = 0.5;
  int min_patch_size = 12;
  int max_patch_size = 24;
  double texture_sigma = 2.0;
  double contrast_threshold = 0.2;
  int substeps = 16;
  std::uint64_t frame_interval_us = 100000;
};

Scene random_scene(const SceneConfig& cfg, std::uint64_t seed);

struct SceneSample {
  Image image1;
  Image image2;
  EventStream events;
  FlowField gt_fwd;
  FlowField gt_bwd;
  BinaryMask event_free;
  double dt = 1.0;
  std::uint64_t seed = 0;
  double vx = 0.0;
  double vy = 0.0;
};

/// One sample of the scene over [0, dt]; image2 is the frame at dt.
SceneSample make_sample(const Scene& scene, double dt);

/// n seeded scenes, each expanded to one sample per dt value (scene-major
/// order). Events for dt are the prefix of the scene's stream.
std::vector<SceneSample> make_dataset(int n, const SceneConfig& cfg, std::span<const double> dt_values,
                                      std::uint64_t seed);

/// Writes sample_%05d/{image1.ppm, image2.ppm, events.evs, flow_fwd.flo,
/// flow_bwd.flo, meta.txt}; meta.txt holds key=value lines.
void write_dataset(const std::filesystem::path& dir, std::span<const SceneSample> samples);

}  // namespace dceiflow
