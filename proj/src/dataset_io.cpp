#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>

#include "dceiflow/simdata.hpp"
#include "dceiflow/train.hpp"

namespace dceiflow {

namespace {

std::string sample_name(std::size_t index) {
  char name[32];
  std::snprintf(name, sizeof(name), "sample_%05zu", index);
  return name;
}

std::map<std::string, std::string> read_meta(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::map<std::string, std::string> meta;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error(path.string() + ": malformed line '" + line + "'");
    meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return meta;
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, std::span<const SceneSample> samples) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const SceneSample& s = samples[i];
    const auto sub = dir / sample_name(i);
    std::filesystem::create_directories(sub);
    write_ppm(sub / "image1.ppm", s.image1);
    write_ppm(sub / "image2.ppm", s.image2);
    write_events(sub / "events.evs", s.events);
    write_flo(sub / "flow_fwd.flo", s.gt_fwd);
    write_flo(sub / "flow_bwd.flo", s.gt_bwd);
    std::ofstream meta(sub / "meta.txt");
    if (!meta) throw std::runtime_error("cannot write " + (sub / "meta.txt").string());
    meta.precision(std::numeric_limits<double>::max_digits10);
    meta << "dt=" << s.dt << "\nseed=" << s.seed << "\nvx=" << s.vx << "\nvy=" << s.vy
         << "\nevents=" << s.events.size() << '\n';
    if (!meta) throw std::runtime_error("write failed: " + (sub / "meta.txt").string());
  }
}

std::vector<TrainSample> read_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("not a dataset directory: " + dir.string());
  std::vector<std::filesystem::path> subdirs;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_directory() && entry.path().filename().string().rfind("sample_", 0) == 0) subdirs.push_back(entry.path());
  }
  std::sort(subdirs.begin(), subdirs.end());
  if (subdirs.empty()) throw std::runtime_error("no sample_* directories in " + dir.string());

  std::vector<TrainSample> samples;
  for (const auto& sub : subdirs) {
    TrainSample s;
    s.image1 = read_ppm(sub / "image1.ppm");
    s.image2 = read_ppm(sub / "image2.ppm");
    s.events = read_events(sub / "events.evs");
    s.gt_fwd = read_flo(sub / "flow_fwd.flo");
    s.gt_bwd = read_flo(sub / "flow_bwd.flo");
    const auto meta = read_meta(sub / "meta.txt");
    const auto dt = meta.find("dt");
    if (dt == meta.end()) throw std::runtime_error((sub / "meta.txt").string() + ": missing dt");
    s.dt = std::stod(dt->second);
    if (s.image2.width != s.image1.width || s.image2.height != s.image1.height ||
        s.events.width() != s.image1.width || s.events.height() != s.image1.height ||
        s.gt_fwd.width() != s.image1.width || s.gt_fwd.height() != s.image1.height ||
        s.gt_bwd.width() != s.image1.width || s.gt_bwd.height() != s.image1.height) {
      throw std::runtime_error(sub.string() + ": inconsistent sizes");
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace dceiflow
