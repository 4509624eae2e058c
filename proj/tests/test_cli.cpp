#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "dceiflow/events.hpp"
#include "dceiflow/flow.hpp"
#include "dceiflow/metrics.hpp"

using namespace dceiflow;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int status = 0;
  std::string out;
  std::string err;
};

const fs::path& workdir() {
  static const fs::path dir = fs::temp_directory_path() / "dceiflow_cli_test";
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

CliResult cli(const std::string& args) {
  const fs::path out = workdir() / "stdout.txt", err = workdir() / "stderr.txt";
  const std::string cmd = std::string("\"") + DCEIFLOW_CLI + "\" " + args + " > \"" + out.string() + "\" 2> \"" +
                          err.string() + "\"";
  const int raw = std::system(cmd.c_str());
  CliResult r;
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

fs::path sample(int i, const std::string& file) {
  std::ostringstream name;
  name << "sample_" << std::string(4, '0') << i;
  return workdir() / "data" / name.str() / file;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(workdir());
    fs::create_directories(workdir());
    ASSERT_EQ(cli("simulate --out " + q(workdir() / "data") + " --count 2 --size 32x32 --seed 4 --dt 1,0.5").status, 0);
    ASSERT_EQ(cli("train --data " + q(workdir() / "data") + " --steps 2 --iters 2 --channels 8 --lambda 100 --seed 1" +
                  " --ckpt " + q(workdir() / "model.ckpt") + " --log " + q(workdir() / "loss.csv"))
                  .status,
              0);
  }
  static void TearDownTestSuite() { fs::remove_all(workdir()); }
};

}  // namespace

TEST_F(Cli, SimulateWritesTheDatasetLayout) {
  for (int i = 0; i < 4; ++i)
    for (const char* f : {"image1.ppm", "image2.ppm", "events.evs", "flow_fwd.flo", "flow_bwd.flo", "meta.txt"}) {
      EXPECT_TRUE(fs::exists(sample(i, f))) << sample(i, f);
    }
  EXPECT_NE(slurp(sample(1, "meta.txt")).find("dt=0.5"), std::string::npos);
}

TEST_F(Cli, TrainWritesLogAndCheckpoint) {
  EXPECT_TRUE(fs::exists(workdir() / "model.ckpt"));
  std::istringstream log(slurp(workdir() / "loss.csv"));
  std::string header;
  std::getline(log, header);
  EXPECT_EQ(header, "step,loss_total,loss_flow,loss_sim");
}

TEST_F(Cli, EvalOfGroundTruthAgainstItselfIsZero) {
  const fs::path report = workdir() / "self.csv";
  const CliResult r = cli("eval --pred " + q(sample(0, "flow_fwd.flo")) + " --gt " + q(sample(0, "flow_fwd.flo")) +
                    " --events " + q(sample(0, "events.evs")) + " --report " + q(report));
  ASSERT_EQ(r.status, 0) << r.err;
  std::istringstream csv(slurp(report));
  std::string header, row;
  std::getline(csv, header);
  std::getline(csv, row);
  EXPECT_EQ(header, metrics_csv_header());
  EXPECT_EQ(row.rfind("0,", 0), 0U) << row;
}

TEST_F(Cli, EvalMatchesLibraryExactly) {
  const fs::path pred = workdir() / "pred.flo", report = workdir() / "pred.csv";
  ASSERT_EQ(cli("infer --ckpt " + q(workdir() / "model.ckpt") + " --image1 " + q(sample(0, "image1.ppm")) +
                " --events " + q(sample(0, "events.evs")) + " --iters 2 --out " + q(pred))
                .status,
            0);
  ASSERT_EQ(cli("eval --pred " + q(pred) + " --gt " + q(sample(0, "flow_fwd.flo")) + " --events " +
                q(sample(0, "events.evs")) + " --report " + q(report))
                .status,
            0);
  const MetricsReport expected =
      evaluate(read_flo(pred), read_flo(sample(0, "flow_fwd.flo")), event_mask(read_events(sample(0, "events.evs"))));
  EXPECT_EQ(slurp(report), metrics_csv_header() + "\n" + metrics_csv_row(expected) + "\n");
}

TEST_F(Cli, InferAtHalfIntervalUsesTheEventPrefix) {
  const EventStream events = read_events(sample(0, "events.evs"));
  const std::string common = "infer --ckpt " + q(workdir() / "model.ckpt") + " --image1 " +
                             q(sample(0, "image1.ppm")) + " --events " + q(sample(0, "events.evs")) + " --iters 2";
  const CliResult half = cli(common + " --dt 0.5 --out " + q(workdir() / "half.flo"));
  const CliResult full = cli(common + " --dt 1 --out " + q(workdir() / "full.flo"));
  ASSERT_EQ(half.status, 0) << half.err;
  ASSERT_EQ(full.status, 0) << full.err;
  const std::size_t prefix = clip_prefix(events, 0.5).size();
  EXPECT_LT(prefix, events.size());
  EXPECT_NE(half.out.find("events used " + std::to_string(prefix) + " of " + std::to_string(events.size())),
            std::string::npos)
      << half.out;
  EXPECT_NE(full.out.find("events used " + std::to_string(events.size()) + " of "), std::string::npos) << full.out;
  EXPECT_NE(slurp(workdir() / "half.flo"), slurp(workdir() / "full.flo"));
}

TEST_F(Cli, VizIsByteIdenticalAcrossRuns) {
  const fs::path a = workdir() / "a.ppm", b = workdir() / "b.ppm";
  ASSERT_EQ(cli("viz --flow " + q(sample(2, "flow_fwd.flo")) + " --out " + q(a)).status, 0);
  ASSERT_EQ(cli("viz --flow " + q(sample(2, "flow_fwd.flo")) + " --out " + q(b)).status, 0);
  const std::string bytes = slurp(a);
  EXPECT_FALSE(bytes.empty());
  EXPECT_EQ(bytes, slurp(b));
  EXPECT_EQ(bytes.rfind("P6\n32 32\n255\n", 0), 0U);
}

TEST_F(Cli, BadInvocationsFailWithOneLineDiagnostic) {
  const std::string flo = q(sample(0, "flow_fwd.flo")), evs = q(sample(0, "events.evs"));
  const std::string cases[] = {
      "",
      "frobnicate",
      "eval --pred " + flo + " --gt " + flo + " --events " + evs + " --report x.csv --bogus 1",
      "eval --pred /nonexistent.flo --gt " + flo + " --events " + evs + " --report x.csv",
      "simulate --out " + q(workdir() / "bad") + " --size 32by32",
      "simulate --out " + q(workdir() / "bad") + " --dt 1.5",
      "train --data " + q(workdir() / "data") + " --ckpt x --fusion sum",
      "infer --ckpt " + q(workdir() / "model.ckpt") + " --image1 " + q(sample(0, "image1.ppm")) + " --events " + evs +
          " --dt 2 --out x.flo",
      "infer --ckpt " + flo + " --image1 " + q(sample(0, "image1.ppm")) + " --events " + evs + " --out x.flo",
  };
  for (const std::string& args : cases) {
    const CliResult r = cli(args);
    EXPECT_NE(r.status, 0) << args;
    EXPECT_FALSE(r.err.empty()) << args;
    EXPECT_LE(std::count(r.err.begin(), r.err.end(), '\n'), 1) << args << "\n" << r.err;
  }
}

TEST_F(Cli, EvalRejectsSizeMismatch) {
  const fs::path small = workdir() / "small.flo";
  write_flo(small, FlowField::constant(8, 8, 0.0F, 0.0F));
  const CliResult r = cli("eval --pred " + q(small) + " --gt " + q(sample(0, "flow_fwd.flo")) + " --events " +
                    q(sample(0, "events.evs")) + " --report " + q(workdir() / "mismatch.csv"));
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.err.find("dceiflow: error:"), std::string::npos) << r.err;
}
