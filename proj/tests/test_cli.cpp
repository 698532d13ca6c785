#include "fusedepth/cli.hpp"
#include "fusedepth/gradcheck.hpp"
#include "fusedepth/io.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace fusedepth;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fusedepth_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run(std::vector<std::string> args, std::string* out = nullptr) {
  args.insert(args.begin(), "fusedepth");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  testing::internal::CaptureStdout();
  testing::internal::CaptureStderr();
  const int code = run_cli(int(argv.size()), argv.data());
  const std::string text = testing::internal::GetCapturedStdout();
  testing::internal::GetCapturedStderr();
  if (out) *out = text;
  return code;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double synth_sobel(const std::string& text) {
  const auto at = text.find("mean sobel energy");
  EXPECT_NE(at, std::string::npos);
  return std::stod(text.substr(at + 17));
}

// Small network so the training cases run in seconds.
fs::path write_config(const fs::path& dir, double lr) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << nlohmann::json{{"sequence_length", 3}, {"iterations", 4}, {"cl_blocks", 2},
                                     {"batch", 1},           {"lr_aif", lr},    {"lr_rdr", lr}}
                          .dump();
  return p;
}

fs::path small_dataset(const std::string& name, int sequences, int frames) {
  const fs::path root = scratch(name);
  EXPECT_EQ(run({"synth", "--out", (root / "data").string(), "--sequences", std::to_string(sequences), "--frames",
                 std::to_string(frames), "--resolution", "32", "--seed", "5"}),
            kExitOk);
  return root;
}

std::vector<double> column(const fs::path& csv, const std::string& name) {
  std::ifstream in(csv);
  std::string line, cell;
  std::getline(in, line);
  std::stringstream header(line);
  int col = -1;
  for (int i = 0; std::getline(header, cell, ','); ++i)
    if (cell == name) col = i;
  EXPECT_GE(col, 0) << name;
  std::vector<double> out;
  while (std::getline(in, line)) {
    std::stringstream row(line);
    for (int i = 0; std::getline(row, cell, ','); ++i)
      if (i == col) out.push_back(std::stod(cell));
  }
  return out;
}

std::string safe(std::string s) {
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') c = '_';
  return s;
}

}  // namespace

TEST(CliSynth, DefaultWritesAtLeastEightSequences) {
  const fs::path root = scratch("synth_default");
  std::string out;
  ASSERT_EQ(run({"synth", "--out", root.string(), "--frames", "4", "--resolution", "16"}, &out), kExitOk);
  int seqs = 0;
  for (const auto& e : fs::directory_iterator(root)) seqs += fs::exists(e.path() / "meta.json");
  EXPECT_GE(seqs, 8);
  EXPECT_NE(out.find("events"), std::string::npos);
  fs::remove_all(root);
}

TEST(CliSynth, SameSeedGivesIdenticalEvents) {
  const fs::path root = scratch("synth_seed");
  for (const char* d : {"a", "b"})
    ASSERT_EQ(run({"synth", "--out", (root / d).string(), "--sequences", "2", "--frames", "5", "--resolution", "24",
                   "--seed", "11"}),
              kExitOk);
  ASSERT_EQ(run({"synth", "--out", (root / "c").string(), "--sequences", "2", "--frames", "5", "--resolution", "24",
                 "--seed", "12"}),
            kExitOk);
  for (const auto& e : fs::directory_iterator(root / "a")) {
    const fs::path rel = e.path().filename() / "events.csv";
    const std::string a = slurp(root / "a" / rel);
    EXPECT_FALSE(a.empty());
    EXPECT_EQ(a, slurp(root / "b" / rel));
    EXPECT_NE(a, slurp(root / "c" / rel));
  }
  fs::remove_all(root);
}

TEST(CliSynth, LowGainLowersSobelEnergy) {
  const fs::path root = scratch("synth_gain");
  std::string day, night;
  ASSERT_EQ(run({"synth", "--out", (root / "day").string(), "--sequences", "2", "--frames", "4", "--gain", "1.0"}, &day),
            kExitOk);
  ASSERT_EQ(
      run({"synth", "--out", (root / "night").string(), "--sequences", "2", "--frames", "4", "--gain", "0.2"}, &night),
      kExitOk);
  EXPECT_LT(synth_sobel(night), synth_sobel(day));
  fs::remove_all(root);
}

TEST(CliTrain, ZeroEpochsCheckpointEqualsInitialisation) {
  const fs::path root = small_dataset("train_zero", 1, 3);
  const fs::path cfg = write_config(root, 1e-3);
  ASSERT_EQ(run({"train", "--config", cfg.string(), "--dataset", (root / "data").string(), "--out",
                 (root / "run").string(), "--epochs", "0"}),
            kExitOk);
  RunConfig c = load_run_config(cfg);
  DepthNet<float> fresh(c.network(), c.seed);
  const auto saved = read_checkpoint(root / "run" / "checkpoint.bin");
  for (const auto& p : fresh.parameters().entries()) {
    const auto it = std::find_if(saved.begin(), saved.end(), [&](const CheckpointEntry& e) { return e.name == p.name; });
    ASSERT_NE(it, saved.end()) << p.name;
    ASSERT_EQ(it->values.size(), std::size_t(p.var.value().size()));
    for (std::size_t i = 0; i < it->values.size(); ++i) ASSERT_EQ(it->values[i], p.var.value().data()[i]) << p.name;
  }
  fs::remove_all(root);
}

TEST(CliTrain, TwoHundredStepsHalveTheLoss) {
  const fs::path root = small_dataset("train_overfit", 4, 6);
  const fs::path cfg = write_config(root, 2e-3);
  const fs::path run_dir = root / "run";
  std::string out;
  ASSERT_EQ(run({"train", "--config", cfg.string(), "--dataset", (root / "data").string(), "--out", run_dir.string(),
                 "--epochs", "1000", "--max-steps", "200"},
                &out),
            kExitOk);
  const auto total = column(run_dir / "loss.csv", "total");
  ASSERT_EQ(total.size(), 200u);
  // Per-step losses are noisy across samples; compare the first and last eight.
  double first = 0, last = 0;
  for (int i = 0; i < 8; ++i) {
    first += total[i];
    last += total[total.size() - 1 - i];
  }
  EXPECT_LT(last, 0.5 * first) << out;
  fs::remove_all(root);
}

TEST(CliTrain, ResumedRunReproducesLossLog) {
  const fs::path root = small_dataset("train_resume", 2, 4);
  const fs::path cfg = write_config(root, 1e-3);
  const std::string data = (root / "data").string();
  ASSERT_EQ(run({"train", "--config", cfg.string(), "--dataset", data, "--out", (root / "full").string(), "--epochs",
                 "3", "--seed", "9"}),
            kExitOk);
  ASSERT_EQ(run({"train", "--config", cfg.string(), "--dataset", data, "--out", (root / "split").string(), "--epochs",
                 "1", "--seed", "9"}),
            kExitOk);
  ASSERT_EQ(run({"train", "--config", cfg.string(), "--dataset", data, "--out", (root / "split").string(), "--epochs",
                 "3", "--seed", "9", "--resume", (root / "split" / "checkpoint.bin").string()}),
            kExitOk);
  const std::string full = slurp(root / "full" / "loss.csv");
  EXPECT_FALSE(full.empty());
  EXPECT_EQ(slurp(root / "split" / "loss.csv"), full);
  EXPECT_EQ(slurp(root / "split" / "checkpoint.bin"), slurp(root / "full" / "checkpoint.bin"));
  fs::remove_all(root);
}

TEST(CliTrain, MissingDatasetIsAConfigurationError) {
  const fs::path root = scratch("train_missing");
  EXPECT_EQ(run({"train", "--dataset", (root / "nope").string(), "--out", (root / "run").string()}), kExitConfig);
  EXPECT_EQ(run({"train", "--config", (root / "nope.json").string(), "--dataset", root.string(), "--out",
                 (root / "run").string()}),
            kExitConfig);
  std::ofstream(root / "bad.json") << R"({"batch": 4, "no_such_key": 1})";
  EXPECT_EQ(run({"train", "--config", (root / "bad.json").string(), "--dataset", root.string(), "--out",
                 (root / "run").string()}),
            kExitConfig);
  EXPECT_EQ(run({"train"}), kExitConfig);
  fs::remove_all(root);
}

TEST(CliEval, BypassScoresZeroAndWritesNineKeys) {
  const fs::path root = small_dataset("eval_bypass", 1, 8);
  ASSERT_EQ(run({"eval", "--dataset", (root / "data").string(), "--out", (root / "report").string(), "--bypass",
                 "--no-images"}),
            kExitOk);
  const auto j = nlohmann::json::parse(slurp(root / "report" / "metrics.json"));
  EXPECT_EQ(j.size(), 9u);
  for (const char* k :
       {"avg_abs_error", "abs_rel", "sq_rel", "rmse", "rmse_log", "si_log", "delta_1", "delta_2", "delta_3"})
    EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j["avg_abs_error"].size(), 3u);
  for (const auto& [k, v] : j["avg_abs_error"].items()) EXPECT_EQ(v.get<double>(), 0.0) << k;
  for (const char* k : {"abs_rel", "sq_rel", "rmse", "rmse_log", "si_log"}) EXPECT_EQ(j[k].get<double>(), 0.0) << k;
  EXPECT_EQ(j["delta_1"].get<double>(), 1.0);
  fs::remove_all(root);
}

TEST(CliEval, ReportMatchesOracleOnDumpedPredictions) {
  const fs::path root = small_dataset("eval_oracle", 2, 3);
  const fs::path cfg = write_config(root, 1e-3);
  const std::string data = (root / "data").string();
  ASSERT_EQ(run({"train", "--config", cfg.string(), "--dataset", data, "--out", (root / "run").string(), "--epochs",
                 "1"}),
            kExitOk);
  ASSERT_EQ(run({"eval", "--config", cfg.string(), "--dataset", data, "--out", (root / "report").string(),
                 "--checkpoint", (root / "run" / "checkpoint.bin").string(), "--cutoffs", "10,20,30"}),
            kExitOk);
  const auto j = nlohmann::json::parse(slurp(root / "report" / "metrics.json"));

  const RunConfig c = load_run_config(cfg);
  const double floor = depth_floor(c.alpha, c.d_max);
  std::vector<double> pred, gt;
  for (const SequenceSample& s : load_samples(data, c)) {
    for (int k = 0; k < s.length(); ++k) {
      char stem[16];
      std::snprintf(stem, sizeof stem, "%06d.f32", k);
      const fs::path f = root / "report" / "predictions" / safe(s.name) / stem;
      ASSERT_TRUE(fs::exists(f)) << f;
      EXPECT_TRUE(fs::exists(fs::path(f).replace_extension(".ppm")));
      const DepthRaster p = read_depth_raster(f);
      const DepthRaster& g = s.depth[k];
      for (int y = 0; y < g.height(); ++y)
        for (int x = 0; x < g.width(); ++x)
          if (g.valid(y, x) && g.data(y, x) >= floor) {
            pred.push_back(p.data(y, x));
            gt.push_back(g.data(y, x));
          }
    }
  }
  ASSERT_FALSE(gt.empty());
  oracle::Metrics o = oracle::depth_metrics(pred, gt, {10, 20, 30});
  // Dumped rasters are float32, so agreement is to single precision.
  const double tol = 1e-5;
  EXPECT_LT(oracle::rel_diff(j["abs_rel"], o.abs_rel), tol);
  EXPECT_LT(oracle::rel_diff(j["sq_rel"], o.sq_rel), tol);
  EXPECT_LT(oracle::rel_diff(j["rmse"], o.rmse), tol);
  EXPECT_LT(oracle::rel_diff(j["rmse_log"], o.rmse_log), tol);
  EXPECT_LT(oracle::rel_diff(j["si_log"], o.si_log), tol);
  EXPECT_LT(oracle::rel_diff(j["delta_1"], o.delta1), tol);
  EXPECT_LT(oracle::rel_diff(j["delta_2"], o.delta2), tol);
  EXPECT_LT(oracle::rel_diff(j["delta_3"], o.delta3), tol);
  for (int cut : {10, 20, 30})
    EXPECT_LT(oracle::rel_diff(j["avg_abs_error"][std::to_string(cut)], o.avg_abs_error[cut]), tol) << cut;
  fs::remove_all(root);
}

TEST(CliEval, NeedsCheckpointOrBypass) {
  const fs::path root = small_dataset("eval_nockpt", 1, 8);
  EXPECT_EQ(run({"eval", "--dataset", (root / "data").string(), "--out", (root / "r").string()}), kExitConfig);
  fs::remove_all(root);
}

TEST(CliInfer, WritesPredictions) {
  const fs::path root = small_dataset("infer", 1, 3);
  const fs::path cfg = write_config(root, 1e-3);
  const std::string data = (root / "data").string();
  ASSERT_EQ(run({"train", "--config", cfg.string(), "--dataset", data, "--out", (root / "run").string(), "--epochs",
                 "0"}),
            kExitOk);
  ASSERT_EQ(run({"infer", "--config", cfg.string(), "--dataset", data, "--out", (root / "pred").string(),
                 "--checkpoint", (root / "run" / "checkpoint.bin").string(), "--no-images"}),
            kExitOk);
  int rasters = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "pred")) rasters += e.path().extension() == ".f32";
  EXPECT_EQ(rasters, 3);
  fs::remove_all(root);
}

TEST(CliGradcheck, AllPassWithOneLinePerCheck) {
  std::ostringstream log;
  EXPECT_TRUE(cmd_gradcheck(0.0, log));
  std::istringstream in(log.str());
  std::string line;
  int pass = 0, fail = 0, other = 0;
  while (std::getline(in, line)) {
    if (line.rfind("PASS ", 0) == 0) ++pass;
    else if (line.rfind("FAIL ", 0) == 0) ++fail;
    else ++other;
  }
  EXPECT_EQ(pass, int(registered_gradient_checks().size() + affinity_bound_suite().size()));
  EXPECT_EQ(fail, 0);
  EXPECT_EQ(other, 1);
  EXPECT_NE(log.str().find("all checks passed"), std::string::npos);
}

TEST(CliGradcheck, InjectedFaultGivesNonzeroExit) {
  std::string out;
  EXPECT_EQ(run({"gradcheck", "--inject-fault", "0.01"}, &out), kExitVerification);
  EXPECT_NE(out.find("FAIL "), std::string::npos);
  EXPECT_NE(out.find("gradient checks FAILED"), std::string::npos);
}
