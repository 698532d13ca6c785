#pragma once

#include "fusedepth/data_harness.hpp"
#include "fusedepth/training.hpp"

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace fusedepth {

/// Process exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitVerification = 1, kExitConfig = 2 };

struct SynthStats {
  int sequences = 0;
  std::size_t events = 0;
  double positive_fraction = 0.0;
  double events_per_frame = 0.0;
  double mean_sobel_energy = 0.0;
};

SynthStats cmd_synth(const std::filesystem::path& out, const SynthOptions& opt, std::ostream& log);

struct TrainOptions {
  std::filesystem::path dataset;
  std::filesystem::path out;
  std::optional<std::filesystem::path> resume;
};

/// Returns the step log. Writes loss.csv, config.json and checkpoints.
std::vector<StepLog> cmd_train(const RunConfig& cfg, const TrainOptions& opt, std::ostream& log);

struct EvalOptions {
  std::filesystem::path dataset;
  std::filesystem::path out;
  std::optional<std::filesystem::path> checkpoint;
  /// Score the ground truth against itself instead of running a network.
  bool bypass = false;
  bool dump_images = true;
};

/// Writes metrics.json, prints the table and dumps predictions (.f32) and
/// colour images into out/predictions.
MetricRecord cmd_eval(const RunConfig& cfg, const EvalOptions& opt, std::ostream& log);

/// Predictions only, no metrics.
void cmd_infer(const RunConfig& cfg, const EvalOptions& opt, std::ostream& log);

/// Every registered gradient check plus the affinity bound suite; one line
/// per check. Returns true when all pass.
bool cmd_gradcheck(double corrupt, std::ostream& log);

/// Loads and assembles every sequence of a dataset.
std::vector<SequenceSample> load_samples(const std::filesystem::path& root, const RunConfig& cfg,
                                         std::ostream* log = nullptr);

int run_cli(int argc, char** argv);

}  // namespace fusedepth
