#pragma once

#include "fusedepth/model.hpp"
#include "fusedepth/objective_metrics.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace fusedepth {

/// All run hyperparameters. JSON config keys are these field names.
struct RunConfig {
  std::uint64_t seed = 1;
  // data
  int sequence_length = 8;
  int bins = 5;
  double alpha = 3.7;
  double d_max = 80.0;
  // network
  int cl_blocks = 3;
  int neighbors = 8;
  double gamma_init = 8.0;
  int iterations = 18;
  double offset_radius = 3.0;
  // objective
  double lambda_grad = 0.25;
  int grad_scales = 4;
  // optimisation
  double lr_aif = 5e-6;
  double lr_rdr = 1e-5;
  double grad_clip = 1.0;
  int batch = 4;
  int epochs = 100;
  /// Stop after this many optimiser steps (0 = no limit).
  int max_steps = 0;
  // augmentation
  bool flip = false;
  int crop_height = 0;  // 0 disables cropping
  int crop_width = 0;
  // ablation
  bool zero_events = false;
  // evaluation
  std::vector<int> cutoffs{10, 20, 30};
  double min_depth = 0.0;

  NetworkConfig network() const;
};

/// Overlays the keys present in `j` onto `cfg`. Unknown keys are rejected.
void apply_config_json(RunConfig& cfg, const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json run_config_json(const RunConfig& cfg);

/// Adam with one learning rate per parameter group. Parameters named
/// "rdr.*" use lr_rdr, everything else lr_aif.
class Adam {
 public:
  Adam(double lr_aif, double lr_rdr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_aif_(lr_aif), lr_rdr_(lr_rdr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParameterStore<float>& store);
  double learning_rate(const std::string& name) const;
  long steps() const { return t_; }

  void save(std::vector<CheckpointEntry>& out) const;
  void load(const std::vector<CheckpointEntry>& in);

 private:
  double lr_aif_, lr_rdr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::map<std::string, Tensor<float>> m_, v_;
};

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_gradients(ParameterStore<float>& store, double max_norm);

struct StepLog {
  long step = 0;
  double mse = 0.0;
  double grad = 0.0;
  double total = 0.0;
};

/// Log-depth targets of a sample for training.
std::vector<LossTarget<float>> loss_targets(const SequenceSample& s, double alpha, double d_max);

class Trainer {
 public:
  explicit Trainer(RunConfig cfg);

  /// One optimiser step over `batch` samples (gradients averaged).
  StepLog train_step(const std::vector<const SequenceSample*>& batch);

  /// Runs the remaining epochs. With a non-empty `out_dir`, appends to
  /// loss.csv and writes checkpoint.bin plus checkpoint_epoch_NNN.bin after
  /// every epoch.
  std::vector<StepLog> fit(const std::vector<SequenceSample>& data, const std::filesystem::path& out_dir = {});

  /// Loss of a sample without updating anything.
  StepLog evaluate_loss(const SequenceSample& s) const;

  void save_checkpoint(const std::filesystem::path& path) const;
  /// Restores parameters and, when present, optimiser state and epoch.
  void load_checkpoint(const std::filesystem::path& path);

  DepthNet<float>& net() { return *net_; }
  const DepthNet<float>& net() const { return *net_; }
  const RunConfig& config() const { return cfg_; }
  int epoch() const { return epoch_; }
  long step_count() const { return step_; }

 private:
  SequenceSample augment(const SequenceSample& s, std::uint64_t key) const;

  RunConfig cfg_;
  std::unique_ptr<DepthNet<float>> net_;
  Adam adam_;
  int epoch_ = 0;
  long step_ = 0;
};

/// Predicted metric depth for every frame of a sample.
std::vector<DepthRaster> predict_depth(const DepthNet<float>& net, const SequenceSample& s, const RunConfig& cfg);

struct EvalResult {
  MetricRecord metrics;
  std::vector<std::vector<DepthRaster>> predictions;  // per sample, per frame (metres)
};

/// Pools metrics over every valid pixel of every frame. Without a network
/// the ground truth is scored against itself.
EvalResult evaluate(const DepthNet<float>* net, const std::vector<SequenceSample>& data, const RunConfig& cfg,
                    bool keep_predictions = false);

}  // namespace fusedepth
