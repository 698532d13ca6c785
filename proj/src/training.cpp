#include "fusedepth/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

namespace fusedepth {

namespace fs = std::filesystem;

NetworkConfig RunConfig::network() const {
  NetworkConfig n;
  n.bins = bins;
  n.cl_blocks = cl_blocks;
  n.neighbors = neighbors;
  n.gamma_init = gamma_init;
  n.iterations = iterations;
  n.offset_radius = offset_radius;
  return n;
}

namespace {

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{std::uint32_t(a), std::uint32_t(a >> 32), std::uint32_t(b), std::uint32_t(b >> 32)};
  std::mt19937_64 rng(seq);
  return rng();
}

}  // namespace

void apply_config_json(RunConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  const nlohmann::json known = run_config_json(c);
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  try {
    read_field(j, "seed", c.seed);
    read_field(j, "sequence_length", c.sequence_length);
    read_field(j, "bins", c.bins);
    read_field(j, "alpha", c.alpha);
    read_field(j, "d_max", c.d_max);
    read_field(j, "cl_blocks", c.cl_blocks);
    read_field(j, "neighbors", c.neighbors);
    read_field(j, "gamma_init", c.gamma_init);
    read_field(j, "iterations", c.iterations);
    read_field(j, "offset_radius", c.offset_radius);
    read_field(j, "lambda_grad", c.lambda_grad);
    read_field(j, "grad_scales", c.grad_scales);
    read_field(j, "lr_aif", c.lr_aif);
    read_field(j, "lr_rdr", c.lr_rdr);
    read_field(j, "grad_clip", c.grad_clip);
    read_field(j, "batch", c.batch);
    read_field(j, "epochs", c.epochs);
    read_field(j, "max_steps", c.max_steps);
    read_field(j, "flip", c.flip);
    read_field(j, "crop_height", c.crop_height);
    read_field(j, "crop_width", c.crop_width);
    read_field(j, "zero_events", c.zero_events);
    read_field(j, "cutoffs", c.cutoffs);
    read_field(j, "min_depth", c.min_depth);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  if (c.batch < 1) throw ConfigError("batch must be at least 1");
  if (c.epochs < 0) throw ConfigError("epochs must be non-negative");
  if (c.sequence_length < 1) throw ConfigError("sequence_length must be at least 1");
  if (c.bins < 2) throw ConfigError("bins must be at least 2");
  if (!(c.alpha > 0) || !(c.d_max > 0)) throw ConfigError("alpha and d_max must be positive");
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  RunConfig c;
  apply_config_json(c, j);
  return c;
}

nlohmann::json run_config_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"sequence_length", c.sequence_length},
          {"bins", c.bins},
          {"alpha", c.alpha},
          {"d_max", c.d_max},
          {"cl_blocks", c.cl_blocks},
          {"neighbors", c.neighbors},
          {"gamma_init", c.gamma_init},
          {"iterations", c.iterations},
          {"offset_radius", c.offset_radius},
          {"lambda_grad", c.lambda_grad},
          {"grad_scales", c.grad_scales},
          {"lr_aif", c.lr_aif},
          {"lr_rdr", c.lr_rdr},
          {"grad_clip", c.grad_clip},
          {"batch", c.batch},
          {"epochs", c.epochs},
          {"max_steps", c.max_steps},
          {"flip", c.flip},
          {"crop_height", c.crop_height},
          {"crop_width", c.crop_width},
          {"zero_events", c.zero_events},
          {"cutoffs", c.cutoffs},
          {"min_depth", c.min_depth}};
}

// ---------------------------------------------------------------------------

double Adam::learning_rate(const std::string& name) const { return name.rfind("rdr.", 0) == 0 ? lr_rdr_ : lr_aif_; }

void Adam::step(ParameterStore<float>& store) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, double(t_));
  const double c2 = 1.0 - std::pow(beta2_, double(t_));
  for (auto& e : store.entries()) {
    const Tensor<float> g = e.var.grad();
    auto [mi, fresh_m] = m_.try_emplace(e.name, Tensor<float>::zeros(g.shape()));
    auto [vi, fresh_v] = v_.try_emplace(e.name, Tensor<float>::zeros(g.shape()));
    auto& m = mi->second.values();
    auto& v = vi->second.values();
    m = float(beta1_) * m + float(1 - beta1_) * g.values();
    v = float(beta2_) * v + float(1 - beta2_) * g.values().square();
    const float lr = float(learning_rate(e.name));
    e.var.mutable_value().values() -= lr * (m / float(c1)) / ((v / float(c2)).sqrt() + float(eps_));
  }
}

void Adam::save(std::vector<CheckpointEntry>& out) const {
  out.push_back(to_checkpoint_entry("optim.step", Tensor<float>::constant({1, 1, 1}, float(t_))));
  for (const auto& [name, m] : m_) out.push_back(to_checkpoint_entry("optim.m." + name, m));
  for (const auto& [name, v] : v_) out.push_back(to_checkpoint_entry("optim.v." + name, v));
}

void Adam::load(const std::vector<CheckpointEntry>& in) {
  m_.clear();
  v_.clear();
  t_ = 0;
  for (const auto& e : in) {
    if (e.name == "optim.step") t_ = long(std::lround(e.values.at(0)));
    else if (e.name.rfind("optim.m.", 0) == 0) m_[e.name.substr(8)] = from_checkpoint_entry<float>(e);
    else if (e.name.rfind("optim.v.", 0) == 0) v_[e.name.substr(8)] = from_checkpoint_entry<float>(e);
  }
}

double clip_gradients(ParameterStore<float>& store, double max_norm) {
  double sq = 0.0;
  for (const auto& e : store.entries())
    if (e.var.node()->grad.shape() == e.var.shape()) sq += e.var.node()->grad.values().template cast<double>().square().sum();
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const float s = float(max_norm / norm);
    for (auto& e : store.entries())
      if (e.var.node()->grad.shape() == e.var.shape()) e.var.node()->grad.values() *= s;
  }
  return norm;
}

std::vector<LossTarget<float>> loss_targets(const SequenceSample& s, double alpha, double d_max) {
  std::vector<LossTarget<float>> out;
  for (const DepthRaster& d : s.depth) {
    const DepthRaster n = log_normalize(d, alpha, d_max);
    out.push_back({raster_tensor<float>(n), validity_tensor<float>(n.valid)});
  }
  return out;
}

// ---------------------------------------------------------------------------

Trainer::Trainer(RunConfig cfg)
    : cfg_(std::move(cfg)),
      net_(std::make_unique<DepthNet<float>>(cfg_.network(), cfg_.seed)),
      adam_(cfg_.lr_aif, cfg_.lr_rdr) {}

SequenceSample Trainer::augment(const SequenceSample& s, std::uint64_t key) const {
  std::mt19937_64 rng(key);
  SequenceSample out = s;
  if (cfg_.flip && (rng() & 1)) out = flip_horizontal(out);
  if (cfg_.crop_height > 0 && cfg_.crop_width > 0 &&
      (cfg_.crop_height < out.height() || cfg_.crop_width < out.width())) {
    const int y0 = int(rng() % std::uint64_t(out.height() - cfg_.crop_height + 1));
    const int x0 = int(rng() % std::uint64_t(out.width() - cfg_.crop_width + 1));
    out = crop(out, y0, x0, cfg_.crop_height, cfg_.crop_width);
  }
  return out;
}

namespace {

LossBreakdown<float> sequence_loss(const DepthNet<float>& net, const SequenceSample& s, const RunConfig& cfg) {
  std::vector<StepInput<float>> steps;
  for (int k = 0; k < s.length(); ++k) steps.push_back(make_step_input<float>(s, k, cfg.zero_events));
  const auto preds = net.run(steps);
  return total_loss(preds, loss_targets(s, cfg.alpha, cfg.d_max), float(cfg.lambda_grad), cfg.grad_scales);
}

}  // namespace

StepLog Trainer::train_step(const std::vector<const SequenceSample*>& batch) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  net_->parameters().zero_grad();
  StepLog log;
  log.step = step_;
  const float inv = 1.0f / float(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const SequenceSample s = augment(*batch[i], mix(cfg_.seed, std::uint64_t(step_) * 1024 + i));
    const LossBreakdown<float> loss = sequence_loss(*net_, s, cfg_);
    backward(loss.total, inv);
    log.mse += loss.mse / double(batch.size());
    log.grad += loss.grad / double(batch.size());
    log.total += double(loss.total.item()) / double(batch.size());
  }
  clip_gradients(net_->parameters(), cfg_.grad_clip);
  adam_.step(net_->parameters());
  ++step_;
  return log;
}

StepLog Trainer::evaluate_loss(const SequenceSample& s) const {
  const LossBreakdown<float> loss = sequence_loss(*net_, s, cfg_);
  return {step_, loss.mse, loss.grad, double(loss.total.item())};
}

std::vector<StepLog> Trainer::fit(const std::vector<SequenceSample>& data, const fs::path& out_dir) {
  if (data.empty()) throw std::invalid_argument("no training samples");
  std::ofstream csv;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    const fs::path csv_path = out_dir / "loss.csv";
    const bool fresh = step_ == 0 || !fs::exists(csv_path);
    csv.open(csv_path, fresh ? std::ios::trunc : std::ios::app);
    if (!csv) throw std::runtime_error("cannot write " + csv_path.string());
    if (fresh) csv << "step,mse,grad,total\n";
    csv << std::setprecision(9);
  }
  std::vector<StepLog> logs;
  auto limit_reached = [&] { return cfg_.max_steps > 0 && step_ >= cfg_.max_steps; };
  while (epoch_ < cfg_.epochs && !limit_reached()) {
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix(cfg_.seed, 0x5eed0000ULL + std::uint64_t(epoch_)));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < order.size() && !limit_reached(); b += std::size_t(cfg_.batch)) {
      std::vector<const SequenceSample*> batch;
      for (std::size_t i = b; i < std::min(order.size(), b + std::size_t(cfg_.batch)); ++i)
        batch.push_back(&data[order[i]]);
      const StepLog log = train_step(batch);
      logs.push_back(log);
      if (csv.is_open()) csv << log.step << ',' << log.mse << ',' << log.grad << ',' << log.total << '\n';
    }
    ++epoch_;
    if (!out_dir.empty()) {
      std::ostringstream name;
      name << "checkpoint_epoch_" << std::setw(3) << std::setfill('0') << epoch_ << ".bin";
      save_checkpoint(out_dir / name.str());
      save_checkpoint(out_dir / "checkpoint.bin");
    }
  }
  return logs;
}

void Trainer::save_checkpoint(const fs::path& path) const {
  std::vector<CheckpointEntry> entries = snapshot_parameters(net_->parameters());
  adam_.save(entries);
  entries.push_back(to_checkpoint_entry("train.epoch", Tensor<float>::constant({1, 1, 1}, float(epoch_))));
  entries.push_back(to_checkpoint_entry("train.step", Tensor<float>::constant({1, 1, 1}, float(step_))));
  write_checkpoint(path, entries);
}

void Trainer::load_checkpoint(const fs::path& path) {
  const std::vector<CheckpointEntry> entries = read_checkpoint(path);
  restore_parameters(net_->parameters(), entries);
  adam_.load(entries);
  for (const auto& e : entries) {
    if (e.name == "train.epoch") epoch_ = int(std::lround(e.values.at(0)));
    if (e.name == "train.step") step_ = long(std::lround(e.values.at(0)));
  }
}

// ---------------------------------------------------------------------------

std::vector<DepthRaster> predict_depth(const DepthNet<float>& net, const SequenceSample& s, const RunConfig& cfg) {
  std::vector<StepInput<float>> steps;
  for (int k = 0; k < s.length(); ++k) steps.push_back(make_step_input<float>(s, k, cfg.zero_events));
  std::vector<DepthRaster> out;
  for (const Var<float>& p : net.run(steps)) {
    DepthRaster r;
    r.space = DepthSpace::log01;
    r.alpha = cfg.alpha;
    r.d_max = cfg.d_max;
    r.data = p.value().plane(0).cast<double>();
    r.valid = BoolPlane::Constant(r.data.rows(), r.data.cols(), true);
    out.push_back(log_denormalize(r));
  }
  return out;
}

EvalResult evaluate(const DepthNet<float>* net, const std::vector<SequenceSample>& data, const RunConfig& cfg,
                    bool keep_predictions) {
  MetricAccumulator acc(cfg.cutoffs);
  // Ground truth closer than the representable floor is treated as invalid.
  const double min_depth = std::max(cfg.min_depth, depth_floor(cfg.alpha, cfg.d_max));
  EvalResult result;
  for (const SequenceSample& s : data) {
    std::vector<DepthRaster> preds = net ? predict_depth(*net, s, cfg) : s.depth;
    for (std::size_t k = 0; k < preds.size(); ++k) acc.add(preds[k], s.depth[k], min_depth);
    if (keep_predictions) result.predictions.push_back(std::move(preds));
  }
  result.metrics = acc.finish();
  return result;
}

}  // namespace fusedepth
