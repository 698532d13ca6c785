#include "fusedepth/cli.hpp"

#include "fusedepth/gradcheck.hpp"
#include "fusedepth/mask_init.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>

namespace fusedepth {

namespace fs = std::filesystem;

SynthStats cmd_synth(const fs::path& out, const SynthOptions& opt, std::ostream& log) {
  if (opt.sequences < 1) throw ConfigError("need at least one sequence");
  if (!(opt.threshold_c > 0)) throw ConfigError("--threshold-c must be positive");
  if (!(opt.gain > 0)) throw ConfigError("--gain must be positive");
  SynthStats st;
  std::size_t positive = 0, frames = 0;
  double sobel = 0.0;
  for (int i = 0; i < opt.sequences; ++i) {
    const SequenceData seq = synthesize_sequence(opt, i);
    write_sequence(out / seq.name, seq);
    st.events += seq.events.size();
    for (const Event& e : seq.events) positive += e.p > 0;
    for (const FrameRecord& f : seq.frames) {
      sobel += sobel_edges(f.frame).values().mean();
      ++frames;
    }
    ++st.sequences;
  }
  st.positive_fraction = st.events ? double(positive) / double(st.events) : 0.0;
  st.events_per_frame = frames ? double(st.events) / double(frames) : 0.0;
  st.mean_sobel_energy = frames ? sobel / double(frames) : 0.0;
  log << "sequences          " << st.sequences << '\n'
      << "frames             " << frames << '\n'
      << "events             " << st.events << '\n'
      << "events per frame   " << std::fixed << std::setprecision(1) << st.events_per_frame << '\n'
      << "positive fraction  " << std::setprecision(4) << st.positive_fraction << '\n'
      << "mean sobel energy  " << std::setprecision(6) << st.mean_sobel_energy << '\n';
  log.unsetf(std::ios::floatfield);
  return st;
}

std::vector<SequenceSample> load_samples(const fs::path& root, const RunConfig& cfg, std::ostream* log) {
  AssemblyOptions a;
  a.sequence_length = cfg.sequence_length;
  a.bins = cfg.bins;
  std::vector<SequenceSample> out;
  int dropped = 0;
  for (const SequenceData& seq : load_dataset(root)) {
    AssemblyReport rep;
    for (auto& s : assemble_samples(seq, a, &rep)) out.push_back(std::move(s));
    dropped += rep.dropped;
  }
  if (log) *log << "samples " << out.size() << " (dropped " << dropped << " with missing depth)\n";
  if (out.empty()) throw DatasetError("dataset " + root.string() + " yields no complete samples of length " +
                                     std::to_string(cfg.sequence_length));
  return out;
}

std::vector<StepLog> cmd_train(const RunConfig& cfg, const TrainOptions& opt, std::ostream& log) {
  const auto samples = load_samples(opt.dataset, cfg, &log);
  Trainer trainer(cfg);
  if (opt.resume) {
    trainer.load_checkpoint(*opt.resume);
    log << "resumed at epoch " << trainer.epoch() << ", step " << trainer.step_count() << '\n';
  }
  fs::create_directories(opt.out);
  std::ofstream(opt.out / "config.json") << run_config_json(cfg).dump(2) << '\n';
  log << "parameters " << trainer.net().parameters().scalar_count() << '\n';
  const auto logs = trainer.fit(samples, opt.out);
  // Zero epochs still leaves a checkpoint of the initialisation.
  if (!fs::exists(opt.out / "checkpoint.bin")) trainer.save_checkpoint(opt.out / "checkpoint.bin");
  if (!logs.empty())
    log << "steps " << logs.size() << ", first total " << logs.front().total << ", last total " << logs.back().total
        << '\n';
  log << "checkpoint " << (opt.out / "checkpoint.bin").string() << '\n';
  return logs;
}

namespace {

std::string safe_name(std::string s) {
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') c = '_';
  return s;
}

void dump_predictions(const fs::path& dir, const std::vector<SequenceSample>& data,
                      const std::vector<std::vector<DepthRaster>>& preds, const RunConfig& cfg, bool images) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    const fs::path sdir = dir / safe_name(data[i].name);
    fs::create_directories(sdir);
    for (std::size_t k = 0; k < preds[i].size(); ++k) {
      std::ostringstream stem;
      stem << std::setw(6) << std::setfill('0') << k;
      write_depth_raster(sdir / (stem.str() + ".f32"), preds[i][k]);
      if (!images) continue;
      // Colour in normalised log depth so every run shares one fixed range.
      DepthRaster pm = preds[i][k];
      pm.data = pm.data.max(1e-6);
      save_depth_ppm(sdir / (stem.str() + ".ppm"), log_normalize(pm, cfg.alpha, cfg.d_max), 0.0, 1.0);
      save_depth_ppm(sdir / (stem.str() + "_gt.ppm"), log_normalize(data[i].depth[k], cfg.alpha, cfg.d_max), 0.0, 1.0);
    }
  }
}

std::unique_ptr<DepthNet<float>> load_network(const RunConfig& cfg, const fs::path& checkpoint) {
  auto net = std::make_unique<DepthNet<float>>(cfg.network(), cfg.seed);
  restore_parameters(net->parameters(), read_checkpoint(checkpoint));
  return net;
}

}  // namespace

MetricRecord cmd_eval(const RunConfig& cfg, const EvalOptions& opt, std::ostream& log) {
  const auto samples = load_samples(opt.dataset, cfg, &log);
  std::unique_ptr<DepthNet<float>> net;
  if (!opt.bypass) {
    if (!opt.checkpoint) throw ConfigError("eval needs --checkpoint (or --bypass)");
    net = load_network(cfg, *opt.checkpoint);
  }
  const EvalResult r = evaluate(net.get(), samples, cfg, true);
  fs::create_directories(opt.out);
  std::ofstream(opt.out / "metrics.json") << metrics_to_json(r.metrics).dump(2) << '\n';
  dump_predictions(opt.out / "predictions", samples, r.predictions, cfg, opt.dump_images);
  log << metrics_to_table(r.metrics);
  return r.metrics;
}

void cmd_infer(const RunConfig& cfg, const EvalOptions& opt, std::ostream& log) {
  if (!opt.checkpoint) throw ConfigError("infer needs --checkpoint");
  const auto samples = load_samples(opt.dataset, cfg, &log);
  const auto net = load_network(cfg, *opt.checkpoint);
  std::vector<std::vector<DepthRaster>> preds;
  for (const auto& s : samples) preds.push_back(predict_depth(*net, s, cfg));
  dump_predictions(opt.out / "predictions", samples, preds, cfg, opt.dump_images);
  log << "wrote " << preds.size() << " sequences to " << (opt.out / "predictions").string() << '\n';
}

bool cmd_gradcheck(double corrupt, std::ostream& log) {
  GradCheckOptions o;
  o.corrupt = corrupt;
  bool ok = true;
  auto line = [&](const GradCheckReport& r) {
    ok = ok && r.passed;
    log << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(22) << r.name << std::right
        << " max_rel_error=" << std::scientific << std::setprecision(3) << r.max_error << " entries=" << r.entries;
    if (!r.note.empty()) log << "  " << r.note;
    else if (!r.passed) log << "  worst " << r.worst;
    log << '\n';
    log.unsetf(std::ios::floatfield);
  };
  for (const auto& c : registered_gradient_checks()) line(c.run(o));
  for (const auto& r : affinity_bound_suite()) line(r);
  log << (ok ? "all checks passed" : "gradient checks FAILED") << '\n';
  return ok;
}

// ---------------------------------------------------------------------------

namespace {

void parse_resolution(const std::string& s, SynthOptions& opt) {
  const auto x = s.find('x');
  try {
    if (x == std::string::npos) {
      opt.width = opt.height = std::stoi(s);
    } else {
      opt.width = std::stoi(s.substr(0, x));
      opt.height = std::stoi(s.substr(x + 1));
    }
  } catch (const std::exception&) {
    throw ConfigError("--resolution expects N or WxH, got '" + s + "'");
  }
  if (opt.width < 8 || opt.height < 8) throw ConfigError("--resolution must be at least 8x8");
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Recurrent event + frame monocular depth estimation"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 1;
  std::string dataset, out, checkpoint, resume, resolution;
  int epochs = 0, batch = 0, sequences = 8, frames = 24, max_steps = 0;
  double gain = 1.0, threshold_c = 0.2, noise = 0.01;
  std::vector<int> cutoffs;
  bool bypass = false, zero_events = false, no_images = false;
  double fault = 0.0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON run configuration (keys = RunConfig fields)");
    cmd->add_option("--seed", seed, "Random seed");
  };

  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  add_common(synth);
  synth->add_option("--out", out, "Dataset root to write")->required();
  synth->add_option("--sequences", sequences, "Number of sequences");
  synth->add_option("--frames", frames, "Frames per sequence");
  synth->add_option("--resolution", resolution, "N or WxH (default 64)");
  synth->add_option("--gain", gain, "Lighting gain (night < 1)");
  synth->add_option("--threshold-c", threshold_c, "Event contrast threshold");
  synth->add_option("--noise", noise, "Frame noise standard deviation");

  CLI::App* train = app.add_subcommand("train", "Train on a dataset");
  add_common(train);
  train->add_option("--dataset", dataset, "Dataset root")->required();
  train->add_option("--out", out, "Output directory")->required();
  CLI::Option* epochs_opt = train->add_option("--epochs", epochs, "Epochs");
  CLI::Option* batch_opt = train->add_option("--batch", batch, "Sequences per step");
  CLI::Option* steps_opt = train->add_option("--max-steps", max_steps, "Stop after this many steps");
  train->add_option("--resume", resume, "Checkpoint to resume from");
  CLI::Option* zero_train = train->add_flag("--zero-events", zero_events, "Frame-only ablation");

  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(eval);
  eval->add_option("--dataset", dataset, "Dataset root")->required();
  eval->add_option("--out", out, "Report directory")->required();
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file");
  CLI::Option* cutoff_opt = eval->add_option("--cutoffs", cutoffs, "Cut-off distances in metres")->delimiter(',');
  eval->add_flag("--bypass", bypass, "Score ground truth against itself");
  CLI::Option* zero_eval = eval->add_flag("--zero-events", zero_events, "Frame-only ablation");
  eval->add_flag("--no-images", no_images, "Skip colour image dumps");

  CLI::App* infer = app.add_subcommand("infer", "Write depth predictions");
  add_common(infer);
  infer->add_option("--dataset", dataset, "Dataset root")->required();
  infer->add_option("--out", out, "Output directory")->required();
  infer->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  CLI::Option* zero_infer = infer->add_flag("--zero-events", zero_events, "Frame-only ablation");
  infer->add_flag("--no-images", no_images, "Skip colour image dumps");

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "Run the gradient and bound checks");
  gradcheck->add_option("--inject-fault", fault, "Scale analytic gradients by (1 + x); for testing the harness");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_run_config(config_path);
    auto seed_given = [&](CLI::App* cmd) { return cmd->count("--seed") > 0; };

    if (*synth) {
      SynthOptions opt;
      opt.seed = seed_given(synth) ? seed : cfg.seed;
      opt.sequences = sequences;
      opt.frames = frames;
      if (!resolution.empty()) parse_resolution(resolution, opt);
      opt.gain = gain;
      opt.threshold_c = threshold_c;
      opt.noise_sigma = noise;
      opt.alpha = cfg.alpha;
      opt.d_max = cfg.d_max;
      cmd_synth(out, opt, std::cout);
      return kExitOk;
    }
    if (*train) {
      if (seed_given(train)) cfg.seed = seed;
      if (epochs_opt->count()) cfg.epochs = epochs;
      if (batch_opt->count()) cfg.batch = batch;
      if (steps_opt->count()) cfg.max_steps = max_steps;
      if (zero_train->count()) cfg.zero_events = true;
      if (cfg.batch < 1 || cfg.epochs < 0) throw ConfigError("--batch must be >= 1 and --epochs >= 0");
      TrainOptions opt{dataset, out, std::nullopt};
      if (!resume.empty()) opt.resume = resume;
      cmd_train(cfg, opt, std::cout);
      return kExitOk;
    }
    if (*eval || *infer) {
      CLI::App* cmd = *eval ? eval : infer;
      if (seed_given(cmd)) cfg.seed = seed;
      if (cutoff_opt->count()) cfg.cutoffs = cutoffs;
      if (zero_eval->count() || zero_infer->count()) cfg.zero_events = true;
      EvalOptions opt;
      opt.dataset = dataset;
      opt.out = out;
      if (!checkpoint.empty()) opt.checkpoint = checkpoint;
      opt.bypass = bypass;
      opt.dump_images = !no_images;
      if (*eval) cmd_eval(cfg, opt, std::cout);
      else cmd_infer(cfg, opt, std::cout);
      return kExitOk;
    }
    if (*gradcheck) return cmd_gradcheck(fault, std::cout) ? kExitOk : kExitVerification;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DatasetError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const EventError& e) {
    std::cerr << "event data error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DepthDataError& e) {
    std::cerr << "depth data error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << '\n';
    return kExitConfig;
  }
  return kExitConfig;
}

}  // namespace fusedepth
