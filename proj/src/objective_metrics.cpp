#include "fusedepth/objective_metrics.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

namespace fusedepth {

DepthRaster DepthRaster::meters(ArrayRM<double> depth, double alpha, double d_max) {
  DepthRaster r;
  r.valid = depth.isFinite() && (depth > 0.0);
  r.data = r.valid.select(depth, 0.0);
  r.space = DepthSpace::meters;
  r.alpha = alpha;
  r.d_max = d_max;
  return r;
}

double log_normalize_value(double depth_m, double alpha, double d_max) {
  return std::log(depth_m / d_max) / alpha + 1.0;
}

double log_denormalize_value(double v, double alpha, double d_max) { return d_max * std::exp(alpha * (v - 1.0)); }

DepthRaster log_normalize(const DepthRaster& depth_m, double alpha, double d_max) {
  if (!(alpha > 0) || !(d_max > 0)) throw std::invalid_argument("log_normalize: alpha and d_max must be positive");
  if (depth_m.space != DepthSpace::meters) throw std::invalid_argument("log_normalize expects a metric raster");
  DepthRaster out;
  out.space = DepthSpace::log01;
  out.alpha = alpha;
  out.d_max = d_max;
  out.valid = depth_m.valid;
  out.data = ArrayRM<double>::Zero(depth_m.height(), depth_m.width());
  out.clamped = BoolPlane::Constant(depth_m.height(), depth_m.width(), false);
  for (int y = 0; y < depth_m.height(); ++y)
    for (int x = 0; x < depth_m.width(); ++x) {
      if (!depth_m.valid(y, x)) continue;
      const double d = depth_m.data(y, x);
      if (!(d > 0) || !std::isfinite(d))
        throw DepthDataError("non-positive depth " + std::to_string(d) + " on valid pixel (" + std::to_string(x) +
                             ", " + std::to_string(y) + ")");
      const double v = log_normalize_value(d, alpha, d_max);
      out.data(y, x) = std::clamp(v, 0.0, 1.0);
      out.clamped(y, x) = v < 0.0 || v > 1.0;
    }
  return out;
}

DepthRaster log_denormalize(const DepthRaster& depth_log) {
  if (depth_log.space != DepthSpace::log01) throw std::invalid_argument("log_denormalize expects a log01 raster");
  DepthRaster out;
  out.space = DepthSpace::meters;
  out.alpha = depth_log.alpha;
  out.d_max = depth_log.d_max;
  out.valid = depth_log.valid;
  out.data = depth_log.data.unaryExpr(
      [&](double v) { return log_denormalize_value(v, depth_log.alpha, depth_log.d_max); });
  return out;
}

MetricAccumulator::MetricAccumulator(std::vector<int> cutoffs, CutoffBasis basis)
    : cutoffs_(std::move(cutoffs)),
      basis_(basis),
      cutoff_abs_sum_(cutoffs_.size(), 0.0),
      cutoff_count_(cutoffs_.size(), 0) {}

void MetricAccumulator::add(const DepthRaster& pred_m, const DepthRaster& gt_m, double min_depth) {
  if (pred_m.space != DepthSpace::meters || gt_m.space != DepthSpace::meters)
    throw std::invalid_argument("depth metrics expect metric rasters");
  if (pred_m.height() != gt_m.height() || pred_m.width() != gt_m.width())
    throw ShapeError("depth metrics: prediction and ground truth sizes differ");
  for (int y = 0; y < gt_m.height(); ++y)
    for (int x = 0; x < gt_m.width(); ++x) {
      if (!gt_m.valid(y, x)) continue;
      const double g = gt_m.data(y, x);
      if (g < min_depth) continue;
      const double p = pred_m.data(y, x);
      if (!(p > 0) || !(g > 0)) throw DepthDataError("depth metrics need positive depths on valid pixels");
      const double err = p - g;
      const double dlog = std::log(p) - std::log(g);
      const double ratio = std::max(p / g, g / p);
      ++n_;
      abs_rel_ += std::abs(err) / g;
      sq_rel_ += err * err / g;
      sq_err_ += err * err;
      sq_log_ += dlog * dlog;
      log_sum_ += dlog;
      d1_ += ratio < 1.25;
      d2_ += ratio < 1.25 * 1.25;
      d3_ += ratio < 1.25 * 1.25 * 1.25;
      const double basis_depth = basis_ == CutoffBasis::ground_truth ? g : p;
      for (std::size_t c = 0; c < cutoffs_.size(); ++c)
        if (basis_depth <= cutoffs_[c]) {
          cutoff_abs_sum_[c] += std::abs(err);
          ++cutoff_count_[c];
        }
    }
}

MetricRecord MetricAccumulator::finish() const {
  MetricRecord m;
  m.pixels = n_;
  for (std::size_t c = 0; c < cutoffs_.size(); ++c)
    m.avg_abs_error[cutoffs_[c]] = cutoff_count_[c] ? cutoff_abs_sum_[c] / double(cutoff_count_[c]) : 0.0;
  if (n_ == 0) return m;
  const double n = double(n_);
  m.abs_rel = abs_rel_ / n;
  m.sq_rel = sq_rel_ / n;
  m.rmse = std::sqrt(sq_err_ / n);
  m.rmse_log = std::sqrt(sq_log_ / n);
  const double mean_log = log_sum_ / n;
  m.si_log = sq_log_ / n - mean_log * mean_log;
  m.delta1 = double(d1_) / n;
  m.delta2 = double(d2_) / n;
  m.delta3 = double(d3_) / n;
  return m;
}

MetricRecord depth_metrics(const DepthRaster& pred_m, const DepthRaster& gt_m, const std::vector<int>& cutoffs,
                           CutoffBasis basis) {
  MetricAccumulator acc(cutoffs, basis);
  acc.add(pred_m, gt_m);
  return acc.finish();
}

nlohmann::json metrics_to_json(const MetricRecord& m) {
  nlohmann::json cut = nlohmann::json::object();
  for (const auto& [c, v] : m.avg_abs_error) cut[std::to_string(c)] = v;
  return {{"avg_abs_error", cut}, {"abs_rel", m.abs_rel}, {"sq_rel", m.sq_rel},
          {"rmse", m.rmse},       {"rmse_log", m.rmse_log}, {"si_log", m.si_log},
          {"delta_1", m.delta1},  {"delta_2", m.delta2},    {"delta_3", m.delta3}};
}

std::string metrics_to_table(const MetricRecord& m) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  auto row = [&](const std::string& k, double v) { os << std::left << std::setw(20) << k << std::right << std::setw(12) << v << '\n'; };
  for (const auto& [c, v] : m.avg_abs_error) row("avg_abs_error@" + std::to_string(c) + "m", v);
  row("abs_rel", m.abs_rel);
  row("sq_rel", m.sq_rel);
  row("rmse", m.rmse);
  row("rmse_log", m.rmse_log);
  row("si_log", m.si_log);
  row("delta_1", m.delta1);
  row("delta_2", m.delta2);
  row("delta_3", m.delta3);
  os << std::left << std::setw(20) << "pixels" << std::right << std::setw(12) << m.pixels << '\n';
  return os.str();
}

}  // namespace fusedepth
