#pragma once

#include "fusedepth/ops.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <string>
#include <vector>

namespace fusedepth {

enum class DepthSpace { meters, log01 };

using BoolPlane = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense depth map with a validity mask. Invalid pixels never contribute to
/// a loss or metric.
struct DepthRaster {
  ArrayRM<double> data;
  BoolPlane valid;
  DepthSpace space = DepthSpace::meters;
  double alpha = 3.7;
  double d_max = 80.0;
  /// Pixels that fell outside [0,1] during log normalisation and were clamped.
  BoolPlane clamped;

  int height() const { return int(data.rows()); }
  int width() const { return int(data.cols()); }

  static DepthRaster meters(ArrayRM<double> depth, double alpha = 3.7, double d_max = 80.0);
};

/// Malformed depth data (non-positive metric depth on a valid pixel, ...).
class DepthDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Smallest depth that maps to 0: d_max * exp(-alpha).
inline double depth_floor(double alpha, double d_max) { return d_max * std::exp(-alpha); }

/// v = log(d / d_max) / alpha + 1 (natural log), clamped to [0,1].
DepthRaster log_normalize(const DepthRaster& depth_m, double alpha, double d_max);
/// d = d_max * exp(alpha * (v - 1)).
DepthRaster log_denormalize(const DepthRaster& depth_log);

double log_normalize_value(double depth_m, double alpha, double d_max);
double log_denormalize_value(double v, double alpha, double d_max);

/// 1 x H x W tensor with 1 on valid pixels.
template <typename Scalar>
Tensor<Scalar> validity_tensor(const BoolPlane& valid) {
  Tensor<Scalar> t({1, int(valid.rows()), int(valid.cols())});
  t.values() = Eigen::Map<const Eigen::Array<bool, 1, Eigen::Dynamic>>(valid.data(), valid.size()).template cast<Scalar>();
  return t;
}

template <typename Scalar>
Tensor<Scalar> raster_tensor(const DepthRaster& r) {
  Tensor<Scalar> t({1, r.height(), r.width()});
  t.values() = Eigen::Map<const Eigen::Array<double, 1, Eigen::Dynamic>>(r.data.data(), r.data.size()).template cast<Scalar>();
  return t;
}

/// Counts losses evaluated over an empty validity mask.
struct LossDiagnostics {
  int empty_masks = 0;
};

// ---------------------------------------------------------------------------
// Training losses on log-depth residuals.

/// Mean squared residual over valid pixels; 0 when none are valid.
template <typename Scalar>
Var<Scalar> mse_loss(const Var<Scalar>& residual, const Tensor<Scalar>& valid, LossDiagnostics* diag = nullptr) {
  if (diag && (valid.values() != Scalar(0)).count() == 0) ++diag->empty_masks;
  return masked_mean(square(residual), valid);
}

/// All-valid 2x2 pooling of a validity plane.
template <typename Scalar>
Tensor<Scalar> pool_validity(const Tensor<Scalar>& valid) {
  Tensor<Scalar> out({1, valid.height() / 2, valid.width() / 2});
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x)
      out(0, y, x) = (valid(0, 2 * y, 2 * x) != 0 && valid(0, 2 * y, 2 * x + 1) != 0 &&
                      valid(0, 2 * y + 1, 2 * x) != 0 && valid(0, 2 * y + 1, 2 * x + 1) != 0)
                         ? Scalar(1)
                         : Scalar(0);
  return out;
}

/// Sum over `scales` factor-2 levels of the mean |Sobel_x R| + |Sobel_y R|
/// over valid pixels of that level. Invalid residuals are zeroed first.
template <typename Scalar>
Var<Scalar> grad_matching_loss(const Var<Scalar>& residual, const Tensor<Scalar>& valid, int scales = 4,
                               LossDiagnostics* diag = nullptr) {
  Var<Scalar> r = residual * Var<Scalar>::constant(valid);
  Tensor<Scalar> v = valid;
  Var<Scalar> total;
  for (int s = 0; s < scales; ++s) {
    if (s > 0) {
      if (r.shape().height < 2 || r.shape().width < 2) break;
      r = avg_pool2(r);
      v = pool_validity(v);
    }
    if (diag && (v.values() != Scalar(0)).count() == 0) ++diag->empty_masks;
    const Var<Scalar> term = masked_mean(abs(sobel(r, Axis::x)) + abs(sobel(r, Axis::y)), v);
    total = total.defined() ? total + term : term;
  }
  return total;
}

template <typename Scalar>
struct LossTarget {
  Tensor<Scalar> depth;  // 1 x H x W log-depth
  Tensor<Scalar> valid;  // 1 x H x W
};

template <typename Scalar>
struct LossBreakdown {
  Var<Scalar> total;
  double mse = 0.0;   // summed over the sequence
  double grad = 0.0;  // summed over the sequence, before lambda
};

/// Sum over the sequence of mse + lambda * grad.
template <typename Scalar>
LossBreakdown<Scalar> total_loss(const std::vector<Var<Scalar>>& predictions,
                                 const std::vector<LossTarget<Scalar>>& targets, Scalar lambda = Scalar(0.25),
                                 int scales = 4, LossDiagnostics* diag = nullptr) {
  if (predictions.size() != targets.size()) throw ShapeError("total_loss: prediction/target count mismatch");
  if (predictions.empty()) throw ShapeError("total_loss: empty sequence");
  LossBreakdown<Scalar> out;
  for (std::size_t k = 0; k < predictions.size(); ++k) {
    const Var<Scalar> residual = predictions[k] - Var<Scalar>::constant(targets[k].depth);
    const Var<Scalar> mse = mse_loss(residual, targets[k].valid, diag);
    const Var<Scalar> grad = grad_matching_loss(residual, targets[k].valid, scales, diag);
    out.mse += double(mse.item());
    out.grad += double(grad.item());
    const Var<Scalar> step = mse + scale(grad, lambda);
    out.total = out.total.defined() ? out.total + step : step;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation metrics (metric depth).

enum class CutoffBasis { ground_truth, prediction };

struct MetricRecord {
  std::map<int, double> avg_abs_error;  // keyed by cutoff in metres
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rmse = 0.0;
  double rmse_log = 0.0;
  double si_log = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
  std::size_t pixels = 0;
};

/// Streaming accumulation so metrics can pool pixels across many frames.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(std::vector<int> cutoffs = {10, 20, 30},
                             CutoffBasis basis = CutoffBasis::ground_truth);

  /// Both rasters in metres. Ground-truth pixels below `min_depth` are
  /// treated as invalid.
  void add(const DepthRaster& pred_m, const DepthRaster& gt_m, double min_depth = 0.0);
  MetricRecord finish() const;

 private:
  std::vector<int> cutoffs_;
  CutoffBasis basis_;
  std::vector<double> cutoff_abs_sum_;
  std::vector<std::size_t> cutoff_count_;
  double abs_rel_ = 0, sq_rel_ = 0, sq_err_ = 0, sq_log_ = 0, log_sum_ = 0;
  std::size_t d1_ = 0, d2_ = 0, d3_ = 0, n_ = 0;
};

MetricRecord depth_metrics(const DepthRaster& pred_m, const DepthRaster& gt_m,
                           const std::vector<int>& cutoffs = {10, 20, 30},
                           CutoffBasis basis = CutoffBasis::ground_truth);

/// JSON with the nine fixed metric keys.
nlohmann::json metrics_to_json(const MetricRecord& m);
/// Aligned two-column text table.
std::string metrics_to_table(const MetricRecord& m);

}  // namespace fusedepth
