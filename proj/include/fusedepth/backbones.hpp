#pragma once

#include "fusedepth/layers.hpp"

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

namespace fusedepth {

enum class Modality { event, frame };

/// Encoder outputs, finest level first. Level l has resolution H/2^l.
template <typename Scalar>
struct FeaturePyramid {
  std::vector<Var<Scalar>> levels;
  Modality modality = Modality::frame;

  const Var<Scalar>& deepest() const { return levels.back(); }
};

/// Raised for configuration mistakes that the caller must fix (shapes that
/// do not fit the network, invalid hyperparameters).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Small strided-convolution pyramid: each level halves the resolution with
/// a 3x3 stride-2 convolution followed by ELU.
template <typename Scalar>
class PyramidEncoder {
 public:
  PyramidEncoder() = default;
  PyramidEncoder(ParameterStore<Scalar>& store, const std::string& name, int in_channels,
                 const std::vector<int>& channels, Modality modality, Initializer& init)
      : modality_(modality), in_channels_(in_channels) {
    int c_in = in_channels;
    for (std::size_t l = 0; l < channels.size(); ++l) {
      levels_.emplace_back(store, name + ".level" + std::to_string(l + 1), c_in, channels[l], 3, 2,
                           he_std(c_in * 9), init);
      c_in = channels[l];
    }
  }

  FeaturePyramid<Scalar> encode(const Var<Scalar>& input) const {
    const Shape s = input.shape();
    const int factor = 1 << levels_.size();
    if (s.channels != in_channels_)
      throw ConfigError("encoder expects " + std::to_string(in_channels_) + " input channels, got " + to_string(s));
    if (s.height % factor != 0 || s.width % factor != 0)
      throw ConfigError("input " + std::to_string(s.height) + "x" + std::to_string(s.width) +
                        " is not divisible by " + std::to_string(factor) + "; pad or crop it first");
    FeaturePyramid<Scalar> out;
    out.modality = modality_;
    Var<Scalar> x = input;
    for (const auto& conv : levels_) {
      x = elu(conv(x));
      out.levels.push_back(x);
    }
    return out;
  }

  int depth() const { return int(levels_.size()); }
  std::vector<Conv2d<Scalar>>& levels() { return levels_; }

 private:
  std::vector<Conv2d<Scalar>> levels_;
  Modality modality_ = Modality::frame;
  int in_channels_ = 1;
};

// ---------------------------------------------------------------------------
// Checkpoints: named float32 arrays with C x H x W shape headers.

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path);

template <typename Scalar>
CheckpointEntry to_checkpoint_entry(const std::string& name, const Tensor<Scalar>& t) {
  CheckpointEntry e{name, t.shape(), std::vector<float>(std::size_t(t.size()))};
  for (int i = 0; i < t.size(); ++i) e.values[std::size_t(i)] = float(t.data()[i]);
  return e;
}

template <typename Scalar>
Tensor<Scalar> from_checkpoint_entry(const CheckpointEntry& e) {
  Tensor<Scalar> t(e.shape);
  for (int i = 0; i < t.size(); ++i) t.data()[i] = Scalar(e.values[std::size_t(i)]);
  return t;
}

template <typename Scalar>
std::vector<CheckpointEntry> snapshot_parameters(const ParameterStore<Scalar>& store) {
  std::vector<CheckpointEntry> out;
  for (const auto& p : store.entries()) out.push_back(to_checkpoint_entry(p.name, p.var.value()));
  return out;
}

/// Loads every parameter of `store` from `entries`; extra entries are
/// ignored, missing or mis-shaped ones are errors.
template <typename Scalar>
void restore_parameters(ParameterStore<Scalar>& store, const std::vector<CheckpointEntry>& entries) {
  for (auto& p : store.entries()) {
    auto it = std::find_if(entries.begin(), entries.end(), [&](const CheckpointEntry& e) { return e.name == p.name; });
    if (it == entries.end()) throw ConfigError("checkpoint lacks parameter " + p.name);
    if (it->shape != p.var.shape())
      throw ConfigError("checkpoint shape mismatch for " + p.name + ": " + to_string(it->shape) + " vs " +
                        to_string(p.var.shape()));
    p.var.mutable_value() = from_checkpoint_entry<Scalar>(*it);
  }
}

}  // namespace fusedepth
