#pragma once

#include "fusedepth/ops.hpp"

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace fusedepth {

/// Seeded source of initial parameter values.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  template <typename Scalar>
  Tensor<Scalar> normal(Shape shape, double stddev) {
    Tensor<Scalar> t(shape);
    std::normal_distribution<double> dist(0.0, stddev);
    for (int i = 0; i < t.size(); ++i) t.data()[i] = Scalar(stddev > 0 ? dist(rng_) : 0.0);
    return t;
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

/// He initialisation scale for a layer with the given fan-in.
inline double he_std(int fan_in) { return std::sqrt(2.0 / double(fan_in)); }

/// Ordered collection of named learnable tensors. Dotted names double as
/// checkpoint keys; the first component selects the optimiser group.
template <typename Scalar>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Var<Scalar> var;
  };

  Var<Scalar> add(const std::string& name, Tensor<Scalar> init) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    index_[name] = entries_.size();
    entries_.push_back({name, Var<Scalar>::parameter(std::move(init))});
    return entries_.back().var;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }

  Var<Scalar> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return entries_[it->second].var;
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  void zero_grad() {
    for (auto& e : entries_) e.var.zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += std::size_t(e.var.value().size());
    return n;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Learnable convolution with "same"-style padding (kernel / 2).
template <typename Scalar>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterStore<Scalar>& store, const std::string& name, int in_channels, int out_channels, int kernel,
         int stride, double weight_std, Initializer& init)
      : geometry_{kernel, stride, kernel / 2} {
    weight_ = store.add(name + ".weight", init.normal<Scalar>({out_channels, in_channels, kernel * kernel}, weight_std));
    bias_ = store.add(name + ".bias", Tensor<Scalar>::zeros({out_channels, 1, 1}));
  }

  Var<Scalar> operator()(const Var<Scalar>& x) const { return conv2d(x, weight_, bias_, geometry_); }

  const Var<Scalar>& weight() const { return weight_; }
  const Var<Scalar>& bias() const { return bias_; }
  Var<Scalar>& weight() { return weight_; }
  Var<Scalar>& bias() { return bias_; }
  int in_channels() const { return weight_.shape().height; }
  int out_channels() const { return weight_.shape().channels; }
  const ConvGeometry& geometry() const { return geometry_; }

 private:
  ConvGeometry geometry_{};
  Var<Scalar> weight_;
  Var<Scalar> bias_;
};

/// Squeeze-and-excite channel gating: x * sigmoid(W2 elu(W1 gap(x))).
template <typename Scalar>
class ChannelAttention {
 public:
  ChannelAttention() = default;
  ChannelAttention(ParameterStore<Scalar>& store, const std::string& name, int channels, Initializer& init,
                   int reduction = 4) {
    const int hidden = std::max(2, channels / reduction);
    squeeze_ = Conv2d<Scalar>(store, name + ".squeeze", channels, hidden, 1, 1, he_std(channels), init);
    excite_ = Conv2d<Scalar>(store, name + ".excite", hidden, channels, 1, 1, 1.0 / std::sqrt(double(hidden)), init);
  }

  Var<Scalar> gates(const Var<Scalar>& x) const { return sigmoid(excite_(elu(squeeze_(global_avg_pool(x))))); }
  Var<Scalar> operator()(const Var<Scalar>& x) const { return x * gates(x); }

  Conv2d<Scalar>& squeeze() { return squeeze_; }
  Conv2d<Scalar>& excite() { return excite_; }
  const Conv2d<Scalar>& squeeze() const { return squeeze_; }
  const Conv2d<Scalar>& excite() const { return excite_; }

 private:
  Conv2d<Scalar> squeeze_;
  Conv2d<Scalar> excite_;
};

}  // namespace fusedepth
