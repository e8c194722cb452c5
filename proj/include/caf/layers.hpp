#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "caf/tensor.hpp"

namespace caf {

class Rng;

enum class Activation { swish, relu };
enum class Mode { train, eval };

std::string to_string(Activation a);
Activation parse_activation(const std::string& s);

/// A trainable tensor and its accumulated gradient.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  Param() = default;
  Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros(value.shape())) {}

  void zero_grad() { grad.fill(0.0); }
};

double sigmoid(double x) noexcept;

// Elementwise x * sigmoid(x) (beta fixed at 1).
Tensor swish(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor activate(Activation a, const Tensor& x);
/// Gradient w.r.t. the activation input, given that input and the upstream gradient.
Tensor activate_backward(Activation a, const Tensor& input, const Tensor& upstream);

/// [B,ch,L] -> [B,ch], mean over L.
Tensor adaptive_avg_pool(const Tensor& x);
/// Spreads a [B,ch] gradient evenly over the L positions of a [B,ch,L] input.
Tensor adaptive_avg_pool_backward(const Tensor& upstream, std::size_t length);

/// y = x W^T + b, applied per row of a [B,in] batch.
class LinearLayer {
 public:
  struct Cache {
    Tensor input;
  };

  LinearLayer() = default;
  LinearLayer(const std::string& name, std::size_t in, std::size_t out, Rng& rng);

  std::size_t in_features() const { return weight.value.extent(1); }
  std::size_t out_features() const { return weight.value.extent(0); }

  Tensor forward(const Tensor& x, Cache* cache = nullptr) const;
  Tensor backward(const Cache& cache, const Tensor& upstream);

  std::vector<Param*> params() { return {&weight, &bias}; }
  std::vector<const Param*> params() const { return {&weight, &bias}; }

  Param weight;  // [out, in]
  Param bias;    // [out]
};

/// Stride-1 cross-correlation over [B,ch,L] with symmetric zero padding.
class Conv1dLayer {
 public:
  struct Cache {
    Tensor input;
  };

  Conv1dLayer() = default;
  Conv1dLayer(const std::string& name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
              std::size_t padding, Rng& rng);

  std::size_t in_channels() const { return weight.value.extent(1); }
  std::size_t out_channels() const { return weight.value.extent(0); }
  std::size_t kernel() const { return weight.value.extent(2); }
  std::size_t padding() const { return padding_; }
  std::size_t output_length(std::size_t length) const;

  Tensor forward(const Tensor& x, Cache* cache = nullptr) const;
  Tensor backward(const Cache& cache, const Tensor& upstream);

  std::vector<Param*> params() { return {&weight, &bias}; }
  std::vector<const Param*> params() const { return {&weight, &bias}; }

  Param weight;  // [out_ch, in_ch, kernel]
  Param bias;    // [out_ch]

 private:
  std::size_t padding_ = 0;
};

/// Per-channel normalization over the batch and length axes of [B,ch,L].
///
/// Training normalizes with the biased batch variance and feeds the unbiased
/// variance into the running estimate. Running statistics only move when the
/// caller applies update_running(); forward itself is const.
class BatchNorm1dLayer {
 public:
  static constexpr double kEpsilon = 1e-5;
  static constexpr double kMomentum = 0.1;

  struct Cache {
    Mode mode = Mode::eval;
    Tensor normalized;             // pre-affine values, [B,ch,L]
    std::vector<double> mean;      // batch mean (train) per channel
    std::vector<double> variance;  // biased batch variance (train) per channel
    std::vector<double> inv_std;   // per channel, from batch or running stats
    std::size_t count = 0;         // B * L
  };

  BatchNorm1dLayer() = default;
  BatchNorm1dLayer(const std::string& name, std::size_t channels);

  std::size_t channels() const { return gamma.value.size(); }

  Tensor forward(const Tensor& x, Mode mode, Cache* cache = nullptr) const;
  Tensor backward(const Cache& cache, const Tensor& upstream);
  /// Exponential moving average step from a train-mode cache.
  void update_running(const Cache& cache);

  std::vector<Param*> params() { return {&gamma, &beta}; }
  std::vector<const Param*> params() const { return {&gamma, &beta}; }

  Param gamma;
  Param beta;
  Tensor running_mean;
  Tensor running_var;
};

}  // namespace caf
