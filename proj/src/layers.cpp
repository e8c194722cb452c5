#include "caf/layers.hpp"

#include <cmath>

#include "caf/error.hpp"
#include "caf/rng.hpp"

namespace caf {

std::string to_string(Activation a) { return a == Activation::swish ? "swish" : "relu"; }

Activation parse_activation(const std::string& s) {
  if (s == "swish") return Activation::swish;
  if (s == "relu") return Activation::relu;
  throw UsageError("unknown activation '" + s + "' (expected swish or relu)");
}

namespace {

void require_shape(const Tensor& t, const Shape& expected, const char* where) {
  if (t.shape() != expected) {
    throw UsageError(std::string(where) + ": expected shape " + shape_string(expected) + ", got " +
                     shape_string(t.shape()));
  }
}

Tensor scaled_init(Rng& rng, const Shape& shape, std::size_t fan_in) {
  Tensor w = randn(rng, shape);
  const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : w.values()) v *= s;
  return w;
}

}  // namespace

double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor swish(const Tensor& x) {
  Tensor out = x;
  for (auto& v : out.values()) v = v * sigmoid(v);
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor activate(Activation a, const Tensor& x) { return a == Activation::swish ? swish(x) : relu(x); }

Tensor activate_backward(Activation a, const Tensor& input, const Tensor& upstream) {
  require_shape(upstream, input.shape(), "activate_backward");
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    const double x = input[i];
    double d;
    if (a == Activation::swish) {
      const double s = sigmoid(x);
      d = s * (1.0 + x * (1.0 - s));
    } else {
      d = x > 0.0 ? 1.0 : 0.0;
    }
    out[i] = d * upstream[i];
  }
  return out;
}

Tensor adaptive_avg_pool(const Tensor& x) {
  if (x.rank() != 3) throw UsageError("adaptive_avg_pool: expected [B,ch,L], got " + shape_string(x.shape()));
  return reduce_mean(x, 2);
}

Tensor adaptive_avg_pool_backward(const Tensor& upstream, std::size_t length) {
  if (upstream.rank() != 2 || length == 0) {
    throw UsageError("adaptive_avg_pool_backward: bad upstream " + shape_string(upstream.shape()));
  }
  const std::size_t rows = upstream.extent(0) * upstream.extent(1);
  Tensor out({upstream.extent(0), upstream.extent(1), length});
  const double inv = 1.0 / static_cast<double>(length);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t l = 0; l < length; ++l) out[r * length + l] = upstream[r] * inv;
  return out;
}

// ---------------------------------------------------------------------------
// Linear

LinearLayer::LinearLayer(const std::string& name, std::size_t in, std::size_t out, Rng& rng)
    : weight(name + ".weight", scaled_init(rng, {out, in}, in)),
      bias(name + ".bias", Tensor::zeros({out})) {}

Tensor LinearLayer::forward(const Tensor& x, Cache* cache) const {
  const std::size_t in = in_features(), out = out_features();
  if (x.rank() != 2 || x.extent(1) != in) {
    throw UsageError("linear " + weight.name + ": input " + shape_string(x.shape()) +
                     " incompatible with weight " + shape_string(weight.value.shape()));
  }
  const std::size_t batch = x.extent(0);
  Tensor y({batch, out});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < out; ++o) {
      double acc = bias.value[o];
      for (std::size_t i = 0; i < in; ++i) acc += x[b * in + i] * weight.value[o * in + i];
      y[b * out + o] = acc;
    }
  }
  require_finite(y, weight.name);
  if (cache) cache->input = x;
  return y;
}

Tensor LinearLayer::backward(const Cache& cache, const Tensor& upstream) {
  const std::size_t in = in_features(), out = out_features();
  const Tensor& x = cache.input;
  if (x.rank() != 2 || x.extent(1) != in) throw UsageError("linear backward: stale cache for " + weight.name);
  const std::size_t batch = x.extent(0);
  require_shape(upstream, {batch, out}, "linear backward");

  // Sum this call's contribution first so repeated calls accumulate whole terms.
  Tensor dx({batch, in});
  Tensor dw({out, in});
  Tensor db({out});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < out; ++o) {
      const double g = upstream[b * out + o];
      db[o] += g;
      for (std::size_t i = 0; i < in; ++i) {
        dw[o * in + i] += g * x[b * in + i];
        dx[b * in + i] += g * weight.value[o * in + i];
      }
    }
  }
  for (std::size_t i = 0; i < dw.size(); ++i) weight.grad[i] += dw[i];
  for (std::size_t o = 0; o < out; ++o) bias.grad[o] += db[o];
  return dx;
}

// ---------------------------------------------------------------------------
// Conv1d

Conv1dLayer::Conv1dLayer(const std::string& name, std::size_t in_ch, std::size_t out_ch,
                         std::size_t kernel, std::size_t padding, Rng& rng)
    : weight(name + ".weight", scaled_init(rng, {out_ch, in_ch, kernel}, in_ch * kernel)),
      bias(name + ".bias", Tensor::zeros({out_ch})),
      padding_(padding) {}

std::size_t Conv1dLayer::output_length(std::size_t length) const {
  const std::size_t padded = length + 2 * padding_;
  if (kernel() > padded) {
    throw UsageError("conv1d " + weight.name + ": kernel " + std::to_string(kernel()) +
                     " larger than padded length " + std::to_string(padded));
  }
  return padded - kernel() + 1;
}

Tensor Conv1dLayer::forward(const Tensor& x, Cache* cache) const {
  const std::size_t cin = in_channels(), cout = out_channels(), k = kernel();
  if (x.rank() != 3 || x.extent(1) != cin) {
    throw UsageError("conv1d " + weight.name + ": input " + shape_string(x.shape()) +
                     " incompatible with weight " + shape_string(weight.value.shape()));
  }
  const std::size_t batch = x.extent(0), len = x.extent(2);
  const std::size_t out_len = output_length(len);
  Tensor y({batch, cout, out_len});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < cout; ++o) {
      for (std::size_t t = 0; t < out_len; ++t) {
        double acc = bias.value[o];
        for (std::size_t c = 0; c < cin; ++c) {
          for (std::size_t j = 0; j < k; ++j) {
            // position in the unpadded input
            const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(padding_);
            if (p < 0 || p >= static_cast<std::ptrdiff_t>(len)) continue;
            acc += weight.value[(o * cin + c) * k + j] * x[(b * cin + c) * len + static_cast<std::size_t>(p)];
          }
        }
        y[(b * cout + o) * out_len + t] = acc;
      }
    }
  }
  require_finite(y, weight.name);
  if (cache) cache->input = x;
  return y;
}

Tensor Conv1dLayer::backward(const Cache& cache, const Tensor& upstream) {
  const std::size_t cin = in_channels(), cout = out_channels(), k = kernel();
  const Tensor& x = cache.input;
  if (x.rank() != 3 || x.extent(1) != cin) throw UsageError("conv1d backward: stale cache for " + weight.name);
  const std::size_t batch = x.extent(0), len = x.extent(2);
  const std::size_t out_len = output_length(len);
  require_shape(upstream, {batch, cout, out_len}, "conv1d backward");

  Tensor dx(x.shape());
  Tensor dw(weight.value.shape());
  Tensor db({cout});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < cout; ++o) {
      for (std::size_t t = 0; t < out_len; ++t) {
        const double g = upstream[(b * cout + o) * out_len + t];
        db[o] += g;
        for (std::size_t c = 0; c < cin; ++c) {
          for (std::size_t j = 0; j < k; ++j) {
            const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(padding_);
            if (p < 0 || p >= static_cast<std::ptrdiff_t>(len)) continue;
            const std::size_t xi = (b * cin + c) * len + static_cast<std::size_t>(p);
            const std::size_t wi = (o * cin + c) * k + j;
            dw[wi] += g * x[xi];
            dx[xi] += g * weight.value[wi];
          }
        }
      }
    }
  }
  for (std::size_t i = 0; i < dw.size(); ++i) weight.grad[i] += dw[i];
  for (std::size_t o = 0; o < cout; ++o) bias.grad[o] += db[o];
  return dx;
}

// ---------------------------------------------------------------------------
// BatchNorm1d

BatchNorm1dLayer::BatchNorm1dLayer(const std::string& name, std::size_t channels)
    : gamma(name + ".gamma", Tensor({channels}, 1.0)),
      beta(name + ".beta", Tensor::zeros({channels})),
      running_mean(Tensor::zeros({channels})),
      running_var(Tensor({channels}, 1.0)) {}

Tensor BatchNorm1dLayer::forward(const Tensor& x, Mode mode, Cache* cache) const {
  const std::size_t ch = channels();
  if (x.rank() != 3 || x.extent(1) != ch) {
    throw UsageError("batchnorm " + gamma.name + ": input " + shape_string(x.shape()) + " expects " +
                     std::to_string(ch) + " channels");
  }
  const std::size_t batch = x.extent(0), len = x.extent(2);
  const std::size_t count = batch * len;
  if (mode == Mode::train && count < 2) {
    throw UsageError("batchnorm " + gamma.name + ": train mode needs batch*length >= 2, got " +
                     std::to_string(count));
  }

  Cache local;
  Cache& c = cache ? *cache : local;
  c.mode = mode;
  c.count = count;
  c.mean.assign(ch, 0.0);
  c.variance.assign(ch, 0.0);
  c.inv_std.assign(ch, 0.0);

  for (std::size_t k = 0; k < ch; ++k) {
    double mean, var;
    if (mode == Mode::train) {
      double sum = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t l = 0; l < len; ++l) sum += x[(b * ch + k) * len + l];
      mean = sum / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t l = 0; l < len; ++l) {
          const double d = x[(b * ch + k) * len + l] - mean;
          sq += d * d;
        }
      var = sq / static_cast<double>(count);
    } else {
      mean = running_mean[k];
      var = running_var[k];
    }
    c.mean[k] = mean;
    c.variance[k] = var;
    c.inv_std[k] = 1.0 / std::sqrt(var + kEpsilon);
  }

  c.normalized = Tensor(x.shape());
  Tensor y(x.shape());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t k = 0; k < ch; ++k)
      for (std::size_t l = 0; l < len; ++l) {
        const std::size_t i = (b * ch + k) * len + l;
        const double n = (x[i] - c.mean[k]) * c.inv_std[k];
        c.normalized[i] = n;
        y[i] = gamma.value[k] * n + beta.value[k];
      }
  require_finite(y, gamma.name);
  return y;
}

Tensor BatchNorm1dLayer::backward(const Cache& cache, const Tensor& upstream) {
  const std::size_t ch = channels();
  require_shape(upstream, cache.normalized.shape(), "batchnorm backward");
  if (cache.inv_std.size() != ch) throw UsageError("batchnorm backward: stale cache for " + gamma.name);
  const std::size_t batch = upstream.extent(0), len = upstream.extent(2);
  const double n = static_cast<double>(cache.count);

  Tensor dx(upstream.shape());
  for (std::size_t k = 0; k < ch; ++k) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t l = 0; l < len; ++l) {
        const std::size_t i = (b * ch + k) * len + l;
        sum_g += upstream[i];
        sum_gx += upstream[i] * cache.normalized[i];
      }
    beta.grad[k] += sum_g;
    gamma.grad[k] += sum_gx;

    const double g = gamma.value[k];
    const double is = cache.inv_std[k];
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t l = 0; l < len; ++l) {
        const std::size_t i = (b * ch + k) * len + l;
        if (cache.mode == Mode::train) {
          // The batch statistics depend on every input of the channel.
          dx[i] = g * is / n * (n * upstream[i] - sum_g - cache.normalized[i] * sum_gx);
        } else {
          dx[i] = g * is * upstream[i];
        }
      }
  }
  return dx;
}

void BatchNorm1dLayer::update_running(const Cache& cache) {
  if (cache.mode != Mode::train) return;
  const double n = static_cast<double>(cache.count);
  for (std::size_t k = 0; k < channels(); ++k) {
    const double unbiased = cache.variance[k] * n / (n - 1.0);
    running_mean[k] = (1.0 - kMomentum) * running_mean[k] + kMomentum * cache.mean[k];
    running_var[k] = (1.0 - kMomentum) * running_var[k] + kMomentum * unbiased;
  }
}

}  // namespace caf
