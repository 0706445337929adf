#include "spvnas/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "spvnas/errors.hpp"

namespace spvnas::nn {

namespace {

std::string dims(std::size_t a, std::size_t b) {
  return std::to_string(a) + "x" + std::to_string(b);
}

}  // namespace

LinearLayer::LinearLayer(std::size_t in, std::size_t out, bool with_bias)
    : in_channels(in),
      out_channels(out),
      has_bias(with_bias),
      weight(in * out, 0.0f),
      bias(with_bias ? out : 0, 0.0f),
      grad_weight(in * out, 0.0f),
      grad_bias(with_bias ? out : 0, 0.0f) {}

void LinearLayer::init(Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(std::max<std::size_t>(in_channels, 1)));
  for (auto& w : weight) w = static_cast<float>(rng.uniform(-bound, bound));
  std::fill(bias.begin(), bias.end(), 0.0f);
}

void LinearLayer::zero_grad() {
  std::fill(grad_weight.begin(), grad_weight.end(), 0.0f);
  std::fill(grad_bias.begin(), grad_bias.end(), 0.0f);
}

FeatureMatrix linear_forward(const LinearLayer& layer, const FeatureMatrix& x,
                             std::uint64_t* macs) {
  if (x.cols != layer.in_channels) {
    throw ShapeError("linear: input has " + std::to_string(x.cols) +
                     " channels but layer expects " + std::to_string(layer.in_channels));
  }
  return linear_forward(layer, x, layer.out_channels, macs);
}

FeatureMatrix linear_forward(const LinearLayer& layer, const FeatureMatrix& x,
                             std::size_t out_active, std::uint64_t* macs) {
  if (x.cols > layer.in_channels || out_active > layer.out_channels) {
    throw ShapeError("linear: active block " + dims(out_active, x.cols) +
                     " exceeds allocated " + dims(layer.out_channels, layer.in_channels));
  }
  const std::size_t in = x.cols;
  const std::size_t ld = layer.in_channels;
  FeatureMatrix out(x.rows, out_active);
  for (std::size_t r = 0; r < x.rows; ++r) {
    const float* xr = x.row(r);
    float* yr = out.row(r);
    for (std::size_t o = 0; o < out_active; ++o) {
      const float* w = layer.weight.data() + o * ld;
      float acc = layer.has_bias ? layer.bias[o] : 0.0f;
      for (std::size_t i = 0; i < in; ++i) acc += w[i] * xr[i];
      yr[o] = acc;
    }
  }
  if (macs) *macs += static_cast<std::uint64_t>(x.rows) * in * out_active;
  return out;
}

FeatureMatrix linear_backward(LinearLayer& layer, const FeatureMatrix& x,
                              const FeatureMatrix& grad_out) {
  if (x.rows != grad_out.rows || x.cols > layer.in_channels ||
      grad_out.cols > layer.out_channels) {
    throw ShapeError("linear backward: x " + dims(x.rows, x.cols) + ", grad " +
                     dims(grad_out.rows, grad_out.cols) + ", layer " +
                     dims(layer.out_channels, layer.in_channels));
  }
  const std::size_t in = x.cols;
  const std::size_t out = grad_out.cols;
  const std::size_t ld = layer.in_channels;
  FeatureMatrix grad_in(x.rows, in);
  for (std::size_t r = 0; r < x.rows; ++r) {
    const float* xr = x.row(r);
    const float* gr = grad_out.row(r);
    float* gi = grad_in.row(r);
    for (std::size_t o = 0; o < out; ++o) {
      const float g = gr[o];
      const float* w = layer.weight.data() + o * ld;
      float* gw = layer.grad_weight.data() + o * ld;
      for (std::size_t i = 0; i < in; ++i) {
        gi[i] += w[i] * g;
        gw[i] += g * xr[i];
      }
      if (layer.has_bias) layer.grad_bias[o] += g;
    }
  }
  return grad_in;
}

BatchNormLayer::BatchNormLayer(std::size_t c)
    : channels(c),
      gamma(c, 1.0f),
      beta(c, 0.0f),
      running_mean(c, 0.0f),
      running_var(c, 1.0f),
      grad_gamma(c, 0.0f),
      grad_beta(c, 0.0f) {}

void BatchNormLayer::zero_grad() {
  std::fill(grad_gamma.begin(), grad_gamma.end(), 0.0f);
  std::fill(grad_beta.begin(), grad_beta.end(), 0.0f);
}

void BatchNormLayer::reset_running_stats() {
  std::fill(running_mean.begin(), running_mean.end(), 0.0f);
  std::fill(running_var.begin(), running_var.end(), 1.0f);
  batches_seen = 0;
}

namespace {

struct BatchStats {
  std::vector<double> mean;
  std::vector<double> var;  // biased
};

BatchStats batch_stats(const FeatureMatrix& x) {
  const std::size_t c = x.cols;
  BatchStats s{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
  for (std::size_t r = 0; r < x.rows; ++r) {
    const float* xr = x.row(r);
    for (std::size_t j = 0; j < c; ++j) s.mean[j] += xr[j];
  }
  for (auto& m : s.mean) m /= static_cast<double>(x.rows);
  for (std::size_t r = 0; r < x.rows; ++r) {
    const float* xr = x.row(r);
    for (std::size_t j = 0; j < c; ++j) {
      const double d = xr[j] - s.mean[j];
      s.var[j] += d * d;
    }
  }
  for (auto& v : s.var) v /= static_cast<double>(x.rows);
  return s;
}

}  // namespace

FeatureMatrix batchnorm_forward(BatchNormLayer& layer, const FeatureMatrix& x) {
  if (x.cols > layer.channels) {
    throw ShapeError("batchnorm: input has " + std::to_string(x.cols) +
                     " channels but layer has " + std::to_string(layer.channels));
  }
  const std::size_t c = x.cols;
  FeatureMatrix out(x.rows, c);
  std::vector<float> scale(c), shift(c);
  if (layer.mode == BnMode::kTraining) {
    if (x.rows < 2) {
      throw ShapeError("batchnorm: degenerate batch of " + std::to_string(x.rows) +
                       " row(s) in training mode");
    }
    const BatchStats s = batch_stats(x);
    const double n = static_cast<double>(x.rows);
    for (std::size_t j = 0; j < c; ++j) {
      const double invstd = 1.0 / std::sqrt(s.var[j] + layer.epsilon);
      scale[j] = static_cast<float>(layer.gamma[j] * invstd);
      shift[j] = static_cast<float>(layer.beta[j] - layer.gamma[j] * invstd * s.mean[j]);
      const double unbiased = s.var[j] * n / (n - 1.0);
      if (layer.cumulative) {
        const double k = static_cast<double>(layer.batches_seen) + 1.0;
        layer.running_mean[j] += static_cast<float>((s.mean[j] - layer.running_mean[j]) / k);
        layer.running_var[j] += static_cast<float>((unbiased - layer.running_var[j]) / k);
      } else {
        const float mu = layer.momentum;
        layer.running_mean[j] = (1.0f - mu) * layer.running_mean[j] + mu * float(s.mean[j]);
        layer.running_var[j] = (1.0f - mu) * layer.running_var[j] + mu * float(unbiased);
      }
    }
    if (layer.cumulative) ++layer.batches_seen;
  } else {
    for (std::size_t j = 0; j < c; ++j) {
      const double invstd = 1.0 / std::sqrt(double(layer.running_var[j]) + layer.epsilon);
      scale[j] = static_cast<float>(layer.gamma[j] * invstd);
      shift[j] = static_cast<float>(layer.beta[j] - layer.gamma[j] * invstd * layer.running_mean[j]);
    }
  }
  for (std::size_t r = 0; r < x.rows; ++r) {
    const float* xr = x.row(r);
    float* yr = out.row(r);
    for (std::size_t j = 0; j < c; ++j) yr[j] = xr[j] * scale[j] + shift[j];
  }
  return out;
}

FeatureMatrix batchnorm_backward(BatchNormLayer& layer, const FeatureMatrix& x,
                                 const FeatureMatrix& grad_out) {
  if (layer.mode != BnMode::kTraining) {
    throw std::logic_error("batchnorm backward is only supported in training mode");
  }
  if (x.rows != grad_out.rows || x.cols != grad_out.cols || x.cols > layer.channels) {
    throw ShapeError("batchnorm backward: shape mismatch");
  }
  if (x.rows < 2) throw ShapeError("batchnorm backward: degenerate batch");
  const std::size_t c = x.cols;
  const double n = static_cast<double>(x.rows);
  const BatchStats s = batch_stats(x);
  std::vector<double> invstd(c), sum_g(c, 0.0), sum_gx(c, 0.0);
  for (std::size_t j = 0; j < c; ++j) invstd[j] = 1.0 / std::sqrt(s.var[j] + layer.epsilon);
  for (std::size_t r = 0; r < x.rows; ++r) {
    const float* xr = x.row(r);
    const float* gr = grad_out.row(r);
    for (std::size_t j = 0; j < c; ++j) {
      const double xhat = (xr[j] - s.mean[j]) * invstd[j];
      sum_g[j] += gr[j];
      sum_gx[j] += gr[j] * xhat;
    }
  }
  for (std::size_t j = 0; j < c; ++j) {
    layer.grad_beta[j] += static_cast<float>(sum_g[j]);
    layer.grad_gamma[j] += static_cast<float>(sum_gx[j]);
  }
  FeatureMatrix grad_in(x.rows, c);
  for (std::size_t r = 0; r < x.rows; ++r) {
    const float* xr = x.row(r);
    const float* gr = grad_out.row(r);
    float* gi = grad_in.row(r);
    for (std::size_t j = 0; j < c; ++j) {
      const double xhat = (xr[j] - s.mean[j]) * invstd[j];
      const double k = layer.gamma[j] * invstd[j] / n;
      gi[j] = static_cast<float>(k * (n * gr[j] - sum_g[j] - xhat * sum_gx[j]));
    }
  }
  return grad_in;
}

FeatureMatrix relu_forward(const FeatureMatrix& x) {
  FeatureMatrix out = x;
  relu_inplace(out);
  return out;
}

void relu_inplace(FeatureMatrix& x) {
  for (auto& v : x.data) v = v > 0.0f ? v : 0.0f;
}

FeatureMatrix relu_backward(const FeatureMatrix& x, const FeatureMatrix& grad_out) {
  if (x.rows != grad_out.rows || x.cols != grad_out.cols) {
    throw ShapeError("relu backward: shape mismatch");
  }
  FeatureMatrix g(x.rows, x.cols);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    g.data[i] = x.data[i] > 0.0f ? grad_out.data[i] : 0.0f;
  }
  return g;
}

CrossEntropyResult cross_entropy(const FeatureMatrix& logits, std::span<const std::int32_t> labels,
                                 std::optional<std::int32_t> ignore_index) {
  if (labels.size() != logits.rows) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(logits.rows) + " rows");
  }
  CrossEntropyResult res;
  res.grad_logits = FeatureMatrix(logits.rows, logits.cols);
  for (std::size_t r = 0; r < logits.rows; ++r) {
    const std::int32_t y = labels[r];
    if (ignore_index && y == *ignore_index) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols) {
      throw ShapeError("cross_entropy: label " + std::to_string(y) + " out of range for " +
                       std::to_string(logits.cols) + " classes");
    }
    ++res.counted_rows;
  }
  if (res.counted_rows == 0) throw NumericError("cross_entropy: every row is ignored");

  const double inv_count = 1.0 / static_cast<double>(res.counted_rows);
  std::vector<double> p(logits.cols);
  for (std::size_t r = 0; r < logits.rows; ++r) {
    const std::int32_t y = labels[r];
    if (ignore_index && y == *ignore_index) continue;
    const float* z = logits.row(r);
    double zmax = z[0];
    for (std::size_t j = 1; j < logits.cols; ++j) zmax = std::max(zmax, double(z[j]));
    double sum = 0.0;
    for (std::size_t j = 0; j < logits.cols; ++j) {
      p[j] = std::exp(double(z[j]) - zmax);
      sum += p[j];
    }
    const double lse = zmax + std::log(sum);
    res.loss += (lse - z[y]) * inv_count;
    float* g = res.grad_logits.row(r);
    for (std::size_t j = 0; j < logits.cols; ++j) {
      const double onehot = static_cast<std::size_t>(y) == j ? 1.0 : 0.0;
      g[j] = static_cast<float>((p[j] / sum - onehot) * inv_count);
    }
  }
  return res;
}

void sgd_step(SgdState& state, std::span<const ParamRef> params) {
  for (const auto& p : params) {
    for (std::size_t i = 0; i < p.grad.size(); ++i) {
      if (!std::isfinite(p.grad[i])) {
        throw NumericError("sgd: non-finite gradient in '" + p.name + "' at element " +
                           std::to_string(i));
      }
    }
  }
  if (state.velocity.empty()) {
    state.velocity.resize(params.size());
    for (std::size_t k = 0; k < params.size(); ++k) {
      state.velocity[k].assign(params[k].value.size(), 0.0f);
    }
  }
  if (state.velocity.size() != params.size()) {
    throw ShapeError("sgd: velocity buffers do not match parameter list");
  }
  const float mu = static_cast<float>(state.momentum_coefficient);
  const float lr = static_cast<float>(state.learning_rate);
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& p = params[k];
    auto& v = state.velocity[k];
    if (v.size() != p.value.size() || p.grad.size() != p.value.size()) {
      throw ShapeError("sgd: shape mismatch for '" + p.name + "'");
    }
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = mu * v[i] + p.grad[i];
      p.value[i] -= lr * v[i];
    }
  }
}

void collect(LinearLayer& layer, const std::string& prefix, TensorList& out) {
  out.push_back({prefix + ".weight", {layer.out_channels, layer.in_channels}, layer.weight.data(),
                 layer.grad_weight.data()});
  if (layer.has_bias) {
    out.push_back({prefix + ".bias", {layer.out_channels}, layer.bias.data(), layer.grad_bias.data()});
  }
}

void collect(BatchNormLayer& layer, const std::string& prefix, TensorList& out) {
  out.push_back({prefix + ".gamma", {layer.channels}, layer.gamma.data(), layer.grad_gamma.data()});
  out.push_back({prefix + ".beta", {layer.channels}, layer.beta.data(), layer.grad_beta.data()});
  out.push_back({prefix + ".running_mean", {layer.channels}, layer.running_mean.data(), nullptr});
  out.push_back({prefix + ".running_var", {layer.channels}, layer.running_var.data(), nullptr});
}

double cosine_lr(double base_lr, std::size_t step, std::size_t total_steps) {
  if (total_steps == 0) return base_lr;
  const double frac = static_cast<double>(std::min(step, total_steps)) /
                      static_cast<double>(total_steps);
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace spvnas::nn
