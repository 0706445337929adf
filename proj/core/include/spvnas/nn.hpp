#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spvnas/feature_matrix.hpp"
#include "spvnas/rng.hpp"
#include "spvnas/tensor_slot.hpp"

namespace spvnas::nn {

// Dense layer y = W x + b applied row-wise. W is stored out x in, row-major.
//
// Every kernel in this namespace accepts inputs narrower than the allocated
// layer: the active input width is x.cols and the active output width is an
// explicit argument. Only the leading sub-block of each parameter is read, so
// a maximal-width layer serves any narrower configuration without copies.
struct LinearLayer {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  bool has_bias = true;
  std::vector<float> weight;
  std::vector<float> bias;
  std::vector<float> grad_weight;
  std::vector<float> grad_bias;

  LinearLayer() = default;
  LinearLayer(std::size_t in, std::size_t out, bool with_bias = true);

  // Uniform in +-sqrt(1 / in_channels); bias zero.
  void init(Rng& rng);
  void zero_grad();
};

// Requires x.cols == in_channels.
FeatureMatrix linear_forward(const LinearLayer& layer, const FeatureMatrix& x,
                             std::uint64_t* macs = nullptr);
// Leading-slice variant: x.cols <= in_channels, out_active <= out_channels.
FeatureMatrix linear_forward(const LinearLayer& layer, const FeatureMatrix& x,
                             std::size_t out_active, std::uint64_t* macs = nullptr);
// Returns dL/dx and accumulates weight/bias gradients for the active block.
FeatureMatrix linear_backward(LinearLayer& layer, const FeatureMatrix& x,
                              const FeatureMatrix& grad_out);

enum class BnMode { kTraining, kInference };

struct BatchNormLayer {
  std::size_t channels = 0;
  std::vector<float> gamma;
  std::vector<float> beta;
  std::vector<float> running_mean;
  std::vector<float> running_var;
  std::vector<float> grad_gamma;
  std::vector<float> grad_beta;
  float epsilon = 1e-5f;
  float momentum = 0.1f;
  BnMode mode = BnMode::kTraining;
  // When set, training-mode forwards fold batch statistics into a cumulative
  // average instead of the momentum update (used for recalibration passes).
  bool cumulative = false;
  std::size_t batches_seen = 0;

  BatchNormLayer() = default;
  explicit BatchNormLayer(std::size_t c);

  void zero_grad();
  void reset_running_stats();
};

// Training mode normalizes by batch statistics over the first x.cols channels
// and updates the running statistics; inference mode uses running statistics.
FeatureMatrix batchnorm_forward(BatchNormLayer& layer, const FeatureMatrix& x);
// Gradient through the batch statistics (training mode only). Batch
// statistics are recomputed from x.
FeatureMatrix batchnorm_backward(BatchNormLayer& layer, const FeatureMatrix& x,
                                 const FeatureMatrix& grad_out);

FeatureMatrix relu_forward(const FeatureMatrix& x);
void relu_inplace(FeatureMatrix& x);
// Masks grad_out where x <= 0. `x` may be either the pre- or post-activation.
FeatureMatrix relu_backward(const FeatureMatrix& x, const FeatureMatrix& grad_out);

struct CrossEntropyResult {
  double loss = 0.0;
  FeatureMatrix grad_logits;
  std::size_t counted_rows = 0;
};

// Mean softmax cross-entropy over rows whose label is not ignore_index.
CrossEntropyResult cross_entropy(const FeatureMatrix& logits, std::span<const std::int32_t> labels,
                                 std::optional<std::int32_t> ignore_index = std::nullopt);

struct ParamRef {
  std::string name;
  std::span<float> value;
  std::span<float> grad;
};

struct SgdState {
  double learning_rate = 0.1;
  double momentum_coefficient = 0.9;
  std::vector<std::vector<float>> velocity;

  SgdState() = default;
  SgdState(double lr, double momentum) : learning_rate(lr), momentum_coefficient(momentum) {}
};

// velocity = mu * velocity + grad; value -= lr * velocity.
// Throws NumericError (and leaves every parameter untouched) on non-finite
// gradients.
void sgd_step(SgdState& state, std::span<const ParamRef> params);

// Registers weight/bias (and BN gamma/beta plus running-stat buffers) under `prefix`.
void collect(LinearLayer& layer, const std::string& prefix, TensorList& out);
void collect(BatchNormLayer& layer, const std::string& prefix, TensorList& out);

// Half-cosine decay from base_lr at step 0 to zero at total_steps.
double cosine_lr(double base_lr, std::size_t step, std::size_t total_steps);

}  // namespace spvnas::nn
