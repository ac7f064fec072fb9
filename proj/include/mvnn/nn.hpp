#pragma once

#include <string>
#include <vector>

#include "mvnn/ops.hpp"
#include "mvnn/rng.hpp"
#include "mvnn/tensor.hpp"

namespace mvnn {

/// Whether a forward pass trains (batch statistics, dropout) and which
/// generator draws its dropout masks.
struct ForwardMode {
  bool training = false;
  Rng* rng = nullptr;

  static ForwardMode inference() { return {}; }
  static ForwardMode train(Rng& rng) { return {true, &rng}; }
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Non-learned state saved with a model (batch-norm running statistics).
struct NamedBuffer {
  std::string name;
  Vector* data;
};

/// Fan-in scaled uniform initialisation for layers followed by ReLU:
/// U(-sqrt(6/fan_in), sqrt(6/fan_in)).
Tensor he_uniform(Shape shape, Index fan_in, Rng& rng);

/// U(-sqrt(6/(fan_in+fan_out)), +...) for sigmoid/tanh/linear outputs.
Tensor glorot_uniform(Shape shape, Index fan_in, Index fan_out, Rng& rng);

enum class Init { He, Glorot };

/// Fully connected layer y = x W^T + b.
struct Linear {
  Tensor weight;  // [out x in]
  Tensor bias;    // [out]

  Linear() = default;
  Linear(Index in, Index out, Init init, Rng& rng);
  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

struct Conv1dLayer {
  Tensor kernels;  // [c_out x c_in x k]
  Tensor bias;

  Conv1dLayer() = default;
  Conv1dLayer(Index c_in, Index c_out, Index k, Rng& rng);
  Tensor operator()(const Tensor& x) const {
    return conv1d(x, kernels, bias, 1, Padding::Same);
  }
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

struct Conv2dLayer {
  Tensor kernels;  // [c_out x c_in x k x k]
  Tensor bias;

  Conv2dLayer() = default;
  Conv2dLayer(Index c_in, Index c_out, Index k, Rng& rng);
  Tensor operator()(const Tensor& x) const {
    return conv2d(x, kernels, bias, 1, Padding::Same);
  }
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

struct BatchNorm {
  Tensor gamma;
  Tensor beta;
  BatchNormState state;

  BatchNorm() = default;
  explicit BatchNorm(Index channels);
  Tensor operator()(const Tensor& x, const ForwardMode& mode) {
    return batchnorm(x, gamma, beta, state, mode.training);
  }
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
  void collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out);
};

/// Dropout driven by a forward mode; a training mode must carry an Rng.
Tensor dropout(const Tensor& x, double rate, const ForwardMode& mode);

}  // namespace mvnn
