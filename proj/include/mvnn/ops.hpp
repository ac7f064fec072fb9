#pragma once

#include <span>
#include <vector>

#include "mvnn/rng.hpp"
#include "mvnn/tensor.hpp"

namespace mvnn {

// Differentiable primitives. Every function validates shapes and throws
// DimensionError naming the offending shapes.

/// [m x k] . [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);

/// x [n x in], weight [out x in], bias [out] (optional) -> x weight^T + bias.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

/// [b x m x k] . [b x k x n] -> [b x m x n]
Tensor batched_matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, Scalar factor);
/// constant - x, elementwise.
Tensor rsub(Scalar constant, const Tensor& x);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);

/// Softmax over the last axis, max-subtracted. Throws NumericError on
/// non-finite input.
Tensor softmax(const Tensor& x);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, Index start, Index length);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Inverted dropout: in training each element is zeroed with probability
/// `rate` and survivors are scaled by 1/(1-rate). Identity otherwise.
Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training);

/// Running statistics and constants of one batch-normalisation layer.
struct BatchNormState {
  Vector running_mean;
  Vector running_var;
  double momentum = 0.9;  // weight of the old running value
  double eps = 1e-5;

  explicit BatchNormState(Index channels = 0)
      : running_mean(Vector::Zero(channels)),
        running_var(Vector::Ones(channels)) {}
};

/// Normalises axis 1 of x ([n x c] or [n x c x ...]) over all other axes.
/// Training uses batch statistics and updates `state`; inference uses the
/// running statistics.
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 BatchNormState& state, bool training);

/// Mean binary cross-entropy of the fake-class probability probs[:, 1]
/// against labels in {0, 1}. Probabilities are clamped to [1e-12, 1-1e-12].
Tensor bce_loss(const Tensor& probs, std::span<const int> labels);

enum class Padding { Same, Valid };

/// Cross-correlation. x is [c_in x len] or [batch x c_in x len]; kernels
/// [c_out x c_in x k]; bias [c_out] optional.
Tensor conv1d(const Tensor& x, const Tensor& kernels, const Tensor& bias = {},
              Index stride = 1, Padding padding = Padding::Valid);

/// x is [c_in x h x w] or [batch x c_in x h x w]; kernels
/// [c_out x c_in x kh x kw]; bias [c_out] optional.
Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias = {},
              Index stride = 1, Padding padding = Padding::Valid);

/// Max over windows of the last axis; ties route to the lowest index.
Tensor maxpool1d(const Tensor& x, Index window, Index stride);

/// Max over window x window patches of the last two axes.
Tensor maxpool2d(const Tensor& x, Index window, Index stride);

}  // namespace mvnn
