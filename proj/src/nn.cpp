#include "mvnn/nn.hpp"

#include <cmath>

#include "mvnn/errors.hpp"

namespace mvnn {

namespace {

Tensor uniform(Shape shape, double bound, Rng& rng) {
  Vector v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(v), true);
}

}  // namespace

Tensor he_uniform(Shape shape, Index fan_in, Rng& rng) {
  return uniform(std::move(shape), std::sqrt(6.0 / static_cast<double>(fan_in)), rng);
}

Tensor glorot_uniform(Shape shape, Index fan_in, Index fan_out, Rng& rng) {
  return uniform(std::move(shape),
                 std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)), rng);
}

Linear::Linear(Index in, Index out, Init init, Rng& rng)
    : weight(init == Init::He ? he_uniform({out, in}, in, rng)
                              : glorot_uniform({out, in}, in, out, rng)),
      bias(Tensor::zeros({out}, true)) {}

void Linear::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Conv1dLayer::Conv1dLayer(Index c_in, Index c_out, Index k, Rng& rng)
    : kernels(he_uniform({c_out, c_in, k}, c_in * k, rng)),
      bias(Tensor::zeros({c_out}, true)) {}

void Conv1dLayer::collect(const std::string& prefix,
                          std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".weight", kernels});
  out.push_back({prefix + ".bias", bias});
}

Conv2dLayer::Conv2dLayer(Index c_in, Index c_out, Index k, Rng& rng)
    : kernels(he_uniform({c_out, c_in, k, k}, c_in * k * k, rng)),
      bias(Tensor::zeros({c_out}, true)) {}

void Conv2dLayer::collect(const std::string& prefix,
                          std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".weight", kernels});
  out.push_back({prefix + ".bias", bias});
}

BatchNorm::BatchNorm(Index channels)
    : gamma(Tensor::full({channels}, 1.0, true)),
      beta(Tensor::zeros({channels}, true)),
      state(channels) {}

void BatchNorm::collect(const std::string& prefix,
                        std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

void BatchNorm::collect_buffers(const std::string& prefix,
                                std::vector<NamedBuffer>& out) {
  out.push_back({prefix + ".running_mean", &state.running_mean});
  out.push_back({prefix + ".running_var", &state.running_var});
}

Tensor dropout(const Tensor& x, double rate, const ForwardMode& mode) {
  if (!mode.training) {
    if (!(rate >= 0.0 && rate < 1.0)) {
      throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
    }
    return x;
  }
  if (mode.rng == nullptr) throw UsageError("training forward pass without an Rng");
  return dropout(x, rate, *mode.rng, true);
}

}  // namespace mvnn
