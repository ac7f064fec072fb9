#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mvnn/nn.hpp"
#include "mvnn/ops.hpp"
#include "mvnn/rng.hpp"
#include "mvnn/tensor.hpp"
#include "mvnn/model.hpp"
#include "oracles.hpp"

namespace testing {

using namespace mvnn;

inline Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = false,
                            double lo = -1.0, double hi = 1.0) {
  Vector v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

inline oracle::Mat to_mat(const Tensor& t) {
  const Index rows = t.dim(0), cols = t.size() / rows;
  oracle::Mat m(rows, std::vector<double>(cols));
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m[i][j] = t.data()[i * cols + j];
  return m;
}

inline std::vector<double> to_vec(const Tensor& t) {
  return {t.data().data(), t.data().data() + t.size()};
}

inline std::vector<double> to_vec(const Vector& v) { return {v.data(), v.data() + v.size()}; }

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = a.size() == b.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff(const oracle::Mat& a, const oracle::Mat& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, max_abs_diff(a[i], b[i]));
  return m;
}

// |a - n| / max(|a|, |n|, floor); the floor keeps vanishing gradients from
// turning rounding noise into large ratios.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradReport {
  double max_rel_error = 0;
  std::string worst;
  Index checked = 0;
  Index kinks = 0;  // skipped as non-smooth (only with skip_kinks)
};

// Compares backward() against central differences for every element of
// every tensor in `wrt`. `loss` must rebuild the graph (and reseed any
// dropout generator) on each call. With skip_kinks, a point whose
// estimates at h and h/2 disagree is taken to straddle a ReLU or max-pool
// switch and is counted in `kinks` instead of compared. The two estimates
// may differ by `kink_tol` (relative) before a point counts as a kink.
inline GradReport gradcheck(const std::function<Tensor()>& loss,
                            const std::vector<NamedTensor>& wrt, double h = 1e-4,
                            double floor = 1e-6, bool skip_kinks = false,
                            double kink_tol = 1e-5) {
  for (NamedTensor p : wrt) p.tensor.zero_grad();
  backward(loss());
  std::vector<Vector> analytic;
  for (const NamedTensor& p : wrt) analytic.push_back(p.tensor.grad());

  GradReport report;
  NoGradGuard guard;
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    Tensor t = wrt[k].tensor;
    Vector& data = t.mutable_data();
    for (Index i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = loss().item();
      data[i] = saved - h;
      const double down = loss().item();
      data[i] = saved;
      const double numeric = (up - down) / (2 * h);
      if (skip_kinks) {
        data[i] = saved + h / 2;
        const double up2 = loss().item();
        data[i] = saved - h / 2;
        const double down2 = loss().item();
        data[i] = saved;
        if (relative_error(numeric, (up2 - down2) / h, floor) > kink_tol) {
          ++report.kinks;
          continue;
        }
      }
      const double err = relative_error(analytic[k][i], numeric, floor);
      ++report.checked;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst = wrt[k].name + "[" + std::to_string(i) + "] analytic " +
                       std::to_string(analytic[k][i]) + " numeric " + std::to_string(numeric);
      }
    }
  }
  return report;
}

// Zero-initialised biases put ReLU inputs exactly on the kink, where a
// central difference sees half a slope. Finite-difference tests move them off.
inline void jitter_biases(const std::vector<NamedTensor>& params, Rng& rng) {
  for (NamedTensor p : params) {
    if (p.name.find("bias") == std::string::npos && p.name.find("beta") == std::string::npos) continue;
    for (double& v : p.tensor.mutable_data()) v = rng.uniform(-0.1, 0.1);
  }
}

// sum(out * weights) with fixed random weights, so every output element
// receives a distinct upstream gradient.
inline Tensor weighted_sum(const Tensor& out, const Tensor& weights) {
  return sum(mul(out, weights));
}

// Narrow every layer so whole-model finite differences stay cheap.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.freq.filters = {2, 3, 4};
  c.freq.shared_fc = 4;
  c.freq.out_dim = 8;
  c.pixel.input_size = 16;
  c.pixel.widths = {2, 2, 3, 3};
  c.pixel.tap_channels = 2;
  c.pixel.branch_dim = 8;
  c.pixel.gru_hidden = 4;
  c.attention_dim = 4;
  return c;
}

inline Batch random_batch(const ModelConfig& c, Index n, Rng& rng) {
  Batch b;
  b.freq = random_tensor({n, 64, 250}, rng, false, 0, 1);
  b.pixels = random_tensor({n, 3, c.pixel.input_size, c.pixel.input_size}, rng, false, -1, 1);
  for (Index i = 0; i < n; ++i) b.labels.push_back(static_cast<int>(i % 2));
  return b;
}

}  // namespace testing
