#include <algorithm>
#include <cmath>

#include "mvnn/errors.hpp"
#include "mvnn/ops.hpp"

namespace mvnn {

namespace {

using detail::Node;

// Accumulates g into input i when that input takes part in backward.
template <typename Expr>
void accumulate(Node& self, std::size_t i, const Expr& g) {
  Node& in = *self.inputs[i];
  if (in.requires_grad) in.grad_buffer() += g;
}

bool wants_grad(const Node& self, std::size_t i) {
  return self.inputs[i]->requires_grad;
}

void require_rank(const Tensor& t, int rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " +
                         std::to_string(rank) + ", got " + to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " +
                         to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

// Splits a shape around `axis` into (outer, extent, inner) element counts.
struct AxisSplit {
  Index outer = 1;
  Index extent = 1;
  Index inner = 1;
};

AxisSplit split_axis(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < static_cast<int>(shape.size()); ++i) {
    if (i < axis) s.outer *= shape[static_cast<std::size_t>(i)];
    else if (i == axis) s.extent = shape[static_cast<std::size_t>(i)];
    else s.inner *= shape[static_cast<std::size_t>(i)];
  }
  return s;
}

int normalize_axis(int axis, int rank, const char* what) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw DimensionError(std::string(what) + ": axis out of range");
  }
  return axis;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner dimensions differ for " +
                         to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Vector out(m * n);
  RowMatrixMap(out.data(), m, n).noalias() = a.matrix() * b.matrix();
  return Tensor::make_result({m, n}, std::move(out), {a, b}, "matmul",
                             [m, k, n](Node& self) {
    ConstRowMatrixMap g(self.grad.data(), m, n);
    ConstRowMatrixMap av(self.inputs[0]->value.data(), m, k);
    ConstRowMatrixMap bv(self.inputs[1]->value.data(), k, n);
    if (wants_grad(self, 0)) {
      RowMatrixMap(self.inputs[0]->grad_buffer().data(), m, k).noalias() +=
          g * bv.transpose();
    }
    if (wants_grad(self, 1)) {
      RowMatrixMap(self.inputs[1]->grad_buffer().data(), k, n).noalias() +=
          av.transpose() * g;
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "linear input");
  require_rank(weight, 2, "linear weight");
  if (x.dim(1) != weight.dim(1)) {
    throw DimensionError("linear: input " + to_string(x.shape()) +
                         " does not fit weight " + to_string(weight.shape()));
  }
  const Index n = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != out_dim)) {
    throw DimensionError("linear: bias " + to_string(bias.shape()) +
                         " does not fit weight " + to_string(weight.shape()));
  }
  Vector out(n * out_dim);
  RowMatrixMap y(out.data(), n, out_dim);
  y.noalias() = x.matrix() * weight.matrix().transpose();
  if (has_bias) y.rowwise() += bias.data().transpose();
  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return Tensor::make_result({n, out_dim}, std::move(out), inputs, "linear",
                             [n, in, out_dim, has_bias](Node& self) {
    ConstRowMatrixMap g(self.grad.data(), n, out_dim);
    ConstRowMatrixMap xv(self.inputs[0]->value.data(), n, in);
    ConstRowMatrixMap wv(self.inputs[1]->value.data(), out_dim, in);
    if (wants_grad(self, 0)) {
      RowMatrixMap(self.inputs[0]->grad_buffer().data(), n, in).noalias() +=
          g * wv;
    }
    if (wants_grad(self, 1)) {
      RowMatrixMap(self.inputs[1]->grad_buffer().data(), out_dim, in)
          .noalias() += g.transpose() * xv;
    }
    if (has_bias && wants_grad(self, 2)) {
      self.inputs[2]->grad_buffer() += g.colwise().sum().transpose();
    }
  });
}

Tensor batched_matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 3, "batched_matmul");
  require_rank(b, 3, "batched_matmul");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw DimensionError("batched_matmul: incompatible shapes " +
                         to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const Index batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  Vector out(batch * m * n);
  for (Index i = 0; i < batch; ++i) {
    RowMatrixMap(out.data() + i * m * n, m, n).noalias() =
        ConstRowMatrixMap(a.data().data() + i * m * k, m, k) *
        ConstRowMatrixMap(b.data().data() + i * k * n, k, n);
  }
  return Tensor::make_result({batch, m, n}, std::move(out), {a, b},
                             "batched_matmul", [batch, m, k, n](Node& self) {
    for (Index i = 0; i < batch; ++i) {
      ConstRowMatrixMap g(self.grad.data() + i * m * n, m, n);
      if (wants_grad(self, 0)) {
        RowMatrixMap(self.inputs[0]->grad_buffer().data() + i * m * k, m, k)
            .noalias() +=
            g * ConstRowMatrixMap(self.inputs[1]->value.data() + i * k * n, k, n)
                    .transpose();
      }
      if (wants_grad(self, 1)) {
        RowMatrixMap(self.inputs[1]->grad_buffer().data() + i * k * n, k, n)
            .noalias() +=
            ConstRowMatrixMap(self.inputs[0]->value.data() + i * m * k, m, k)
                .transpose() *
            g;
      }
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  return Tensor::make_result(a.shape(), a.data() + b.data(), {a, b}, "add",
                             [](Node& self) {
                               accumulate(self, 0, self.grad);
                               accumulate(self, 1, self.grad);
                             });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  return Tensor::make_result(a.shape(), a.data() - b.data(), {a, b}, "sub",
                             [](Node& self) {
                               accumulate(self, 0, self.grad);
                               accumulate(self, 1, -self.grad);
                             });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  return Tensor::make_result(
      a.shape(), a.data().cwiseProduct(b.data()), {a, b}, "mul",
      [](Node& self) {
        accumulate(self, 0, self.grad.cwiseProduct(self.inputs[1]->value));
        accumulate(self, 1, self.grad.cwiseProduct(self.inputs[0]->value));
      });
}

Tensor scale(const Tensor& x, Scalar factor) {
  return Tensor::make_result(x.shape(), x.data() * factor, {x}, "scale",
                             [factor](Node& self) {
                               accumulate(self, 0, self.grad * factor);
                             });
}

Tensor rsub(Scalar constant, const Tensor& x) {
  return Tensor::make_result(
      x.shape(), (Vector::Constant(x.size(), constant) - x.data()), {x},
      "rsub", [](Node& self) { accumulate(self, 0, -self.grad); });
}

Tensor relu(const Tensor& x) {
  return Tensor::make_result(
      x.shape(), x.data().cwiseMax(0.0), {x}, "relu", [](Node& self) {
        const Vector& in = self.inputs[0]->value;
        accumulate(self, 0,
                   (in.array() > 0.0).select(self.grad, Vector::Zero(in.size())));
      });
}

Tensor sigmoid(const Tensor& x) {
  Vector y = x.data().unaryExpr([](Scalar v) {
    // Split by sign so exp never overflows.
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const Scalar e = std::exp(v);
    return e / (1.0 + e);
  });
  return Tensor::make_result(x.shape(), std::move(y), {x}, "sigmoid",
                             [](Node& self) {
    const Vector& s = self.value;
    accumulate(self, 0,
               self.grad.cwiseProduct(s.cwiseProduct(Vector::Ones(s.size()) - s)));
  });
}

Tensor tanh(const Tensor& x) {
  Vector y = x.data().unaryExpr([](Scalar v) { return std::tanh(v); });
  return Tensor::make_result(x.shape(), std::move(y), {x}, "tanh",
                             [](Node& self) {
    const Vector& t = self.value;
    accumulate(self, 0,
               self.grad.cwiseProduct(Vector::Ones(t.size()) - t.cwiseAbs2()));
  });
}

Tensor softmax(const Tensor& x) {
  if (!x.data().allFinite()) throw NumericError("softmax: non-finite input");
  const Index cols = x.dim(-1);
  const Index rows = x.size() / cols;
  Vector out(x.size());
  ConstRowMatrixMap in(x.data().data(), rows, cols);
  RowMatrixMap y(out.data(), rows, cols);
  for (Index r = 0; r < rows; ++r) {
    y.row(r) = (in.row(r).array() - in.row(r).maxCoeff()).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  return Tensor::make_result(x.shape(), std::move(out), {x}, "softmax",
                             [rows, cols](Node& self) {
    if (!wants_grad(self, 0)) return;
    ConstRowMatrixMap yv(self.value.data(), rows, cols);
    ConstRowMatrixMap g(self.grad.data(), rows, cols);
    RowMatrixMap dx(self.inputs[0]->grad_buffer().data(), rows, cols);
    for (Index r = 0; r < rows; ++r) {
      const Scalar dot = yv.row(r).dot(g.row(r));
      dx.row(r).array() += yv.row(r).array() * (g.row(r).array() - dot);
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts.front().shape();
  axis = normalize_axis(axis, static_cast<int>(first.size()), "concat");
  Shape out_shape = first;
  out_shape[static_cast<std::size_t>(axis)] = 0;
  std::vector<Index> extents;
  for (const Tensor& p : parts) {
    Shape s = p.shape();
    if (s.size() != first.size()) {
      throw DimensionError("concat: rank mismatch " + to_string(first) +
                           " vs " + to_string(s));
    }
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (static_cast<int>(i) != axis && s[i] != first[i]) {
        throw DimensionError("concat: shape mismatch " + to_string(first) +
                             " vs " + to_string(s));
      }
    }
    extents.push_back(s[static_cast<std::size_t>(axis)]);
    out_shape[static_cast<std::size_t>(axis)] += extents.back();
  }
  const AxisSplit whole = split_axis(out_shape, axis);
  Vector out(numel(out_shape));
  Index offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Index block = extents[p] * whole.inner;
    for (Index o = 0; o < whole.outer; ++o) {
      out.segment(o * whole.extent * whole.inner + offset, block) =
          parts[p].data().segment(o * block, block);
    }
    offset += block;
  }
  return Tensor::make_result(out_shape, std::move(out), parts, "concat",
                             [whole, extents](Node& self) {
    Index offset = 0;
    for (std::size_t p = 0; p < extents.size(); ++p) {
      const Index block = extents[p] * whole.inner;
      if (wants_grad(self, p)) {
        Vector& g = self.inputs[p]->grad_buffer();
        for (Index o = 0; o < whole.outer; ++o) {
          g.segment(o * block, block) +=
              self.grad.segment(o * whole.extent * whole.inner + offset, block);
        }
      }
      offset += block;
    }
  });
}

Tensor slice(const Tensor& x, int axis, Index start, Index length) {
  axis = normalize_axis(axis, x.rank(), "slice");
  const AxisSplit s = split_axis(x.shape(), axis);
  if (start < 0 || length <= 0 || start + length > s.extent) {
    throw DimensionError("slice [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") out of range for " +
                         to_string(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] = length;
  const Index block = length * s.inner;
  Vector out(s.outer * block);
  for (Index o = 0; o < s.outer; ++o) {
    out.segment(o * block, block) =
        x.data().segment(o * s.extent * s.inner + start * s.inner, block);
  }
  return Tensor::make_result(out_shape, std::move(out), {x}, "slice",
                             [s, start, block](Node& self) {
    if (!wants_grad(self, 0)) return;
    Vector& g = self.inputs[0]->grad_buffer();
    for (Index o = 0; o < s.outer; ++o) {
      g.segment(o * s.extent * s.inner + start * s.inner, block) +=
          self.grad.segment(o * block, block);
    }
  });
}

Tensor sum(const Tensor& x) {
  return Tensor::make_result({1}, Vector::Constant(1, x.data().sum()), {x},
                             "sum", [](Node& self) {
    accumulate(self, 0,
               Vector::Constant(self.inputs[0]->value.size(), self.grad[0]));
  });
}

Tensor mean(const Tensor& x) {
  const auto n = static_cast<Scalar>(x.size());
  return Tensor::make_result({1}, Vector::Constant(1, x.data().sum() / n), {x},
                             "mean", [n](Node& self) {
    accumulate(self, 0,
               Vector::Constant(self.inputs[0]->value.size(), self.grad[0] / n));
  });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1), got " +
                      std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  const Scalar keep_scale = 1.0 / (1.0 - rate);
  Vector mask(x.size());
  for (Index i = 0; i < mask.size(); ++i) {
    mask[i] = rng.bernoulli(rate) ? 0.0 : keep_scale;
  }
  Vector out = x.data().cwiseProduct(mask);
  return Tensor::make_result(x.shape(), std::move(out), {x}, "dropout",
                             [mask = std::move(mask)](Node& self) {
                               accumulate(self, 0, self.grad.cwiseProduct(mask));
                             });
}

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 BatchNormState& state, bool training) {
  if (x.rank() < 2) {
    throw DimensionError("batchnorm: expected [n x c ...], got " +
                         to_string(x.shape()));
  }
  const Index channels = x.dim(1);
  if (gamma.size() != channels || beta.size() != channels ||
      state.running_mean.size() != channels ||
      state.running_var.size() != channels) {
    throw DimensionError("batchnorm: parameters do not match " +
                         std::to_string(channels) + " channels of " +
                         to_string(x.shape()));
  }
  const Index batch = x.dim(0);
  const Index inner = x.size() / (batch * channels);
  const Index count = batch * inner;
  // Channel c of sample b occupies the contiguous run starting at
  // (b * channels + c) * inner.
  auto run = [channels, inner](Index b, Index c) {
    return (b * channels + c) * inner;
  };

  Vector mean_c(channels), inv_std(channels);
  if (training) {
    if (count < 2) {
      throw UsageError("batchnorm: training needs at least 2 values per channel");
    }
    for (Index c = 0; c < channels; ++c) {
      Scalar s = 0;
      for (Index b = 0; b < batch; ++b) s += x.data().segment(run(b, c), inner).sum();
      const Scalar mu = s / static_cast<Scalar>(count);
      Scalar v = 0;
      for (Index b = 0; b < batch; ++b) {
        v += (x.data().segment(run(b, c), inner).array() - mu).square().sum();
      }
      mean_c[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(v / static_cast<Scalar>(count) + state.eps);
      state.running_mean[c] =
          state.momentum * state.running_mean[c] + (1.0 - state.momentum) * mu;
      state.running_var[c] =
          state.momentum * state.running_var[c] +
          (1.0 - state.momentum) * v / static_cast<Scalar>(count - 1);
    }
  } else {
    mean_c = state.running_mean;
    inv_std = (state.running_var.array() + state.eps).rsqrt().matrix();
  }

  Vector xhat(x.size());
  Vector out(x.size());
  for (Index b = 0; b < batch; ++b) {
    for (Index c = 0; c < channels; ++c) {
      const Index k = run(b, c);
      xhat.segment(k, inner) =
          (x.data().segment(k, inner).array() - mean_c[c]) * inv_std[c];
      out.segment(k, inner) =
          (xhat.segment(k, inner).array() * gamma.data()[c] + beta.data()[c])
              .matrix();
    }
  }
  return Tensor::make_result(
      x.shape(), std::move(out), {x, gamma, beta}, "batchnorm",
      [xhat = std::move(xhat), inv_std, batch, channels, inner, count, run,
       training](Node& self) {
        const Vector& g = self.grad;
        const Vector& gam = self.inputs[1]->value;
        const Scalar m = static_cast<Scalar>(count);
        for (Index c = 0; c < channels; ++c) {
          Scalar sum_g = 0, sum_gx = 0;
          for (Index b = 0; b < batch; ++b) {
            const Index k = run(b, c);
            sum_g += g.segment(k, inner).sum();
            sum_gx += g.segment(k, inner).dot(xhat.segment(k, inner));
          }
          if (wants_grad(self, 1)) self.inputs[1]->grad_buffer()[c] += sum_gx;
          if (wants_grad(self, 2)) self.inputs[2]->grad_buffer()[c] += sum_g;
          if (!wants_grad(self, 0)) continue;
          Vector& dx = self.inputs[0]->grad_buffer();
          const Scalar coef = gam[c] * inv_std[c];
          for (Index b = 0; b < batch; ++b) {
            const Index k = run(b, c);
            if (training) {
              dx.segment(k, inner).array() +=
                  coef / m *
                  (m * g.segment(k, inner).array() - sum_g -
                   xhat.segment(k, inner).array() * sum_gx);
            } else {
              dx.segment(k, inner) += coef * g.segment(k, inner);
            }
          }
        }
      });
}

Tensor bce_loss(const Tensor& probs, std::span<const int> labels) {
  if (probs.dim(-1) != 2) {
    throw DimensionError("bce_loss: expected [n x 2] probabilities, got " +
                         to_string(probs.shape()));
  }
  const Index n = probs.size() / 2;
  if (static_cast<Index>(labels.size()) != n) {
    throw DimensionError("bce_loss: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(n) + " rows");
  }
  constexpr Scalar lo = 1e-12, hi = 1.0 - 1e-12;
  std::vector<int> y(labels.begin(), labels.end());
  Scalar total = 0;
  for (Index i = 0; i < n; ++i) {
    if (y[static_cast<std::size_t>(i)] != 0 && y[static_cast<std::size_t>(i)] != 1) {
      throw UsageError("bce_loss: labels must be 0 or 1");
    }
    const Scalar p = std::clamp(probs.data()[2 * i + 1], lo, hi);
    total -= y[static_cast<std::size_t>(i)] == 1 ? std::log(p) : std::log(1.0 - p);
  }
  return Tensor::make_result(
      {1}, Vector::Constant(1, total / static_cast<Scalar>(n)), {probs}, "bce",
      [y = std::move(y), n](Node& self) {
        if (!wants_grad(self, 0)) return;
        Vector& g = self.inputs[0]->grad_buffer();
        const Vector& pv = self.inputs[0]->value;
        const Scalar scale = self.grad[0] / static_cast<Scalar>(n);
        for (Index i = 0; i < n; ++i) {
          const Scalar p = pv[2 * i + 1];
          if (p < lo || p > hi) continue;  // clamped: locally constant
          g[2 * i + 1] += y[static_cast<std::size_t>(i)] == 1
                              ? -scale / p
                              : scale / (1.0 - p);
        }
      });
}

}  // namespace mvnn
