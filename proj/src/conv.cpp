#include <algorithm>
#include <vector>

#include "mvnn/errors.hpp"
#include "mvnn/ops.hpp"

namespace mvnn {

namespace {

using detail::Node;

struct Extent {
  Index out = 0;
  Index before = 0;  // zero padding ahead of the first element
};

Extent output_extent(Index length, Index kernel, Index stride, Padding padding,
                     const char* what) {
  if (stride < 1) throw DimensionError(std::string(what) + ": stride must be positive");
  Extent e;
  if (padding == Padding::Valid) {
    if (kernel > length) {
      throw DimensionError(std::string(what) + ": kernel extent " +
                           std::to_string(kernel) + " exceeds input extent " +
                           std::to_string(length));
    }
    e.out = (length - kernel) / stride + 1;
  } else {
    e.out = (length + stride - 1) / stride;
    const Index total = std::max<Index>((e.out - 1) * stride + kernel - length, 0);
    e.before = total / 2;
  }
  return e;
}

// Caps the im2col buffer of the batched 1-D convolution (in doubles).
constexpr Index kColumnBudget = Index{1} << 22;

}  // namespace

Tensor conv1d(const Tensor& x, const Tensor& kernels, const Tensor& bias,
              Index stride, Padding padding) {
  const bool batched = x.rank() == 3;
  if (!batched && x.rank() != 2) {
    throw DimensionError("conv1d: input must be [c x len] or [b x c x len], got " +
                         to_string(x.shape()));
  }
  if (kernels.rank() != 3) {
    throw DimensionError("conv1d: kernels must be [c_out x c_in x k], got " +
                         to_string(kernels.shape()));
  }
  const Index batch = batched ? x.dim(0) : 1;
  const Index c_in = x.dim(-2), length = x.dim(-1);
  const Index c_out = kernels.dim(0), k = kernels.dim(2);
  if (kernels.dim(1) != c_in) {
    throw DimensionError("conv1d: kernels " + to_string(kernels.shape()) +
                         " do not match input " + to_string(x.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.size() != c_out) {
    throw DimensionError("conv1d: bias " + to_string(bias.shape()) +
                         " does not match " + std::to_string(c_out) + " kernels");
  }
  const Extent e = output_extent(length, k, stride, padding, "conv1d");
  const Index l_out = e.out, pad = e.before;
  const Index rows = c_in * k;
  const Index chunk =
      std::clamp<Index>(kColumnBudget / std::max<Index>(rows * l_out, 1), 1, batch);

  // cols(ci*k + j, (b - b0)*l_out + t) = x[b, ci, t*stride + j - pad]
  auto im2col = [=](const Vector& xv, Index b0, Index nb, Matrix& cols) {
    cols.setZero(rows, nb * l_out);
    for (Index bb = 0; bb < nb; ++bb) {
      const Scalar* xs = xv.data() + (b0 + bb) * c_in * length;
      for (Index t = 0; t < l_out; ++t) {
        Scalar* col = cols.col(bb * l_out + t).data();
        const Index origin = t * stride - pad;
        for (Index ci = 0; ci < c_in; ++ci) {
          for (Index j = 0; j < k; ++j) {
            const Index pos = origin + j;
            if (pos >= 0 && pos < length) col[ci * k + j] = xs[ci * length + pos];
          }
        }
      }
    }
  };

  Vector out(batch * c_out * l_out);
  ConstRowMatrixMap w(kernels.data().data(), c_out, rows);
  Matrix cols, prod;
  for (Index b0 = 0; b0 < batch; b0 += chunk) {
    const Index nb = std::min(chunk, batch - b0);
    im2col(x.data(), b0, nb, cols);
    prod.noalias() = w * cols;
    for (Index bb = 0; bb < nb; ++bb) {
      for (Index co = 0; co < c_out; ++co) {
        Eigen::Map<Vector> dst(out.data() + ((b0 + bb) * c_out + co) * l_out, l_out);
        dst = prod.row(co).segment(bb * l_out, l_out).transpose();
        if (has_bias) dst.array() += bias.data()[co];
      }
    }
  }

  Shape shape = batched ? Shape{batch, c_out, l_out} : Shape{c_out, l_out};
  std::vector<Tensor> inputs{x, kernels};
  if (has_bias) inputs.push_back(bias);
  return Tensor::make_result(
      std::move(shape), std::move(out), inputs, "conv1d",
      [=](Node& self) {
        const bool dx_on = self.inputs[0]->requires_grad;
        const bool dw_on = self.inputs[1]->requires_grad;
        const bool db_on = has_bias && self.inputs[2]->requires_grad;
        const Vector& xv = self.inputs[0]->value;
        ConstRowMatrixMap wv(self.inputs[1]->value.data(), c_out, rows);
        Matrix cols, gout, dcols;
        for (Index b0 = 0; b0 < batch; b0 += chunk) {
          const Index nb = std::min(chunk, batch - b0);
          gout.resize(c_out, nb * l_out);
          for (Index bb = 0; bb < nb; ++bb) {
            for (Index co = 0; co < c_out; ++co) {
              gout.row(co).segment(bb * l_out, l_out) =
                  self.grad.segment(((b0 + bb) * c_out + co) * l_out, l_out)
                      .transpose();
            }
          }
          if (db_on) self.inputs[2]->grad_buffer() += gout.rowwise().sum();
          if (dw_on) {
            im2col(xv, b0, nb, cols);
            RowMatrixMap(self.inputs[1]->grad_buffer().data(), c_out, rows)
                .noalias() += gout * cols.transpose();
          }
          if (dx_on) {
            dcols.noalias() = wv.transpose() * gout;
            Vector& dx = self.inputs[0]->grad_buffer();
            for (Index bb = 0; bb < nb; ++bb) {
              Scalar* ds = dx.data() + (b0 + bb) * c_in * length;
              for (Index t = 0; t < l_out; ++t) {
                const Scalar* col = dcols.col(bb * l_out + t).data();
                const Index origin = t * stride - pad;
                for (Index ci = 0; ci < c_in; ++ci) {
                  for (Index j = 0; j < k; ++j) {
                    const Index pos = origin + j;
                    if (pos >= 0 && pos < length) ds[ci * length + pos] += col[ci * k + j];
                  }
                }
              }
            }
          }
        }
      });
}

Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias,
              Index stride, Padding padding) {
  const bool batched = x.rank() == 4;
  if (!batched && x.rank() != 3) {
    throw DimensionError("conv2d: input must be [c x h x w] or [b x c x h x w], got " +
                         to_string(x.shape()));
  }
  if (kernels.rank() != 4) {
    throw DimensionError("conv2d: kernels must be [c_out x c_in x kh x kw], got " +
                         to_string(kernels.shape()));
  }
  const Index batch = batched ? x.dim(0) : 1;
  const Index c_in = x.dim(-3), height = x.dim(-2), width = x.dim(-1);
  const Index c_out = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
  if (kernels.dim(1) != c_in) {
    throw DimensionError("conv2d: kernels " + to_string(kernels.shape()) +
                         " do not match input " + to_string(x.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.size() != c_out) {
    throw DimensionError("conv2d: bias " + to_string(bias.shape()) +
                         " does not match " + std::to_string(c_out) + " kernels");
  }
  const Extent ey = output_extent(height, kh, stride, padding, "conv2d");
  const Extent ex = output_extent(width, kw, stride, padding, "conv2d");
  const Index h_out = ey.out, w_out = ex.out;
  const Index pad_y = ey.before, pad_x = ex.before;
  const Index rows = c_in * kh * kw, plane = h_out * w_out;
  const Index in_plane = height * width;
  // 1x1 kernels at unit stride read the input plane directly.
  const bool pointwise = kh == 1 && kw == 1 && stride == 1;

  // cols(row(ci, ky, kx), oy*w_out + ox) = x[ci, oy*stride + ky - pad_y, ...]
  auto im2col = [=](const Scalar* xs, RowMatrix& cols) {
    cols.setZero(rows, plane);
    for (Index ci = 0; ci < c_in; ++ci) {
      for (Index ky = 0; ky < kh; ++ky) {
        for (Index kx = 0; kx < kw; ++kx) {
          Scalar* dst = cols.row((ci * kh + ky) * kw + kx).data();
          for (Index oy = 0; oy < h_out; ++oy) {
            const Index iy = oy * stride + ky - pad_y;
            if (iy < 0 || iy >= height) continue;
            const Scalar* src = xs + ci * in_plane + iy * width;
            for (Index ox = 0; ox < w_out; ++ox) {
              const Index ix = ox * stride + kx - pad_x;
              if (ix >= 0 && ix < width) dst[oy * w_out + ox] = src[ix];
            }
          }
        }
      }
    }
  };

  Vector out(batch * c_out * plane);
  ConstRowMatrixMap w(kernels.data().data(), c_out, rows);
  RowMatrix cols;
  for (Index b = 0; b < batch; ++b) {
    const Scalar* xs = x.data().data() + b * c_in * in_plane;
    RowMatrixMap y(out.data() + b * c_out * plane, c_out, plane);
    if (pointwise) {
      y.noalias() = w * ConstRowMatrixMap(xs, c_in, in_plane);
    } else {
      im2col(xs, cols);
      y.noalias() = w * cols;
    }
    if (has_bias) y.colwise() += bias.data();
  }

  Shape shape = batched ? Shape{batch, c_out, h_out, w_out}
                        : Shape{c_out, h_out, w_out};
  std::vector<Tensor> inputs{x, kernels};
  if (has_bias) inputs.push_back(bias);
  return Tensor::make_result(
      std::move(shape), std::move(out), inputs, "conv2d",
      [=](Node& self) {
        const bool dx_on = self.inputs[0]->requires_grad;
        const bool dw_on = self.inputs[1]->requires_grad;
        const bool db_on = has_bias && self.inputs[2]->requires_grad;
        ConstRowMatrixMap wv(self.inputs[1]->value.data(), c_out, rows);
        RowMatrix cols, dcols;
        for (Index b = 0; b < batch; ++b) {
          ConstRowMatrixMap g(self.grad.data() + b * c_out * plane, c_out, plane);
          const Scalar* xs = self.inputs[0]->value.data() + b * c_in * in_plane;
          if (db_on) self.inputs[2]->grad_buffer() += g.rowwise().sum();
          if (dw_on) {
            RowMatrixMap dw(self.inputs[1]->grad_buffer().data(), c_out, rows);
            if (pointwise) {
              dw.noalias() += g * ConstRowMatrixMap(xs, c_in, in_plane).transpose();
            } else {
              im2col(xs, cols);
              dw.noalias() += g * cols.transpose();
            }
          }
          if (!dx_on) continue;
          Scalar* dxs = self.inputs[0]->grad_buffer().data() + b * c_in * in_plane;
          if (pointwise) {
            RowMatrixMap(dxs, c_in, in_plane).noalias() += wv.transpose() * g;
            continue;
          }
          dcols.noalias() = wv.transpose() * g;
          for (Index ci = 0; ci < c_in; ++ci) {
            for (Index ky = 0; ky < kh; ++ky) {
              for (Index kx = 0; kx < kw; ++kx) {
                const Scalar* src = dcols.row((ci * kh + ky) * kw + kx).data();
                for (Index oy = 0; oy < h_out; ++oy) {
                  const Index iy = oy * stride + ky - pad_y;
                  if (iy < 0 || iy >= height) continue;
                  Scalar* dst = dxs + ci * in_plane + iy * width;
                  for (Index ox = 0; ox < w_out; ++ox) {
                    const Index ix = ox * stride + kx - pad_x;
                    if (ix >= 0 && ix < width) dst[ix] += src[oy * w_out + ox];
                  }
                }
              }
            }
          }
        }
      });
}

Tensor maxpool1d(const Tensor& x, Index window, Index stride) {
  if (x.rank() < 1) throw DimensionError("maxpool1d: empty shape");
  const Index length = x.dim(-1);
  if (window < 1 || stride < 1 || window > length) {
    throw DimensionError("maxpool1d: window " + std::to_string(window) +
                         " does not fit input " + to_string(x.shape()));
  }
  const Index l_out = (length - window) / stride + 1;
  const Index rows = x.size() / length;
  Vector out(rows * l_out);
  std::vector<Index> argmax(static_cast<std::size_t>(rows * l_out));
  const Scalar* xs = x.data().data();
  for (Index r = 0; r < rows; ++r) {
    for (Index t = 0; t < l_out; ++t) {
      Index best = r * length + t * stride;
      for (Index j = 1; j < window; ++j) {
        const Index pos = r * length + t * stride + j;
        if (xs[pos] > xs[best]) best = pos;  // strict: ties keep lowest index
      }
      out[r * l_out + t] = xs[best];
      argmax[static_cast<std::size_t>(r * l_out + t)] = best;
    }
  }
  Shape shape = x.shape();
  shape.back() = l_out;
  return Tensor::make_result(std::move(shape), std::move(out), {x}, "maxpool1d",
                             [argmax = std::move(argmax)](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Vector& dx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < argmax.size(); ++i) {
      dx[argmax[i]] += self.grad[static_cast<Index>(i)];
    }
  });
}

Tensor maxpool2d(const Tensor& x, Index window, Index stride) {
  if (x.rank() < 2) throw DimensionError("maxpool2d: need at least 2 axes");
  const Index height = x.dim(-2), width = x.dim(-1);
  if (window < 1 || stride < 1 || window > height || window > width) {
    throw DimensionError("maxpool2d: window " + std::to_string(window) +
                         " does not fit input " + to_string(x.shape()));
  }
  const Index h_out = (height - window) / stride + 1;
  const Index w_out = (width - window) / stride + 1;
  const Index planes = x.size() / (height * width);
  Vector out(planes * h_out * w_out);
  std::vector<Index> argmax(static_cast<std::size_t>(out.size()));
  const Scalar* xs = x.data().data();
  Index o = 0;
  for (Index p = 0; p < planes; ++p) {
    const Index base = p * height * width;
    for (Index oy = 0; oy < h_out; ++oy) {
      for (Index ox = 0; ox < w_out; ++ox, ++o) {
        Index best = base + oy * stride * width + ox * stride;
        for (Index dy = 0; dy < window; ++dy) {
          for (Index dx = 0; dx < window; ++dx) {
            const Index pos = base + (oy * stride + dy) * width + ox * stride + dx;
            if (xs[pos] > xs[best]) best = pos;  // row-major scan, ties keep first
          }
        }
        out[o] = xs[best];
        argmax[static_cast<std::size_t>(o)] = best;
      }
    }
  }
  Shape shape = x.shape();
  shape[shape.size() - 2] = h_out;
  shape.back() = w_out;
  return Tensor::make_result(std::move(shape), std::move(out), {x}, "maxpool2d",
                             [argmax = std::move(argmax)](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Vector& dx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < argmax.size(); ++i) {
      dx[argmax[i]] += self.grad[static_cast<Index>(i)];
    }
  });
}

}  // namespace mvnn
