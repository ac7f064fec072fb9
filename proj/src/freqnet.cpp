#include "mvnn/freqnet.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "mvnn/errors.hpp"

namespace mvnn {
namespace freq {

namespace {

const Block& dct_matrix() {
  static const Block c = [] {
    Block m;
    for (int k = 0; k < kBlockSize; ++k) {
      const double alpha = std::sqrt((k == 0 ? 1.0 : 2.0) / kBlockSize);
      for (int n = 0; n < kBlockSize; ++n) {
        m(k, n) = alpha * std::cos((2 * n + 1) * k * std::numbers::pi / (2 * kBlockSize));
      }
    }
    return m;
  }();
  return c;
}

}  // namespace

const std::array<int, kFrequencies>& zigzag_order() {
  static constexpr std::array<int, kFrequencies> order{
      0,  1,  8,  16, 9,  2,  3,  10, 17, 24, 32, 25, 18, 11, 4,  5,
      12, 19, 26, 33, 40, 48, 41, 34, 27, 20, 13, 6,  7,  14, 21, 28,
      35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51,
      58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63};
  return order;
}

Block dct8x8(const Block& block) {
  const Block& c = dct_matrix();
  return c * block * c.transpose();
}

Block idct8x8(const Block& coefficients) {
  const Block& c = dct_matrix();
  return c.transpose() * coefficients * c;
}

DctBlockGrid block_dct(const Matrix& luma) {
  if (luma.rows() == 0 || luma.cols() == 0) throw IngestError("block_dct: empty image");
  DctBlockGrid grid;
  grid.block_rows = (luma.rows() + kBlockSize - 1) / kBlockSize;
  grid.block_cols = (luma.cols() + kBlockSize - 1) / kBlockSize;
  grid.blocks.reserve(static_cast<std::size_t>(grid.block_rows * grid.block_cols));
  Block block;
  for (Index br = 0; br < grid.block_rows; ++br) {
    for (Index bc = 0; bc < grid.block_cols; ++bc) {
      for (int r = 0; r < kBlockSize; ++r) {
        const Index y = std::min<Index>(br * kBlockSize + r, luma.rows() - 1);
        for (int c = 0; c < kBlockSize; ++c) {
          const Index x = std::min<Index>(bc * kBlockSize + c, luma.cols() - 1);
          block(r, c) = luma(y, x) - 128.0;
        }
      }
      grid.blocks.push_back(dct8x8(block));
    }
  }
  return grid;
}

DctBlockGrid block_dct(const Image& image) { return block_dct(luminance(image)); }

RowMatrix coefficient_histograms(const DctBlockGrid& grid) {
  if (grid.blocks.empty()) throw UsageError("coefficient_histograms: empty grid");
  RowMatrix hist = RowMatrix::Zero(kFrequencies, kRawBins);
  const auto& order = zigzag_order();
  for (const Block& b : grid.blocks) {
    for (int f = 0; f < kFrequencies; ++f) {
      const double v = std::round(b(order[static_cast<std::size_t>(f)]));
      const int bin = static_cast<int>(
          std::clamp(v - kHistogramMin, 0.0, static_cast<double>(kRawBins - 1)));
      hist(f, bin) += 1.0;
    }
  }
  return hist;
}

RowMatrix fourier_enhance(const RowMatrix& rows) {
  const Index n = rows.cols();
  RowMatrix out(rows.rows(), n);
  Eigen::FFT<double> fft;
  std::vector<double> in(static_cast<std::size_t>(n));
  std::vector<std::complex<double>> spectrum;
  for (Index r = 0; r < rows.rows(); ++r) {
    for (Index k = 0; k < n; ++k) in[static_cast<std::size_t>(k)] = rows(r, k);
    fft.fwd(spectrum, in);
    for (Index k = 0; k < n; ++k) out(r, k) = std::abs(spectrum[static_cast<std::size_t>(k)]);
  }
  return out;
}

FreqFeatures::FreqFeatures(RowMatrix values) : values_(std::move(values)) {
  if (values_.rows() != kFrequencies || values_.cols() != kFeatureLength) {
    throw DimensionError("FreqFeatures must be 64x250, got " +
                         std::to_string(values_.rows()) + "x" +
                         std::to_string(values_.cols()));
  }
  if (!values_.allFinite() || (values_.array() < 0.0).any()) {
    throw NumericError("FreqFeatures entries must be finite and nonnegative");
  }
}

FreqFeatures sample_to_250(const RowMatrix& enhanced, Sampling sampling) {
  const Index n = enhanced.cols();
  if (n < kFeatureLength) {
    throw ConfigError("sample_to_250: rows of length " + std::to_string(n) +
                      " are shorter than 250");
  }
  RowMatrix out(enhanced.rows(), kFeatureLength);
  for (Index i = 0; i < kFeatureLength; ++i) {
    if (sampling == Sampling::Stride) {
      out.col(i) = enhanced.col(i * n / kFeatureLength);
    } else {
      const double pos = static_cast<double>(i) * static_cast<double>(n - 1) /
                         (kFeatureLength - 1);
      const auto lo = static_cast<Index>(std::floor(pos));
      const Index hi = std::min(lo + 1, n - 1);
      const double t = pos - static_cast<double>(lo);
      out.col(i) = (1.0 - t) * enhanced.col(lo) + t * enhanced.col(hi);
    }
  }
  for (Index r = 0; r < out.rows(); ++r) {
    const double peak = out.row(r).maxCoeff();
    if (peak > 0.0) out.row(r) /= peak;
  }
  return FreqFeatures(std::move(out));
}

FreqFeatures extract(const Image& image, Sampling sampling) {
  return sample_to_250(fourier_enhance(coefficient_histograms(block_dct(image))),
                       sampling);
}

}  // namespace freq

FreqNet::FreqNet(const FreqNetConfig& config, Rng& init) : config_(config) {
  for (std::size_t i = 1; i < config.filters.size(); ++i) {
    if (config.filters[i] <= config.filters[i - 1]) {
      throw ConfigError("frequency filter counts must strictly increase");
    }
  }
  Index channels = 1;
  Index length = freq::kFeatureLength;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    convs_[i] = Conv1dLayer(channels, config.filters[i], config.kernel, init);
    norms_[i] = BatchNorm(config.filters[i]);
    channels = config.filters[i];
    length = (length - config.pool) / config.pool + 1;
  }
  shared_fc_ = Linear(channels * length, config.shared_fc, Init::He, init);
  fuse_fc_ = Linear(freq::kFrequencies * config.shared_fc, config.out_dim,
                    Init::He, init);
}

Tensor FreqNet::row_features(const Tensor& feats, const ForwardMode& mode) {
  if (feats.rank() != 3 || feats.dim(1) != freq::kFrequencies ||
      feats.dim(2) != freq::kFeatureLength) {
    throw DimensionError("FreqNet expects [n x 64 x 250], got " +
                         to_string(feats.shape()));
  }
  const Index n = feats.dim(0);
  Tensor h = feats.reshape({n * freq::kFrequencies, 1, freq::kFeatureLength});
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    h = maxpool1d(relu(norms_[i](convs_[i](h), mode)), config_.pool, config_.pool);
  }
  h = h.reshape({n * freq::kFrequencies, h.dim(1) * h.dim(2)});
  h = relu(shared_fc_(h));
  return h.reshape({n, freq::kFrequencies, config_.shared_fc});
}

Tensor FreqNet::forward(const Tensor& feats, const ForwardMode& mode) {
  const Tensor w = row_features(feats, mode);
  const Index n = w.dim(0);
  const Tensor joined = w.reshape({n, freq::kFrequencies * config_.shared_fc});
  return dropout(relu(fuse_fc_(joined)), config_.dropout, mode);
}

std::vector<NamedTensor> FreqNet::parameters() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    convs_[i].collect("freq.conv" + std::to_string(i + 1), out);
    norms_[i].collect("freq.bn" + std::to_string(i + 1), out);
  }
  shared_fc_.collect("freq.shared_fc", out);
  fuse_fc_.collect("freq.fuse_fc", out);
  return out;
}

std::vector<NamedBuffer> FreqNet::buffers() {
  std::vector<NamedBuffer> out;
  for (std::size_t i = 0; i < norms_.size(); ++i) {
    norms_[i].collect_buffers("freq.bn" + std::to_string(i + 1), out);
  }
  return out;
}

Tensor stack_features(const std::vector<freq::FreqFeatures>& feats) {
  if (feats.empty()) throw UsageError("stack_features: empty list");
  constexpr Index per = freq::kFrequencies * freq::kFeatureLength;
  Vector data(static_cast<Index>(feats.size()) * per);
  for (std::size_t i = 0; i < feats.size(); ++i) {
    data.segment(static_cast<Index>(i) * per, per) =
        Eigen::Map<const Vector>(feats[i].matrix().data(), per);
  }
  return Tensor({static_cast<Index>(feats.size()), freq::kFrequencies,
                 freq::kFeatureLength},
                std::move(data));
}

}  // namespace mvnn
