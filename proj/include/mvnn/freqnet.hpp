#pragma once

#include <array>
#include <vector>

#include <Eigen/Core>

#include "mvnn/image.hpp"
#include "mvnn/nn.hpp"

namespace mvnn {

/// Frequency-domain features: per-frequency DCT coefficient histograms and
/// the shared 1-D CNN that encodes them.
namespace freq {

inline constexpr int kBlockSize = 8;
inline constexpr int kFrequencies = 64;
inline constexpr int kHistogramMin = -250;  // inclusive
inline constexpr int kRawBins = 500;        // support [-250, 249]
inline constexpr int kFeatureLength = 250;

using Block = Eigen::Matrix<double, kBlockSize, kBlockSize, Eigen::RowMajor>;

/// Raster index (row * 8 + col) of each zig-zag frequency 0..63.
const std::array<int, kFrequencies>& zigzag_order();

/// Orthonormal 2-D DCT-II of an 8x8 block, and its inverse.
Block dct8x8(const Block& block);
Block idct8x8(const Block& coefficients);

struct DctBlockGrid {
  std::vector<Block> blocks;  // raster order of blocks
  Index block_rows = 0;
  Index block_cols = 0;
};

/// Level-shifts an 8-bit luminance plane by -128, replicates edges up to
/// multiples of 8 and transforms every block.
DctBlockGrid block_dct(const Matrix& luma);
DctBlockGrid block_dct(const Image& image);

/// [64 x 500] counts: row f is the histogram over all blocks of the rounded
/// coefficient at zig-zag frequency f, bins -250..249, clamped at the ends.
RowMatrix coefficient_histograms(const DctBlockGrid& grid);

/// Row-wise DFT magnitude |X[k]|, k = 0..N-1.
RowMatrix fourier_enhance(const RowMatrix& rows);

enum class Sampling {
  Stride,  // take index floor(i * N / 250)
  Linear,  // linear interpolation at i * (N - 1) / 249
};

/// 64 x 250 matrix of nonnegative values, each row max-normalised to [0, 1].
class FreqFeatures {
 public:
  FreqFeatures() : values_(RowMatrix::Zero(kFrequencies, kFeatureLength)) {}
  /// Throws DimensionError unless 64 x 250, NumericError on negative or
  /// non-finite entries.
  explicit FreqFeatures(RowMatrix values);

  const RowMatrix& matrix() const { return values_; }

 private:
  RowMatrix values_;
};

/// Subsamples each row to 250 points and max-normalises it. Rows shorter
/// than 250 are a ConfigError.
FreqFeatures sample_to_250(const RowMatrix& enhanced,
                           Sampling sampling = Sampling::Stride);

/// image -> block DCT -> histograms -> Fourier magnitude -> 64 x 250.
FreqFeatures extract(const Image& image, Sampling sampling = Sampling::Stride);

}  // namespace freq

struct FreqNetConfig {
  std::array<Index, 3> filters{32, 64, 128};
  Index kernel = 3;
  Index pool = 2;
  Index shared_fc = 16;
  Index out_dim = 64;
  double dropout = 0.4;
};

/// Shared CNN over the 64 histogram rows followed by the fusing FC.
///
/// Every row goes through the same three {conv1d, batchnorm, ReLU, maxpool}
/// blocks and a 16-unit FC, giving w_0..w_63. Their concatenation is mapped
/// by a 64-unit FC (ReLU, dropout) to the physical-level feature l_0.
class FreqNet {
 public:
  FreqNet() = default;
  FreqNet(const FreqNetConfig& config, Rng& init);

  const FreqNetConfig& config() const { return config_; }

  /// feats [n x 64 x 250] -> per-row features [n x 64 x shared_fc].
  Tensor row_features(const Tensor& feats, const ForwardMode& mode);

  /// feats [n x 64 x 250] -> l_0 [n x out_dim].
  Tensor forward(const Tensor& feats, const ForwardMode& mode);

  std::vector<NamedTensor> parameters() const;
  std::vector<NamedBuffer> buffers();

 private:
  FreqNetConfig config_;
  std::array<Conv1dLayer, 3> convs_;
  std::array<BatchNorm, 3> norms_;
  Linear shared_fc_;
  Linear fuse_fc_;
};

/// Stacks feature matrices into an [n x 64 x 250] tensor.
Tensor stack_features(const std::vector<freq::FreqFeatures>& feats);

}  // namespace mvnn
