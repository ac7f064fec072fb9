#pragma once

#include <array>
#include <optional>
#include <vector>

#include "mvnn/image.hpp"
#include "mvnn/nn.hpp"

namespace mvnn {

inline constexpr int kBranches = 4;

struct PixelNetConfig {
  Index input_size = 224;
  std::array<Index, kBranches> widths{32, 64, 128, 128};
  Index tap_channels = 16;
  Index branch_dim = 64;
  double dropout = 0.5;
  Index gru_hidden = 32;
};

/// Per-channel standardisation constants of the pixel input.
struct PixelNorm {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> stddev{1.0, 1.0, 1.0};
};

/// Resized RGB planes in [0, 1], flattened as [3 x size x size].
Vector pixel_planes(const Image& image, Index size);

/// (planes - mean) / stddev per channel, in place.
void standardize(Vector& planes, const PixelNorm& norm);

/// Bilinear resize to size x size, scale to [0, 1], standardise.
Tensor pixel_preprocess(const Image& image, Index size, const PixelNorm& norm);

/// Gate activations of one GRU step, kept for inspection.
struct GruState {
  Tensor r;            // reset gate
  Tensor z;            // update gate
  Tensor h_candidate;  // tanh candidate
  Tensor h;            // new hidden state
};

/// GRU cell on concatenated inputs:
///   r = sigmoid(W_r [v, h] + b_r)
///   z = sigmoid(W_z [v, h] + b_z)
///   h~ = tanh(W_h [v, r * h] + b_h)
///   h' = (1 - z) * h + z * h~
struct GruCell {
  Tensor w_r, b_r, w_z, b_z, w_h, b_h;  // W: [hidden x (in + hidden)]

  GruCell() = default;
  GruCell(Index input, Index hidden, Rng& init);

  Index hidden() const { return b_r.size(); }
  Index input() const { return w_r.dim(1) - hidden(); }

  /// v [n x input], h_prev [n x hidden].
  GruState step(const Tensor& v, const Tensor& h_prev) const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

/// Two GRUs reading the branch sequence in opposite directions from zero
/// state; output t is [forward h_t, backward h_t].
struct BiGru {
  GruCell forward_cell;
  GruCell backward_cell;

  BiGru() = default;
  BiGru(Index input, Index hidden, Rng& init);

  /// Sequence of exactly 4 tensors [n x input] -> 4 tensors [n x 2 hidden].
  std::vector<Tensor> forward(const std::vector<Tensor>& sequence) const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

/// Multi-branch CNN: four {3x3 conv, 1x1 conv, 2x2 maxpool} blocks, each
/// with a tap {1x1 conv, flatten, FC, dropout} producing v_t.
class PixelNet {
 public:
  PixelNet() = default;
  /// `taps[t]` selects whether tap t+1 is built; `with_bigru` adds the
  /// bidirectional GRU over the four tap outputs.
  PixelNet(const PixelNetConfig& config, std::array<bool, kBranches> taps,
           bool with_bigru, Rng& init);

  const PixelNetConfig& config() const { return config_; }
  bool has_tap(int t) const;
  bool has_bigru() const { return bigru_.has_value(); }
  const BiGru& bigru() const;

  /// Removes tap t (1-based) and its parameters.
  void drop_tap(int t);

  /// Runs the blocks once and returns v_t for each requested tap (1-based).
  /// A requested tap that was not built is a ConfigError.
  std::vector<Tensor> branch_forward(const Tensor& x, const ForwardMode& mode,
                                     const std::vector<int>& taps = {1, 2, 3, 4});

  /// Blocks 1..t followed by tap t, without touching later blocks.
  Tensor truncated_forward(const Tensor& x, int t, const ForwardMode& mode);

  /// Semantic features l_1..l_4 (branch outputs through the Bi-GRU).
  std::vector<Tensor> forward(const Tensor& x, const ForwardMode& mode);

  std::vector<NamedTensor> parameters() const;

 private:
  struct Block {
    Conv2dLayer conv3;
    Conv2dLayer conv1;
  };
  struct Tap {
    Conv2dLayer reduce;
    Linear fc;
  };

  Tensor run_block(int index, const Tensor& x) const;
  Tensor run_tap(int index, const Tensor& block_out, const ForwardMode& mode) const;
  void check_input(const Tensor& x) const;

  PixelNetConfig config_;
  std::array<Block, kBranches> blocks_;
  std::array<std::optional<Tap>, kBranches> taps_;
  std::optional<BiGru> bigru_;
};

}  // namespace mvnn
