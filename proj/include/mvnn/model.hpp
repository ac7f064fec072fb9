#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mvnn/freqnet.hpp"
#include "mvnn/fusion.hpp"
#include "mvnn/pixelnet.hpp"

namespace mvnn {

enum class Ablation { Full, NoFreq, NoPixel, NoAttention, NoBigru, NoBranches };

inline constexpr std::array<Ablation, 6> kAllAblations{
    Ablation::Full,        Ablation::NoFreq,  Ablation::NoPixel,
    Ablation::NoAttention, Ablation::NoBigru, Ablation::NoBranches};

/// "full", "no_freq", "no_pixel", "no_attention", "no_bigru", "no_branches".
std::string_view to_string(Ablation a);
/// Inverse of to_string; ConfigError on unknown names.
Ablation parse_ablation(std::string_view name);

bool uses_freq(Ablation a);
bool uses_pixel(Ablation a);
bool uses_bigru(Ablation a);
bool uses_attention(Ablation a);

struct ModelConfig {
  FreqNetConfig freq;
  PixelNetConfig pixel;
  Index attention_dim = 32;

  /// Layer sizes of the reference architecture (224 px input).
  static ModelConfig reference() { return {}; }
  /// Narrow layers and a 32 px pixel input for single-core experiments.
  static ModelConfig desk();

  /// l_0, every v_t and every l_t must share one width for the attention.
  void validate() const;
};

/// Network inputs for n samples.
struct Batch {
  Tensor freq;    // [n x 64 x 250], undefined when unused
  Tensor pixels;  // [n x 3 x s x s], undefined when unused
  std::vector<int> labels;

  Index size() const { return static_cast<Index>(labels.size()); }
};

struct ModelOutput {
  Tensor logits;                // [n x 2]
  Tensor probs;                 // [n x 2]
  std::optional<Tensor> alphas;  // [n x m] when attention was applied
  Tensor u;                     // classifier input
};

/// All learnable parameters of the three sub-networks for one ablation
/// variant. Components the variant removes are not built.
class MvnnModel {
 public:
  MvnnModel(const ModelConfig& config, Ablation ablation, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  Ablation ablation() const { return ablation_; }
  std::uint64_t seed() const { return seed_; }

  PixelNorm& pixel_norm() { return pixel_norm_; }
  const PixelNorm& pixel_norm() const { return pixel_norm_; }

  bool has_freq() const { return freq_.has_value(); }
  bool has_pixel() const { return pixel_.has_value(); }
  FreqNet& freq();
  PixelNet& pixel();
  const Attention& attention() const;
  const Classifier& classifier() const;

  /// l_0 [n x 64].
  Tensor freq_feature(const Batch& batch, const ForwardMode& mode);
  /// Pixel-domain vectors the variant feeds to fusion: l_1..l_4 (Bi-GRU),
  /// v_1..v_4 (no_bigru) or v_4 (no_branches).
  std::vector<Tensor> pixel_features(const Batch& batch, const ForwardMode& mode,
                                     Ablation variant);

  /// Fuses with attention, or by concatenation for no_attention, and
  /// classifies. A variant needing an absent component is a ConfigError.
  ModelOutput forward(const Batch& batch, const ForwardMode& mode, Ablation variant);
  ModelOutput forward(const Batch& batch, const ForwardMode& mode) {
    return forward(batch, mode, ablation_);
  }

  /// Inference-mode forward unpacked per sample.
  std::vector<FusedOutput> predict(const Batch& batch);

  std::vector<NamedTensor> parameters() const;
  std::vector<NamedBuffer> buffers();

 private:
  ModelConfig config_;
  Ablation ablation_;
  std::uint64_t seed_;
  PixelNorm pixel_norm_;
  std::optional<FreqNet> freq_;
  std::optional<PixelNet> pixel_;
  std::optional<Attention> attention_;
  Classifier classifier_;
};

}  // namespace mvnn
