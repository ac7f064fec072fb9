#pragma once

#include <cstdint>
#include <filesystem>

#include "mvnn/data.hpp"
#include "mvnn/image.hpp"
#include "mvnn/rng.hpp"

namespace mvnn {

/// Which fake-image manipulations the generator applies. With both off the
/// fake file of a scene is a byte copy of the real one.
struct SynthKnobs {
  bool recompress = false;  // JPEG at q 60-75, decoded, re-saved at q 85-95
  bool striking = false;    // chroma boosted, luminance kept
  double chroma_boost = 3.0;
  int scenes_per_event = 4;
  int size = 224;
};

/// Unrounded RGB raster, interleaved, values in [0, 255].
struct Canvas {
  int width = 0;
  int height = 0;
  std::vector<double> rgb;
};

/// Procedural scene in layers: muted flat colours (gradient background and
/// a few shapes), a grey grain and a luma-neutral chroma jitter per pixel.
struct Scene {
  Canvas flat;
  std::vector<double> grain;
  std::vector<double> cb, cr;
};

Scene render_scene(Rng& rng, int size);

/// Flat layer, chroma-boosted when chroma_boost != 1, plus the textures.
Canvas compose(const Scene& scene, double chroma_boost = 1.0);

/// Rounds to 8 bits.
Image quantize(const Canvas& canvas);

/// Scales the Cb/Cr chroma of every pixel by up to `boost`; luma is kept.
/// The factor is limited per pixel so every channel stays a margin away from
/// the gamut edge, where JPEG decoding would clip and alter luma.
Canvas make_striking(const Canvas& canvas, double boost);

/// Encodes at q1, decodes and returns the bytes re-encoded at q2.
std::vector<std::uint8_t> double_compress(const Image& image, int q1, int q2);

/// Writes n_per_class scene pairs (one real, one fake) below out_dir/images
/// and the manifest to out_dir/manifest.jsonl. Each group of
/// scenes_per_event consecutive scenes forms one event.
Manifest synth_corpus(const std::filesystem::path& out_dir, int n_per_class,
                      std::uint64_t seed, const SynthKnobs& knobs);

}  // namespace mvnn
