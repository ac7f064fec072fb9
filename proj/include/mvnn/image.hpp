#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mvnn/tensor.hpp"

namespace mvnn {

/// 8-bit RGB raster, interleaved, row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int w, int h);

  std::uint8_t& at(int x, int y, int c) {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
};

/// Decodes baseline/progressive JPEG (grayscale is expanded to RGB).
/// Throws IngestError on malformed data.
Image decode_jpeg(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_jpeg(const Image& image, int quality);

/// Reads a JPEG or binary PPM (P6) file. Throws IngestError.
Image read_image(const std::filesystem::path& path);
void write_jpeg(const std::filesystem::path& path, const Image& image,
                int quality);

/// ITU-R BT.601 luma 0.299R + 0.587G + 0.114B as an [h x w] matrix.
Matrix luminance(const Image& image);

/// One channel as an [h x w] matrix scaled to [0, 1].
Matrix channel_plane(const Image& image, int channel);

/// Separable bilinear (triangle-filter) resampling. When shrinking, the
/// filter support widens with the scale factor so every source pixel
/// contributes (area-preserving); at equal size it is the identity.
Matrix resize_bilinear(const Matrix& plane, Index out_rows, Index out_cols);

}  // namespace mvnn
