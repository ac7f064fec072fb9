#include "mvnn/image.hpp"

#include <jpeglib.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <string>

#include "mvnn/errors.hpp"

namespace mvnn {

Image::Image(int w, int h)
    : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}

namespace {

struct JpegErrorManager {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void on_jpeg_error(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

void silence(j_common_ptr, int) {}

Image read_ppm(std::span<const std::uint8_t> bytes) {
  std::string header(bytes.begin(), bytes.begin() + std::min<std::size_t>(bytes.size(), 64));
  int w = 0, h = 0, maxval = 0, consumed = 0;
  if (std::sscanf(header.c_str(), "P6 %d %d %d%n", &w, &h, &maxval, &consumed) != 3 ||
      w <= 0 || h <= 0 || maxval != 255) {
    throw IngestError("unsupported PPM header");
  }
  const std::size_t offset = static_cast<std::size_t>(consumed) + 1;
  Image img(w, h);
  if (bytes.size() < offset + img.rgb.size()) throw IngestError("truncated PPM data");
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(offset), img.rgb.size(),
              img.rgb.begin());
  return img;
}

}  // namespace

Image decode_jpeg(std::span<const std::uint8_t> bytes) {
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = on_jpeg_error;
  err.pub.emit_message = silence;
  Image img;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw IngestError(std::string("JPEG decode failed: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  img = Image(static_cast<int>(cinfo.output_width), static_cast<int>(cinfo.output_height));
  const std::size_t stride = static_cast<std::size_t>(img.width) * 3;
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = img.rgb.data() + cinfo.output_scanline * stride;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}

std::vector<std::uint8_t> encode_jpeg(const Image& image, int quality) {
  if (image.width <= 0 || image.height <= 0) throw UsageError("encode_jpeg: empty image");
  jpeg_compress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = on_jpeg_error;
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    std::free(buffer);
    throw IngestError(std::string("JPEG encode failed: ") + err.message);
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buffer, &size);
  cinfo.image_width = static_cast<JDIMENSION>(image.width);
  cinfo.image_height = static_cast<JDIMENSION>(image.height);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, std::clamp(quality, 1, 100), TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  const std::size_t stride = static_cast<std::size_t>(image.width) * 3;
  while (cinfo.next_scanline < cinfo.image_height) {
    auto* row = const_cast<JSAMPROW>(image.rgb.data() + cinfo.next_scanline * stride);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  std::vector<std::uint8_t> out(buffer, buffer + size);
  jpeg_destroy_compress(&cinfo);
  std::free(buffer);
  return out;
}

Image read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open image " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return read_ppm(bytes);
    return decode_jpeg(bytes);
  } catch (const IngestError& e) {
    throw IngestError(path.string() + ": " + e.what());
  }
}

void write_jpeg(const std::filesystem::path& path, const Image& image,
                int quality) {
  const auto bytes = encode_jpeg(image, quality);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IngestError("write failed for " + path.string());
}

Matrix luminance(const Image& image) {
  Matrix y(image.height, image.width);
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) {
      y(r, c) = 0.299 * image.at(c, r, 0) + 0.587 * image.at(c, r, 1) +
                0.114 * image.at(c, r, 2);
    }
  }
  return y;
}

Matrix channel_plane(const Image& image, int channel) {
  Matrix p(image.height, image.width);
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) p(r, c) = image.at(c, r, channel) / 255.0;
  }
  return p;
}

namespace {

// Row i of the result holds the weights of every source sample for output
// sample i (triangle filter, pixel centres at +0.5).
Matrix resample_weights(Index in, Index out) {
  Matrix w = Matrix::Zero(out, in);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  const double support = std::max(scale, 1.0);
  for (Index i = 0; i < out; ++i) {
    const double centre = (static_cast<double>(i) + 0.5) * scale;
    const auto lo = std::max<Index>(0, static_cast<Index>(std::floor(centre - support)));
    const auto hi = std::min<Index>(in - 1, static_cast<Index>(std::ceil(centre + support)));
    double total = 0;
    for (Index j = lo; j <= hi; ++j) {
      const double d = std::abs((static_cast<double>(j) + 0.5 - centre) / support);
      if (d < 1.0) {
        w(i, j) = 1.0 - d;
        total += w(i, j);
      }
    }
    if (total > 0) {
      w.row(i) /= total;
    } else {
      // Degenerate upsample at the border: nearest source sample.
      w(i, std::clamp<Index>(static_cast<Index>(centre), 0, in - 1)) = 1.0;
    }
  }
  return w;
}

}  // namespace

Matrix resize_bilinear(const Matrix& plane, Index out_rows, Index out_cols) {
  if (out_rows <= 0 || out_cols <= 0) throw UsageError("resize to empty extent");
  if (plane.rows() == out_rows && plane.cols() == out_cols) return plane;
  const Matrix wr = resample_weights(plane.rows(), out_rows);
  const Matrix wc = resample_weights(plane.cols(), out_cols);
  return wr * plane * wc.transpose();
}

}  // namespace mvnn
