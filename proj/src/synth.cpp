#include "mvnn/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "mvnn/errors.hpp"

namespace mvnn {

namespace {

using Rgb = std::array<double, 3>;

constexpr double kChromaJitter = 4.0;

Rgb hsv_to_rgb(double h, double s, double v) {
  h = (h - std::floor(h)) * 6.0;
  const int sector = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  Rgb c;
  switch (sector) {
    case 0: c = {v, t, p}; break;
    case 1: c = {q, v, p}; break;
    case 2: c = {p, v, t}; break;
    case 3: c = {p, q, v}; break;
    case 4: c = {t, p, v}; break;
    default: c = {v, p, q}; break;
  }
  for (double& x : c) x *= 255.0;
  return c;
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IngestError("cannot write " + path.string());
}

}  // namespace

Scene render_scene(Rng& rng, int size) {
  const double base_hue = rng.uniform();
  std::array<Rgb, 4> palette;
  for (Rgb& c : palette) {
    c = hsv_to_rgb(base_hue + rng.uniform(-0.15, 0.15), rng.uniform(0.08, 0.28),
                   rng.uniform(0.35, 0.9));
  }

  const double angle = rng.uniform(0, 2 * std::numbers::pi);
  const double gx = std::cos(angle), gy = std::sin(angle);
  std::vector<Rgb> canvas(static_cast<std::size_t>(size) * size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double t = 0.5 + 0.5 * ((x - size / 2.0) * gx + (y - size / 2.0) * gy) / (0.71 * size);
      Rgb& px = canvas[static_cast<std::size_t>(y) * size + x];
      for (int c = 0; c < 3; ++c) px[c] = (1 - t) * palette[0][c] + t * palette[1][c];
    }
  }

  const int shapes = 3 + static_cast<int>(rng.below(5));
  for (int s = 0; s < shapes; ++s) {
    const Rgb colour = palette[2 + rng.below(2)];
    const bool ellipse = rng.bernoulli(0.5);
    const double cx = rng.uniform(0, size), cy = rng.uniform(0, size);
    const double rx = rng.uniform(0.05, 0.3) * size, ry = rng.uniform(0.05, 0.3) * size;
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double dx = (x - cx) / rx, dy = (y - cy) / ry;
        const bool inside = ellipse ? dx * dx + dy * dy <= 1.0
                                    : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
        if (inside) canvas[static_cast<std::size_t>(y) * size + x] = colour;
      }
    }
  }

  // Grey grain (the same offset on all channels) and a small luma-neutral
  // chroma jitter. Both stay outside the striking boost, so the decoder's
  // rounding of the chroma terms leaves the same luma noise in either class.
  const double sigma = rng.uniform(2.0, 6.0);
  const double amp = rng.uniform(0.0, 10.0);
  const double fx = rng.uniform(0.02, 0.3), fy = rng.uniform(0.02, 0.3);
  const double phase = rng.uniform(0, 2 * std::numbers::pi);
  Scene scene;
  scene.flat = Canvas{size, size, std::vector<double>(canvas.size() * 3)};
  scene.grain.resize(canvas.size());
  scene.cb.resize(canvas.size());
  scene.cr.resize(canvas.size());
  for (std::size_t i = 0; i < canvas.size(); ++i) {
    const auto x = static_cast<double>(i % static_cast<std::size_t>(size));
    const auto y = static_cast<double>(i / static_cast<std::size_t>(size));
    for (int c = 0; c < 3; ++c) scene.flat.rgb[i * 3 + c] = canvas[i][c];
    scene.grain[i] = sigma * rng.normal() + amp * std::sin(fx * x + fy * y + phase);
    scene.cb[i] = kChromaJitter * rng.normal();
    scene.cr[i] = kChromaJitter * rng.normal();
  }
  return scene;
}

Canvas compose(const Scene& scene, double chroma_boost) {
  Canvas out = chroma_boost == 1.0 ? scene.flat : make_striking(scene.flat, chroma_boost);
  for (std::size_t i = 0; i < scene.grain.size(); ++i) {
    const double cb = scene.cb[i], cr = scene.cr[i];
    const Rgb chroma{1.402 * cr, -0.344136 * cb - 0.714136 * cr, 1.772 * cb};
    for (int c = 0; c < 3; ++c) {
      double& v = out.rgb[i * 3 + c];
      v = std::clamp(v + scene.grain[i] + chroma[c], 0.0, 255.0);
    }
  }
  return out;
}

Image quantize(const Canvas& canvas) {
  Image img(canvas.width, canvas.height);
  for (std::size_t i = 0; i < canvas.rgb.size(); ++i) img.rgb[i] = to_byte(canvas.rgb[i]);
  return img;
}

Canvas make_striking(const Canvas& canvas, double boost) {
  Canvas out = canvas;
  for (std::size_t i = 0; i < canvas.rgb.size(); i += 3) {
    const double r = canvas.rgb[i], g = canvas.rgb[i + 1], b = canvas.rgb[i + 2];
    const double luma = 0.299 * r + 0.587 * g + 0.114 * b;
    const double cb = -0.168736 * r - 0.331264 * g + 0.5 * b;
    const double cr = 0.5 * r - 0.418688 * g - 0.081312 * b;
    const std::array<double, 3> delta{1.402 * cr, -0.344136 * cb - 0.714136 * cr, 1.772 * cb};
    // Stay clear of the gamut edge so that decoding does not clip.
    constexpr double margin = 32.0;
    double s = boost;
    for (double d : delta) {
      if (d > 1e-9) s = std::min(s, (255.0 - margin - luma) / d);
      if (d < -1e-9) s = std::min(s, (luma - margin) / -d);
    }
    s = std::max(s, 1.0);
    for (int c = 0; c < 3; ++c) out.rgb[i + c] = luma + s * delta[c];
  }
  return out;
}

std::vector<std::uint8_t> double_compress(const Image& image, int q1, int q2) {
  const Image once = decode_jpeg(encode_jpeg(image, q1));
  return encode_jpeg(once, q2);
}

Manifest synth_corpus(const std::filesystem::path& out_dir, int n_per_class,
                      std::uint64_t seed, const SynthKnobs& knobs) {
  if (n_per_class < 1) throw UsageError("synth: n must be positive");
  if (knobs.scenes_per_event < 1) throw UsageError("synth: scenes per event must be positive");
  if (knobs.size < 8) throw UsageError("synth: image size must be at least 8");
  const std::filesystem::path images = out_dir / "images";
  std::error_code ec;
  std::filesystem::create_directories(images, ec);
  if (ec) throw IngestError("cannot create " + images.string() + ": " + ec.message());

  Manifest manifest;
  manifest.base_dir = out_dir;
  const Rng root(seed);
  for (int scene = 0; scene < n_per_class; ++scene) {
    Rng rng = root.fork(static_cast<std::uint64_t>(scene));
    const Scene layers = render_scene(rng, knobs.size);
    const Image base = quantize(compose(layers));
    const std::vector<std::uint8_t> real = encode_jpeg(base, 90);

    bool recompress = knobs.recompress, striking = knobs.striking;
    if (recompress && striking) {
      recompress = rng.bernoulli(0.5);
      striking = !recompress;
    }
    std::vector<std::uint8_t> fake;
    if (recompress) {
      const int q1 = 60 + static_cast<int>(rng.below(16));
      const int q2 = 85 + static_cast<int>(rng.below(11));
      fake = double_compress(base, q1, q2);
    } else if (striking) {
      fake = encode_jpeg(quantize(compose(layers, knobs.chroma_boost)), 90);
    } else {
      fake = real;
    }

    char name[32];
    const std::int64_t event = scene / knobs.scenes_per_event;
    std::snprintf(name, sizeof name, "%05d_real.jpg", scene);
    write_bytes(images / name, real);
    manifest.records.push_back({std::string("images/") + name, 0, event, std::nullopt});
    std::snprintf(name, sizeof name, "%05d_fake.jpg", scene);
    write_bytes(images / name, fake);
    manifest.records.push_back({std::string("images/") + name, 1, event, std::nullopt});
  }
  manifest.write(out_dir / "manifest.jsonl");
  return manifest;
}

}  // namespace mvnn
