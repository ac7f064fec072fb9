#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mvnn/freqnet.hpp"
#include "mvnn/model.hpp"
#include "mvnn/pixelnet.hpp"

namespace mvnn {

enum class Split { Train = 0, Val = 1, Test = 2 };

std::string_view to_string(Split s);
/// "train" | "val" | "test"; ConfigError otherwise.
Split parse_split(std::string_view name);

struct ManifestRecord {
  std::string path;
  int label = 0;  // 1 = fake-news image
  std::optional<std::int64_t> event_id;
  std::optional<Split> split;
};

/// JSON-lines list of labelled images. Relative paths resolve against the
/// directory of the manifest file.
struct Manifest {
  std::vector<ManifestRecord> records;
  std::filesystem::path base_dir;

  /// Throws IngestError (with line number) on unreadable or malformed input.
  static Manifest read(const std::filesystem::path& path);
  static Manifest parse(std::istream& in, const std::filesystem::path& base_dir = {});
  void write(const std::filesystem::path& path) const;
  void write(std::ostream& out) const;

  /// Unique paths, binary labels, and no event shared between splits.
  /// Throws ConfigError describing the first violation.
  void validate() const;

  std::vector<std::size_t> indices(Split split) const;
  std::filesystem::path resolve(const ManifestRecord& record) const;
};

struct KMeansResult {
  std::vector<int> assignments;
  RowMatrix centroids;
  std::vector<double> inertia;  // after seeding, then after every iteration
  int iterations = 0;
  bool converged = false;
};

/// Lloyd's algorithm with k-means++ seeding. Points are rows. n < k is a
/// UsageError.
KMeansResult kmeans(const RowMatrix& points, int k, std::uint64_t seed,
                    int max_iters = 100);

struct SplitSpec {
  std::array<double, 3> ratios{0.7, 0.1, 0.2};  // train, val, test
  int n_clusters = 200;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SplitReport {
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> ratios{};
  std::size_t events = 0;
  std::vector<std::string> warnings;
};

/// Assigns whole events to splits, largest first, each to the split with
/// the largest shortfall against its target count. Records without an
/// event_id take clusters[i] (which then also becomes their event_id).
/// Fewer than three events is a UsageError. Warns when a split deviates
/// more than 5 points from its target ratio.
SplitReport event_split(Manifest& manifest, const SplitSpec& spec,
                        std::span<const int> clusters = {});

/// Clustering feature of one image: the 64 row means of its frequency
/// features followed by a 4-bin-per-channel colour histogram.
Vector event_feature(const Image& image);

/// Batches of positions 0..count-1 in an order fixed by (seed, epoch); the
/// last batch may be partial.
std::vector<std::vector<std::size_t>> make_batches(std::size_t count, Index batch_size,
                                                   std::uint64_t seed, int epoch = 0);

/// Batches of manifest record indices for one split. Empty split is a
/// UsageError.
std::vector<std::vector<std::size_t>> load_batches(const Manifest& manifest, Split split,
                                                   Index batch_size,
                                                   std::uint64_t shuffle_seed);

/// Decoded and transformed inputs of one record.
struct PreparedSample {
  std::string path;
  int label = 0;
  Vector freq;    // 64 * 250, row-major; empty when not prepared
  Vector pixels;  // 3 * s * s in [0, 1]; empty when not prepared
};

struct PreparedSet {
  std::vector<PreparedSample> samples;
  Index pixel_size = 0;
  bool has_freq = false;
  bool has_pixel = false;

  std::size_t size() const { return samples.size(); }
};

/// Worker thread count: MVNN_THREADS when set, else the hardware count.
unsigned worker_threads();

/// Decodes the given records in parallel. Throws IngestError naming the
/// offending path.
PreparedSet prepare(const Manifest& manifest, std::span<const std::size_t> records,
                    Index pixel_size, bool need_freq, bool need_pixel);
PreparedSet prepare(const Manifest& manifest, Split split, Index pixel_size,
                    bool need_freq, bool need_pixel);

/// Per-channel mean and standard deviation of the pixel planes.
PixelNorm compute_pixel_norm(const PreparedSet& set);

/// Random horizontal flip and crop-resize of [3 x s x s] planes.
void augment_planes(Vector& planes, Index size, Rng& rng);

/// Stacks samples into a network batch; pixels are standardised with
/// `norm` and augmented when `augment` is non-null.
Batch make_batch(const PreparedSet& set, std::span<const std::size_t> positions,
                 const PixelNorm& norm, Rng* augment = nullptr);

/// Frequency-feature files: "MVNF", u16 version, u32 count, then
/// count * 64 * 250 little-endian float32.
void write_freq_binary(std::ostream& out, std::span<const freq::FreqFeatures> feats);
std::vector<freq::FreqFeatures> read_freq_binary(std::istream& in);
/// One JSON object per line: {"path": ..., "features": [[...], ...]}.
void write_freq_jsonl(std::ostream& out, std::span<const std::string> paths,
                      std::span<const freq::FreqFeatures> feats);

}  // namespace mvnn
