#include "mvnn/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "mvnn/errors.hpp"

namespace mvnn {

using nlohmann::json;

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw ConfigError("unknown split '" + std::string(name) + "'");
}

// ---------------------------------------------------------------- manifest

Manifest Manifest::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open manifest " + path.string());
  try {
    return parse(in, path.parent_path());
  } catch (const IngestError& e) {
    throw IngestError(path.string() + ": " + e.what());
  }
}

Manifest Manifest::parse(std::istream& in, const std::filesystem::path& base_dir) {
  Manifest m;
  m.base_dir = base_dir;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      ManifestRecord r;
      r.path = j.at("path").get<std::string>();
      r.label = j.at("label").get<int>();
      if (j.contains("event_id") && !j.at("event_id").is_null()) {
        r.event_id = j.at("event_id").get<std::int64_t>();
      }
      if (j.contains("split") && !j.at("split").is_null()) {
        r.split = parse_split(j.at("split").get<std::string>());
      }
      m.records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw IngestError("manifest line " + std::to_string(number) + ": " + e.what());
    } catch (const ConfigError& e) {
      throw IngestError("manifest line " + std::to_string(number) + ": " + e.what());
    }
  }
  return m;
}

void Manifest::write(std::ostream& out) const {
  for (const ManifestRecord& r : records) {
    json j;
    j["path"] = r.path;
    j["label"] = r.label;
    if (r.event_id) j["event_id"] = *r.event_id;
    if (r.split) j["split"] = std::string(to_string(*r.split));
    out << j.dump() << '\n';
  }
}

void Manifest::write(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IngestError("cannot write manifest " + path.string());
  write(out);
  if (!out) throw IngestError("write failed for " + path.string());
}

void Manifest::validate() const {
  std::set<std::string> paths;
  std::map<std::int64_t, Split> event_split_of;
  for (const ManifestRecord& r : records) {
    if (!paths.insert(r.path).second) throw ConfigError("duplicate manifest path " + r.path);
    if (r.label != 0 && r.label != 1) {
      throw ConfigError("label of " + r.path + " is not 0 or 1");
    }
    if (r.split && r.event_id) {
      auto [it, inserted] = event_split_of.emplace(*r.event_id, *r.split);
      if (!inserted && it->second != *r.split) {
        throw ConfigError("event " + std::to_string(*r.event_id) + " appears in both " +
                          std::string(to_string(it->second)) + " and " +
                          std::string(to_string(*r.split)));
      }
    }
  }
}

std::vector<std::size_t> Manifest::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].split == split) out.push_back(i);
  }
  return out;
}

std::filesystem::path Manifest::resolve(const ManifestRecord& record) const {
  const std::filesystem::path p(record.path);
  if (p.is_absolute() || base_dir.empty()) return p;
  return base_dir / p;
}

// ------------------------------------------------------------------ kmeans

namespace {

double squared_distance(const RowMatrix& a, Index i, const RowMatrix& b, Index j) {
  return (a.row(i) - b.row(j)).squaredNorm();
}

}  // namespace

KMeansResult kmeans(const RowMatrix& points, int k, std::uint64_t seed, int max_iters) {
  const Index n = points.rows();
  if (k < 1) throw UsageError("kmeans: k must be positive");
  if (n < k) {
    throw UsageError("kmeans: " + std::to_string(n) + " points cannot form " +
                     std::to_string(k) + " clusters");
  }
  Rng rng(seed);
  KMeansResult result;
  result.centroids.resize(k, points.cols());

  // k-means++ seeding.
  std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  Index first = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
  result.centroids.row(0) = points.row(first);
  for (int c = 1; c < k; ++c) {
    double total = 0;
    for (Index i = 0; i < n; ++i) {
      auto& d = d2[static_cast<std::size_t>(i)];
      d = std::min(d, squared_distance(points, i, result.centroids, c - 1));
      total += d;
    }
    Index pick = 0;
    if (total > 0) {
      double target = rng.uniform() * total;
      pick = n - 1;
      for (Index i = 0; i < n; ++i) {
        target -= d2[static_cast<std::size_t>(i)];
        if (target < 0 && d2[static_cast<std::size_t>(i)] > 0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
    }
    result.centroids.row(c) = points.row(pick);
  }

  auto assign = [&](std::vector<int>& labels) {
    double inertia = 0;
    for (Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = squared_distance(points, i, result.centroids, 0);
      for (int c = 1; c < k; ++c) {
        const double d = squared_distance(points, i, result.centroids, c);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      labels[static_cast<std::size_t>(i)] = best;
      inertia += best_d;
    }
    return inertia;
  };

  result.assignments.assign(static_cast<std::size_t>(n), 0);
  result.inertia.push_back(assign(result.assignments));
  for (int iter = 0; iter < max_iters; ++iter) {
    RowMatrix sums = RowMatrix::Zero(k, points.cols());
    std::vector<Index> counts(static_cast<std::size_t>(k), 0);
    for (Index i = 0; i < n; ++i) {
      const int c = result.assignments[static_cast<std::size_t>(i)];
      sums.row(c) += points.row(i);
      ++counts[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < k; ++c) {
      // An emptied cluster keeps its previous centroid.
      if (counts[static_cast<std::size_t>(c)] > 0) {
        result.centroids.row(c) =
            sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
      }
    }
    std::vector<int> next(static_cast<std::size_t>(n));
    result.inertia.push_back(assign(next));
    result.iterations = iter + 1;
    const bool stable = next == result.assignments;
    result.assignments = std::move(next);
    if (stable) {
      result.converged = true;
      break;
    }
  }
  return result;
}

// ------------------------------------------------------------------- split

void SplitSpec::validate() const {
  double total = 0;
  for (double r : ratios) {
    if (!(r > 0)) throw ConfigError("split ratios must be positive");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  if (n_clusters < 1) throw ConfigError("cluster count must be positive");
}

SplitReport event_split(Manifest& manifest, const SplitSpec& spec,
                        std::span<const int> clusters) {
  spec.validate();
  std::map<std::int64_t, std::vector<std::size_t>> events;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    ManifestRecord& r = manifest.records[i];
    if (!r.event_id) {
      if (i >= clusters.size()) {
        throw UsageError("record " + r.path + " has neither an event_id nor a cluster");
      }
      r.event_id = clusters[i];
    }
    events[*r.event_id].push_back(i);
  }
  if (events.size() < 3) {
    throw UsageError("event_split: " + std::to_string(events.size()) +
                     " events cannot fill three splits");
  }
  std::vector<std::pair<std::int64_t, std::size_t>> order;  // (event, size)
  for (const auto& [id, members] : events) order.emplace_back(id, members.size());
  std::stable_sort(order.begin(), order.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  const auto total = static_cast<double>(manifest.records.size());
  SplitReport report;
  report.events = events.size();
  for (const auto& [id, size] : order) {
    std::size_t target = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < 3; ++s) {
      const double shortfall = spec.ratios[s] * total - static_cast<double>(report.counts[s]);
      if (shortfall > best) {
        best = shortfall;
        target = s;
      }
    }
    report.counts[target] += size;
    for (std::size_t i : events[id]) {
      manifest.records[i].split = static_cast<Split>(target);
    }
  }
  for (std::size_t s = 0; s < 3; ++s) {
    report.ratios[s] = static_cast<double>(report.counts[s]) / total;
    if (std::abs(report.ratios[s] - spec.ratios[s]) > 0.05) {
      std::ostringstream msg;
      msg << "split " << to_string(static_cast<Split>(s)) << " holds "
          << report.ratios[s] << " of the records, target " << spec.ratios[s];
      report.warnings.push_back(msg.str());
    }
  }
  return report;
}

Vector event_feature(const Image& image) {
  const freq::FreqFeatures f = freq::extract(image);
  Vector out(freq::kFrequencies + 12);
  out.head(freq::kFrequencies) = f.matrix().rowwise().mean();
  Vector hist = Vector::Zero(12);
  for (std::size_t i = 0; i < image.rgb.size(); ++i) {
    const auto channel = static_cast<Index>(i % 3);
    hist[channel * 4 + image.rgb[i] / 64] += 1.0;
  }
  out.tail(12) = hist / static_cast<double>(image.width) / image.height;
  return out;
}

// ----------------------------------------------------------------- batches

std::vector<std::vector<std::size_t>> make_batches(std::size_t count, Index batch_size,
                                                   std::uint64_t seed, int epoch) {
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = Rng(seed).fork(static_cast<std::uint64_t>(epoch));
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> batches;
  const auto step = static_cast<std::size_t>(batch_size);
  for (std::size_t start = 0; start < count; start += step) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(count, start + step)));
  }
  return batches;
}

std::vector<std::vector<std::size_t>> load_batches(const Manifest& manifest, Split split,
                                                   Index batch_size,
                                                   std::uint64_t shuffle_seed) {
  const std::vector<std::size_t> members = manifest.indices(split);
  if (members.empty()) {
    throw UsageError("split " + std::string(to_string(split)) + " is empty");
  }
  auto batches = make_batches(members.size(), batch_size, shuffle_seed);
  for (auto& b : batches) {
    for (std::size_t& i : b) i = members[i];
  }
  return batches;
}

// ----------------------------------------------------------- preparation

unsigned worker_threads() {
  if (const char* env = std::getenv("MVNN_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return static_cast<unsigned>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

PreparedSet prepare(const Manifest& manifest, std::span<const std::size_t> records,
                    Index pixel_size, bool need_freq, bool need_pixel) {
  PreparedSet set;
  set.pixel_size = pixel_size;
  set.has_freq = need_freq;
  set.has_pixel = need_pixel;
  set.samples.resize(records.size());
  std::vector<std::exception_ptr> errors(records.size());

  auto work = [&](std::size_t worker, std::size_t stride) {
    for (std::size_t i = worker; i < records.size(); i += stride) {
      try {
        const ManifestRecord& r = manifest.records.at(records[i]);
        PreparedSample& s = set.samples[i];
        s.path = r.path;
        s.label = r.label;
        const Image img = read_image(manifest.resolve(r));
        if (need_freq) {
          const freq::FreqFeatures f = freq::extract(img);
          s.freq = Eigen::Map<const Vector>(f.matrix().data(), f.matrix().size());
        }
        if (need_pixel) s.pixels = pixel_planes(img, pixel_size);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min<std::size_t>(worker_threads(), std::max<std::size_t>(records.size(), 1));
  if (threads <= 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return set;
}

PreparedSet prepare(const Manifest& manifest, Split split, Index pixel_size,
                    bool need_freq, bool need_pixel) {
  const auto members = manifest.indices(split);
  return prepare(manifest, members, pixel_size, need_freq, need_pixel);
}

PixelNorm compute_pixel_norm(const PreparedSet& set) {
  PixelNorm norm;
  if (!set.has_pixel || set.samples.empty()) return norm;
  const Index plane = set.pixel_size * set.pixel_size;
  for (int c = 0; c < 3; ++c) {
    double s = 0, s2 = 0;
    for (const PreparedSample& p : set.samples) {
      const auto seg = p.pixels.segment(c * plane, plane);
      s += seg.sum();
      s2 += seg.squaredNorm();
    }
    const double count = static_cast<double>(plane) * static_cast<double>(set.samples.size());
    const double mu = s / count;
    const double var = std::max(s2 / count - mu * mu, 0.0);
    norm.mean[static_cast<std::size_t>(c)] = mu;
    norm.stddev[static_cast<std::size_t>(c)] = var > 1e-12 ? std::sqrt(var) : 1.0;
  }
  return norm;
}

void augment_planes(Vector& planes, Index size, Rng& rng) {
  const bool flip = rng.bernoulli(0.5);
  const double frac = rng.uniform(0.85, 1.0);
  const Index crop = std::max<Index>(1, static_cast<Index>(std::round(frac * static_cast<double>(size))));
  const auto y0 = static_cast<Index>(rng.below(static_cast<std::uint64_t>(size - crop + 1)));
  const auto x0 = static_cast<Index>(rng.below(static_cast<std::uint64_t>(size - crop + 1)));
  const Index plane = size * size;
  for (int c = 0; c < 3; ++c) {
    Eigen::Map<RowMatrix> p(planes.data() + c * plane, size, size);
    Matrix m = p.block(y0, x0, crop, crop);
    if (flip) m = m.rowwise().reverse().eval();
    p = resize_bilinear(m, size, size);
  }
}

Batch make_batch(const PreparedSet& set, std::span<const std::size_t> positions,
                 const PixelNorm& norm, Rng* augment) {
  if (positions.empty()) throw UsageError("make_batch: no samples");
  const auto n = static_cast<Index>(positions.size());
  Batch b;
  b.labels.reserve(positions.size());
  constexpr Index per_freq = freq::kFrequencies * freq::kFeatureLength;
  const Index s = set.pixel_size;
  Vector fdata, pdata;
  if (set.has_freq) fdata.resize(n * per_freq);
  if (set.has_pixel) pdata.resize(n * 3 * s * s);
  for (Index i = 0; i < n; ++i) {
    const PreparedSample& sample = set.samples.at(positions[static_cast<std::size_t>(i)]);
    b.labels.push_back(sample.label);
    if (set.has_freq) fdata.segment(i * per_freq, per_freq) = sample.freq;
    if (set.has_pixel) {
      Vector planes = sample.pixels;
      if (augment != nullptr) augment_planes(planes, s, *augment);
      standardize(planes, norm);
      pdata.segment(i * 3 * s * s, 3 * s * s) = planes;
    }
  }
  if (set.has_freq) b.freq = Tensor({n, freq::kFrequencies, freq::kFeatureLength}, std::move(fdata));
  if (set.has_pixel) b.pixels = Tensor({n, 3, s, s}, std::move(pdata));
  return b;
}

// ------------------------------------------------------ feature files

namespace {

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(std::endian::native == std::endian::little, "little-endian host expected");
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw IngestError("truncated feature file");
  return value;
}

}  // namespace

void write_freq_binary(std::ostream& out, std::span<const freq::FreqFeatures> feats) {
  out.write("MVNF", 4);
  put_le<std::uint16_t>(out, 1);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(feats.size()));
  for (const auto& f : feats) {
    const RowMatrix& m = f.matrix();
    for (Index i = 0; i < m.size(); ++i) put_le<float>(out, static_cast<float>(m.data()[i]));
  }
}

std::vector<freq::FreqFeatures> read_freq_binary(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "MVNF") throw IngestError("not an MVNF feature file");
  const auto version = get_le<std::uint16_t>(in);
  if (version != 1) throw IngestError("unsupported MVNF version " + std::to_string(version));
  const auto count = get_le<std::uint32_t>(in);
  std::vector<freq::FreqFeatures> out;
  out.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    RowMatrix m(freq::kFrequencies, freq::kFeatureLength);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = get_le<float>(in);
    out.emplace_back(std::move(m));
  }
  return out;
}

void write_freq_jsonl(std::ostream& out, std::span<const std::string> paths,
                      std::span<const freq::FreqFeatures> feats) {
  for (std::size_t i = 0; i < feats.size(); ++i) {
    json j;
    j["path"] = i < paths.size() ? paths[i] : std::string();
    json rows = json::array();
    const RowMatrix& m = feats[i].matrix();
    for (Index r = 0; r < m.rows(); ++r) {
      rows.push_back(std::vector<double>(m.row(r).data(), m.row(r).data() + m.cols()));
    }
    j["features"] = std::move(rows);
    out << j.dump() << '\n';
  }
}

}  // namespace mvnn
