#include "mvnn/pixelnet.hpp"

#include "mvnn/errors.hpp"

namespace mvnn {

Vector pixel_planes(const Image& image, Index size) {
  if (image.width <= 0 || image.height <= 0) throw IngestError("empty image");
  Vector out(3 * size * size);
  for (int c = 0; c < 3; ++c) {
    const Matrix plane = resize_bilinear(channel_plane(image, c), size, size);
    // Row-major copy of the plane.
    for (Index r = 0; r < size; ++r) {
      out.segment(c * size * size + r * size, size) = plane.row(r).transpose();
    }
  }
  return out;
}

void standardize(Vector& planes, const PixelNorm& norm) {
  const Index plane = planes.size() / 3;
  for (int c = 0; c < 3; ++c) {
    const auto i = static_cast<std::size_t>(c);
    planes.segment(c * plane, plane).array() -= norm.mean[i];
    planes.segment(c * plane, plane) /= norm.stddev[i];
  }
}

Tensor pixel_preprocess(const Image& image, Index size, const PixelNorm& norm) {
  Vector planes = pixel_planes(image, size);
  standardize(planes, norm);
  return Tensor({3, size, size}, std::move(planes));
}

GruCell::GruCell(Index input, Index hidden, Rng& init)
    : w_r(glorot_uniform({hidden, input + hidden}, input + hidden, hidden, init)),
      b_r(Tensor::zeros({hidden}, true)),
      w_z(glorot_uniform({hidden, input + hidden}, input + hidden, hidden, init)),
      b_z(Tensor::zeros({hidden}, true)),
      w_h(glorot_uniform({hidden, input + hidden}, input + hidden, hidden, init)),
      b_h(Tensor::zeros({hidden}, true)) {}

GruState GruCell::step(const Tensor& v, const Tensor& h_prev) const {
  if (v.rank() != 2 || h_prev.rank() != 2 || v.dim(0) != h_prev.dim(0) ||
      v.dim(1) != input() || h_prev.dim(1) != hidden()) {
    throw DimensionError("gru_step: input " + to_string(v.shape()) + " and state " +
                         to_string(h_prev.shape()) + " do not fit a cell with input " +
                         std::to_string(input()) + ", hidden " +
                         std::to_string(hidden()));
  }
  GruState s;
  const Tensor joined = concat({v, h_prev}, 1);
  s.r = sigmoid(linear(joined, w_r, b_r));
  s.z = sigmoid(linear(joined, w_z, b_z));
  s.h_candidate = tanh(linear(concat({v, mul(s.r, h_prev)}, 1), w_h, b_h));
  s.h = add(mul(rsub(1.0, s.z), h_prev), mul(s.z, s.h_candidate));
  return s;
}

void GruCell::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".w_r", w_r});
  out.push_back({prefix + ".b_r", b_r});
  out.push_back({prefix + ".w_z", w_z});
  out.push_back({prefix + ".b_z", b_z});
  out.push_back({prefix + ".w_h", w_h});
  out.push_back({prefix + ".b_h", b_h});
}

BiGru::BiGru(Index input, Index hidden, Rng& init)
    : forward_cell(input, hidden, init), backward_cell(input, hidden, init) {}

std::vector<Tensor> BiGru::forward(const std::vector<Tensor>& sequence) const {
  if (sequence.size() != kBranches) {
    throw DimensionError("bigru_forward: expected a sequence of 4, got " +
                         std::to_string(sequence.size()));
  }
  const Index n = sequence.front().dim(0);
  std::array<Tensor, kBranches> fwd, bwd;
  Tensor h = Tensor::zeros({n, forward_cell.hidden()});
  for (int t = 0; t < kBranches; ++t) {
    h = forward_cell.step(sequence[static_cast<std::size_t>(t)], h).h;
    fwd[static_cast<std::size_t>(t)] = h;
  }
  h = Tensor::zeros({n, backward_cell.hidden()});
  for (int t = kBranches - 1; t >= 0; --t) {
    h = backward_cell.step(sequence[static_cast<std::size_t>(t)], h).h;
    bwd[static_cast<std::size_t>(t)] = h;
  }
  std::vector<Tensor> out;
  for (std::size_t t = 0; t < kBranches; ++t) out.push_back(concat({fwd[t], bwd[t]}, 1));
  return out;
}

void BiGru::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  forward_cell.collect(prefix + ".forward", out);
  backward_cell.collect(prefix + ".backward", out);
}

PixelNet::PixelNet(const PixelNetConfig& config, std::array<bool, kBranches> taps,
                   bool with_bigru, Rng& init)
    : config_(config) {
  if (with_bigru && !(taps[0] && taps[1] && taps[2] && taps[3])) {
    throw ConfigError("the Bi-GRU needs all four branch taps");
  }
  Index channels = 3;
  Index side = config.input_size;
  for (int i = 0; i < kBranches; ++i) {
    const auto u = static_cast<std::size_t>(i);
    const Index width = config.widths[u];
    blocks_[u].conv3 = Conv2dLayer(channels, width, 3, init);
    blocks_[u].conv1 = Conv2dLayer(width, width, 1, init);
    channels = width;
    side /= 2;
    if (side < 1) throw ConfigError("pixel input too small for four pooling stages");
    if (taps[u]) {
      Tap tap;
      tap.reduce = Conv2dLayer(width, config.tap_channels, 1, init);
      tap.fc = Linear(config.tap_channels * side * side, config.branch_dim, Init::He, init);
      taps_[u] = std::move(tap);
    }
  }
  if (with_bigru) bigru_.emplace(config.branch_dim, config.gru_hidden, init);
}

bool PixelNet::has_tap(int t) const {
  return t >= 1 && t <= kBranches && taps_[static_cast<std::size_t>(t - 1)].has_value();
}

const BiGru& PixelNet::bigru() const {
  if (!bigru_) throw ConfigError("pixel network has no Bi-GRU");
  return *bigru_;
}

void PixelNet::drop_tap(int t) {
  if (t < 1 || t > kBranches) throw UsageError("tap index must be 1..4");
  taps_[static_cast<std::size_t>(t - 1)].reset();
}

void PixelNet::check_input(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != config_.input_size ||
      x.dim(3) != config_.input_size) {
    throw DimensionError("pixel network expects [n x 3 x " +
                         std::to_string(config_.input_size) + " x " +
                         std::to_string(config_.input_size) + "], got " +
                         to_string(x.shape()));
  }
}

Tensor PixelNet::run_block(int index, const Tensor& x) const {
  const Block& b = blocks_[static_cast<std::size_t>(index)];
  return maxpool2d(relu(b.conv1(relu(b.conv3(x)))), 2, 2);
}

Tensor PixelNet::run_tap(int index, const Tensor& block_out,
                         const ForwardMode& mode) const {
  const auto& tap = taps_[static_cast<std::size_t>(index)];
  if (!tap) {
    throw ConfigError("branch tap " + std::to_string(index + 1) +
                      " is required but has no parameters");
  }
  const Tensor reduced = relu(tap->reduce(block_out));
  const Index n = reduced.dim(0);
  const Tensor flat = reduced.reshape({n, reduced.size() / n});
  return dropout(relu(tap->fc(flat)), config_.dropout, mode);
}

std::vector<Tensor> PixelNet::branch_forward(const Tensor& x, const ForwardMode& mode,
                                             const std::vector<int>& taps) {
  check_input(x);
  for (int t : taps) {
    if (t < 1 || t > kBranches) throw UsageError("tap index must be 1..4");
    if (!has_tap(t)) {
      throw ConfigError("branch tap " + std::to_string(t) +
                        " is required but has no parameters");
    }
  }
  int deepest = 0;
  for (int t : taps) deepest = std::max(deepest, t);
  std::array<Tensor, kBranches> outputs;
  Tensor h = x;
  for (int i = 0; i < deepest; ++i) {
    h = run_block(i, h);
    outputs[static_cast<std::size_t>(i)] = h;
  }
  std::vector<Tensor> v;
  for (int t : taps) v.push_back(run_tap(t - 1, outputs[static_cast<std::size_t>(t - 1)], mode));
  return v;
}

Tensor PixelNet::truncated_forward(const Tensor& x, int t, const ForwardMode& mode) {
  check_input(x);
  if (t < 1 || t > kBranches) throw UsageError("tap index must be 1..4");
  Tensor h = x;
  for (int i = 0; i < t; ++i) h = run_block(i, h);
  return run_tap(t - 1, h, mode);
}

std::vector<Tensor> PixelNet::forward(const Tensor& x, const ForwardMode& mode) {
  return bigru().forward(branch_forward(x, mode));
}

std::vector<NamedTensor> PixelNet::parameters() const {
  std::vector<NamedTensor> out;
  for (int i = 0; i < kBranches; ++i) {
    const auto u = static_cast<std::size_t>(i);
    const std::string id = std::to_string(i + 1);
    blocks_[u].conv3.collect("pixel.block" + id + ".conv3x3", out);
    blocks_[u].conv1.collect("pixel.block" + id + ".conv1x1", out);
    if (taps_[u]) {
      taps_[u]->reduce.collect("pixel.tap" + id + ".conv1x1", out);
      taps_[u]->fc.collect("pixel.tap" + id + ".fc", out);
    }
  }
  if (bigru_) bigru_->collect("pixel.bigru", out);
  return out;
}

}  // namespace mvnn
