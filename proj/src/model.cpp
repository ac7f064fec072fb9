#include "mvnn/model.hpp"

#include "mvnn/errors.hpp"

namespace mvnn {

std::string_view to_string(Ablation a) {
  switch (a) {
    case Ablation::Full: return "full";
    case Ablation::NoFreq: return "no_freq";
    case Ablation::NoPixel: return "no_pixel";
    case Ablation::NoAttention: return "no_attention";
    case Ablation::NoBigru: return "no_bigru";
    case Ablation::NoBranches: return "no_branches";
  }
  return "full";
}

Ablation parse_ablation(std::string_view name) {
  for (Ablation a : kAllAblations) {
    if (to_string(a) == name) return a;
  }
  throw ConfigError("unknown ablation variant '" + std::string(name) + "'");
}

bool uses_freq(Ablation a) { return a != Ablation::NoFreq; }
bool uses_pixel(Ablation a) { return a != Ablation::NoPixel; }
bool uses_bigru(Ablation a) {
  return a == Ablation::Full || a == Ablation::NoFreq || a == Ablation::NoAttention;
}
bool uses_attention(Ablation a) {
  return a != Ablation::NoPixel && a != Ablation::NoAttention;
}

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.freq.filters = {4, 8, 16};
  c.pixel.input_size = 32;
  c.pixel.widths = {8, 16, 32, 32};
  c.pixel.tap_channels = 4;
  return c;
}

void ModelConfig::validate() const {
  if (freq.out_dim != pixel.branch_dim || pixel.branch_dim != 2 * pixel.gru_hidden) {
    throw ConfigError("l_0 width, branch width and 2 x GRU hidden size must agree");
  }
  if (freq.kernel < 1 || freq.pool < 1 || freq.shared_fc < 1 || attention_dim < 1 ||
      pixel.tap_channels < 1) {
    throw ConfigError("layer sizes must be positive");
  }
  if (!(freq.dropout >= 0 && freq.dropout < 1 && pixel.dropout >= 0 &&
        pixel.dropout < 1)) {
    throw ConfigError("dropout rates must lie in [0, 1)");
  }
}

namespace {

Index classifier_width(const ModelConfig& c, Ablation a) {
  if (a != Ablation::NoAttention) return c.freq.out_dim;
  return c.freq.out_dim + kBranches * 2 * c.pixel.gru_hidden;
}

}  // namespace

MvnnModel::MvnnModel(const ModelConfig& config, Ablation ablation, std::uint64_t seed)
    : config_(config), ablation_(ablation), seed_(seed) {
  config_.validate();
  // Each component draws from its own stream so that ablated models share
  // the initial weights of the components they keep.
  const Rng root(seed);
  if (uses_freq(ablation)) {
    Rng init = root.fork(1);
    freq_.emplace(config_.freq, init);
  }
  if (uses_pixel(ablation)) {
    Rng init = root.fork(2);
    const bool all_taps = ablation != Ablation::NoBranches;
    pixel_.emplace(config_.pixel,
                   std::array<bool, kBranches>{all_taps, all_taps, all_taps, true},
                   uses_bigru(ablation), init);
  }
  if (uses_attention(ablation)) {
    Rng init = root.fork(3);
    attention_.emplace(config_.freq.out_dim, config_.attention_dim, init);
  }
  Rng init = root.fork(4);
  classifier_ = Classifier(classifier_width(config_, ablation), init);
}

FreqNet& MvnnModel::freq() {
  if (!freq_) throw ConfigError("model has no frequency-domain sub-network");
  return *freq_;
}

PixelNet& MvnnModel::pixel() {
  if (!pixel_) throw ConfigError("model has no pixel-domain sub-network");
  return *pixel_;
}

const Attention& MvnnModel::attention() const {
  if (!attention_) throw ConfigError("model has no attention parameters");
  return *attention_;
}

const Classifier& MvnnModel::classifier() const { return classifier_; }

Tensor MvnnModel::freq_feature(const Batch& batch, const ForwardMode& mode) {
  if (!batch.freq.defined()) throw UsageError("batch carries no frequency features");
  return freq().forward(batch.freq, mode);
}

std::vector<Tensor> MvnnModel::pixel_features(const Batch& batch, const ForwardMode& mode,
                                              Ablation variant) {
  if (!batch.pixels.defined()) throw UsageError("batch carries no pixel input");
  PixelNet& net = pixel();
  if (variant == Ablation::NoBranches) return net.branch_forward(batch.pixels, mode, {4});
  if (!uses_bigru(variant)) return net.branch_forward(batch.pixels, mode);
  return net.forward(batch.pixels, mode);
}

ModelOutput MvnnModel::forward(const Batch& batch, const ForwardMode& mode,
                               Ablation variant) {
  if (uses_freq(variant) && !freq_) {
    throw ConfigError(std::string("variant ") + std::string(to_string(variant)) +
                      " needs the frequency-domain sub-network");
  }
  if (uses_pixel(variant) && !pixel_) {
    throw ConfigError(std::string("variant ") + std::string(to_string(variant)) +
                      " needs the pixel-domain sub-network");
  }
  if (uses_bigru(variant) && !pixel_->has_bigru()) {
    throw ConfigError(std::string("variant ") + std::string(to_string(variant)) +
                      " needs the Bi-GRU");
  }
  if (uses_attention(variant) && !attention_) {
    throw ConfigError(std::string("variant ") + std::string(to_string(variant)) +
                      " needs attention parameters");
  }
  if (classifier_.input_dim() != classifier_width(config_, variant)) {
    throw ConfigError(std::string("classifier head does not fit variant ") +
                      std::string(to_string(variant)));
  }

  std::vector<Tensor> features;
  if (uses_freq(variant)) features.push_back(freq_feature(batch, mode));
  if (uses_pixel(variant)) {
    for (Tensor& t : pixel_features(batch, mode, variant)) features.push_back(std::move(t));
  }

  ModelOutput out;
  if (variant == Ablation::NoPixel) {
    out.u = features.front();
  } else if (variant == Ablation::NoAttention) {
    out.u = concat(features, 1);
  } else {
    Attention::Result r = (*attention_)(features);
    out.u = r.u;
    out.alphas = r.alphas;
  }
  out.logits = classifier_.logits(out.u);
  out.probs = softmax(out.logits);
  return out;
}

std::vector<FusedOutput> MvnnModel::predict(const Batch& batch) {
  NoGradGuard guard;
  const ModelOutput out = forward(batch, ForwardMode::inference());
  std::vector<FusedOutput> results;
  const Index n = out.probs.dim(0);
  const Index d = out.u.dim(1);
  for (Index i = 0; i < n; ++i) {
    FusedOutput f;
    f.p = out.probs.data().segment(2 * i, 2);
    f.u = out.u.data().segment(i * d, d);
    if (out.alphas) {
      const Index m = out.alphas->dim(1);
      f.alphas = out.alphas->data().segment(i * m, m);
    }
    f.predicted_label = predict_label(f.p[1]);
    results.push_back(std::move(f));
  }
  return results;
}

std::vector<NamedTensor> MvnnModel::parameters() const {
  std::vector<NamedTensor> out;
  if (freq_) {
    for (auto& p : freq_->parameters()) out.push_back(std::move(p));
  }
  if (pixel_) {
    for (auto& p : pixel_->parameters()) out.push_back(std::move(p));
  }
  if (attention_) attention_->collect("fusion.attention", out);
  classifier_.collect("fusion.classifier", out);
  return out;
}

std::vector<NamedBuffer> MvnnModel::buffers() {
  if (!freq_) return {};
  return freq_->buffers();
}

}  // namespace mvnn
