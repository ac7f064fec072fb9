#include "mvnn/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "mvnn/errors.hpp"

namespace mvnn {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (micro_batch < 0) throw ConfigError("micro-batch must not be negative");
  if (!(learning_rate >= 0)) throw ConfigError("learning rate must not be negative");
  if (max_epochs < 0 || pretrain_epochs < 0) throw ConfigError("epoch counts must not be negative");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && epsilon > 0)) {
    throw ConfigError("Adam needs beta1, beta2 in [0, 1) and epsilon > 0");
  }
}

Adam::Adam(std::vector<Tensor> params, const TrainConfig& config)
    : params_(std::move(params)),
      lr_(config.learning_rate),
      beta1_(config.beta1),
      beta2_(config.beta2),
      eps_(config.epsilon) {
  for (const Tensor& p : params_) {
    m_.push_back(Vector::Zero(p.size()));
    v_.push_back(Vector::Zero(p.size()));
  }
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

void Adam::step() {
  ++t_;
  const double c1 = 1 - std::pow(beta1_, t_);
  const double c2 = 1 - std::pow(beta2_, t_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) continue;
    const Vector g = params_[i].grad();
    m_[i] = beta1_ * m_[i] + (1 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1 - beta2_) * g.cwiseProduct(g);
    params_[i].mutable_data().array() -=
        lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

std::string EpochRecord::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["train_loss"] = train_loss;
  j["val_loss"] = val_loss;
  j["val_accuracy"] = val_accuracy;
  j["seconds"] = seconds;
  return j.dump();
}

namespace {

using ProbsFn = std::function<Tensor(const Batch&, const ForwardMode&)>;

std::vector<Tensor> tensors_of(const std::vector<NamedTensor>& named) {
  std::vector<Tensor> out;
  for (const NamedTensor& n : named) out.push_back(n.tensor);
  return out;
}

// Derived streams of the run seed; distinct per stage so pretraining and
// joint training never share dropout masks or batch orders.
enum Stream : std::uint64_t {
  kFreqHead = 11,
  kPixelHead = 12,
  kFreqPretrain = 21,
  kPixelPretrain = 22,
  kAugment = 23,
  kJoint = 31,
};

// One pass over the training set; returns the mean per-sample loss.
double train_epoch(const PreparedSet& set, const PixelNorm& norm, const TrainConfig& config,
                   std::uint64_t shuffle_seed, int epoch, Adam& adam, Rng& dropout_rng,
                   Rng* augment, const ProbsFn& probs_of) {
  const auto batches = make_batches(set.size(), config.batch_size, shuffle_seed, epoch);
  double total = 0;
  for (std::size_t b = 0; b < batches.size(); ++b) {
    const auto& positions = batches[b];
    const auto n = static_cast<Index>(positions.size());
    const Index step = config.micro_batch > 0 ? config.micro_batch : n;
    adam.zero_grad();
    double batch_loss = 0;
    for (Index start = 0; start < n; start += step) {
      const Index len = std::min(step, n - start);
      const std::span<const std::size_t> part(positions.data() + start,
                                              static_cast<std::size_t>(len));
      const Batch batch = make_batch(set, part, norm, augment);
      const std::string where =
          "epoch " + std::to_string(epoch + 1) + ", batch " + std::to_string(b + 1);
      Tensor probs;
      try {
        probs = probs_of(batch, ForwardMode::train(dropout_rng));
      } catch (const NumericError& e) {
        throw TrainingError(std::string("diverged at ") + where + ": " + e.what());
      }
      const Tensor loss = scale(bce_loss(probs, batch.labels),
                                static_cast<double>(len) / static_cast<double>(n));
      if (!std::isfinite(loss.item())) throw TrainingError("loss is not finite at " + where);
      backward(loss);
      batch_loss += loss.item();
    }
    adam.step();
    total += batch_loss * static_cast<double>(n);
  }
  return total / static_cast<double>(set.size());
}

}  // namespace

std::vector<double> pretrain(MvnnModel& model, SubNetwork sub, const PreparedSet& train,
                             const TrainConfig& config) {
  config.validate();
  if (config.pretrain_epochs == 0) return {};
  if (train.size() == 0) throw UsageError("pretraining needs a non-empty training split");
  const Rng root(config.seed);
  const ModelConfig& mc = model.config();
  std::vector<Tensor> params;
  ProbsFn probs_of;
  Rng augment_rng = root.fork(kAugment);
  Rng* augment = nullptr;
  std::uint64_t stream = 0;

  // Temporary heads live only in this scope.
  Classifier head;
  Attention attention;
  if (sub == SubNetwork::Freq) {
    Rng init = root.fork(kFreqHead);
    head = Classifier(mc.freq.out_dim, init);
    params = tensors_of(model.freq().parameters());
    probs_of = [&](const Batch& b, const ForwardMode& mode) {
      return head.probabilities(model.freq_feature(b, mode));
    };
    stream = kFreqPretrain;
  } else {
    Rng init = root.fork(kPixelHead);
    attention = Attention(mc.pixel.branch_dim, mc.attention_dim, init);
    head = Classifier(mc.pixel.branch_dim, init);
    params = tensors_of(model.pixel().parameters());
    const Ablation variant = model.ablation();
    probs_of = [&, variant](const Batch& b, const ForwardMode& mode) {
      return head.probabilities(attention(model.pixel_features(b, mode, variant)).u);
    };
    if (config.augment) augment = &augment_rng;
    stream = kPixelPretrain;
    std::vector<NamedTensor> extra;
    attention.collect("", extra);
    for (Tensor& t : tensors_of(extra)) params.push_back(t);
  }
  std::vector<NamedTensor> head_params;
  head.collect("", head_params);
  for (Tensor& t : tensors_of(head_params)) params.push_back(t);

  Adam adam(params, config);
  Rng dropout_rng = root.fork(stream);
  const std::uint64_t shuffle_seed = root.fork(stream + 100).next_u64();
  std::vector<double> losses;
  for (int epoch = 0; epoch < config.pretrain_epochs; ++epoch) {
    losses.push_back(train_epoch(train, model.pixel_norm(), config, shuffle_seed, epoch, adam,
                                 dropout_rng, augment, probs_of));
  }
  adam.zero_grad();
  return losses;
}

Evaluation evaluate(MvnnModel& model, const PreparedSet& set, Index chunk) {
  if (set.size() == 0) throw UsageError("cannot evaluate an empty split");
  Evaluation ev;
  std::vector<int> truth, predicted;
  double loss = 0;
  for (std::size_t start = 0; start < set.size(); start += static_cast<std::size_t>(chunk)) {
    std::vector<std::size_t> positions;
    for (std::size_t i = start; i < std::min(set.size(), start + static_cast<std::size_t>(chunk)); ++i) {
      positions.push_back(i);
    }
    const Batch batch = make_batch(set, positions, model.pixel_norm());
    for (FusedOutput& out : model.predict(batch)) ev.outputs.push_back(std::move(out));
    for (std::size_t k = 0; k < positions.size(); ++k) {
      const int label = batch.labels[k];
      const FusedOutput& out = ev.outputs[start + k];
      const double p = std::clamp(out.p[1], 1e-12, 1 - 1e-12);
      loss -= label == 1 ? std::log(p) : std::log(1 - p);
      truth.push_back(label);
      predicted.push_back(out.predicted_label);
    }
  }
  ev.loss = loss / static_cast<double>(set.size());
  ev.metrics = compute_metrics(truth, predicted);
  return ev;
}

ModelSnapshot snapshot(MvnnModel& model) {
  ModelSnapshot s;
  for (const NamedTensor& p : model.parameters()) s.params.push_back(p.tensor.data());
  for (const NamedBuffer& b : model.buffers()) s.buffers.push_back(*b.data);
  return s;
}

void restore(MvnnModel& model, const ModelSnapshot& snap) {
  auto params = model.parameters();
  auto buffers = model.buffers();
  if (params.size() != snap.params.size() || buffers.size() != snap.buffers.size()) {
    throw UsageError("snapshot does not match the model");
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i].tensor.mutable_data() = snap.params[i];
  for (std::size_t i = 0; i < buffers.size(); ++i) *buffers[i].data = snap.buffers[i];
}

TrainResult train_joint(MvnnModel& model, const TrainData& data, const TrainConfig& config,
                        const EpochCallback& on_epoch) {
  config.validate();
  if (data.val.size() == 0) throw ConfigError("joint training needs a validation split");
  if (data.train.size() == 0) throw UsageError("joint training needs a training split");
  const Rng root(config.seed);
  Adam adam(tensors_of(model.parameters()), config);
  Rng dropout_rng = root.fork(kJoint);
  const std::uint64_t shuffle_seed = root.fork(kJoint + 100).next_u64();
  const ProbsFn probs_of = [&](const Batch& b, const ForwardMode& mode) {
    return model.forward(b, mode).probs;
  };

  TrainResult result;
  ModelSnapshot best = snapshot(model);
  result.best_val_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.train_loss = train_epoch(data.train, model.pixel_norm(), config, shuffle_seed, epoch,
                                 adam, dropout_rng, nullptr, probs_of);
    const Evaluation val = evaluate(model, data.val);
    rec.val_loss = val.loss;
    rec.val_accuracy = val.metrics.accuracy;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.val_loss < result.best_val_loss) {
      result.best_val_loss = rec.val_loss;
      result.best_epoch = rec.epoch;
      best = snapshot(model);
      since_best = 0;
    } else if (++since_best >= config.patience) {
      result.best_so_far.push_back(result.best_val_loss);
      result.stopped_early = true;
      break;
    }
    result.best_so_far.push_back(result.best_val_loss);
  }
  adam.zero_grad();
  restore(model, best);
  return result;
}

TrainResult fit(MvnnModel& model, const TrainData& data, const TrainConfig& config,
                const EpochCallback& on_epoch) {
  config.validate();
  if (data.train.has_pixel && model.has_pixel()) {
    model.pixel_norm() = compute_pixel_norm(data.train);
  }
  if (model.has_freq()) pretrain(model, SubNetwork::Freq, data.train, config);
  if (model.has_pixel()) pretrain(model, SubNetwork::Pixel, data.train, config);
  return train_joint(model, data, config, on_epoch);
}

std::vector<AblationRow> run_ablations(const ModelConfig& model_config, const TrainData& data,
                                       const PreparedSet& test, const TrainConfig& config,
                                       const std::vector<Ablation>& variants) {
  std::vector<AblationRow> rows;
  for (Ablation variant : variants) {
    MvnnModel model(model_config, variant, config.seed);
    const TrainResult r = fit(model, data, config);
    rows.push_back({variant, evaluate(model, test).metrics,
                    static_cast<int>(r.history.size())});
  }
  return rows;
}

std::string ablation_table_json(const std::vector<AblationRow>& rows) {
  nlohmann::ordered_json table = nlohmann::ordered_json::array();
  for (const AblationRow& row : rows) {
    nlohmann::ordered_json j;
    j["variant"] = std::string(to_string(row.variant));
    const auto metrics = nlohmann::ordered_json::parse(row.metrics.to_json());
    for (const auto& [key, value] : metrics.items()) j[key] = value;
    j["epochs"] = row.epochs;
    table.push_back(std::move(j));
  }
  return table.dump();
}

std::string ablation_table_text(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  char line[128];
  std::snprintf(line, sizeof line, "%-14s %9s %9s %9s %9s %7s\n", "variant", "accuracy",
                "precision", "recall", "f1", "epochs");
  out << line;
  for (const AblationRow& row : rows) {
    std::snprintf(line, sizeof line, "%-14s %9.4f %9.4f %9.4f %9.4f %7d\n",
                  std::string(to_string(row.variant)).c_str(), row.metrics.accuracy,
                  row.metrics.precision, row.metrics.recall, row.metrics.f1, row.epochs);
    out << line;
  }
  return out.str();
}

}  // namespace mvnn
