#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mvnn/data.hpp"
#include "mvnn/metrics.hpp"
#include "mvnn/model.hpp"

namespace mvnn {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  Index batch_size = 64;
  // Samples per forward/backward pass; gradients of the micro-batches are
  // accumulated into one optimizer step. 0 runs the whole batch at once.
  Index micro_batch = 0;
  int max_epochs = 300;
  int patience = 10;
  int pretrain_epochs = 20;
  bool augment = true;  // pixel pretraining only
  std::uint64_t seed = 0;

  /// Throws ConfigError on a non-positive batch size or patience, or a
  /// negative learning rate, epoch count or micro-batch.
  void validate() const;
};

/// Adam over a fixed list of parameters, reading their accumulated grads.
class Adam {
 public:
  Adam(std::vector<Tensor> params, const TrainConfig& config);
  void zero_grad();
  void step();
  int steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<Vector> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double val_accuracy = 0;
  double seconds = 0;

  std::string to_json() const;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Training and validation inputs with the pixel statistics of the
/// training split.
struct TrainData {
  PreparedSet train;
  PreparedSet val;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::vector<double> best_so_far;  // running minimum of val_loss per epoch
  double best_val_loss = 0;
  int best_epoch = 0;
  bool stopped_early = false;
};

enum class SubNetwork { Freq, Pixel };

/// Trains one sub-network on its own with a temporary classifier head (on
/// l_0, or attention over the pixel features) that is discarded afterwards.
/// Returns the mean training loss of every epoch. A non-finite loss is a
/// TrainingError naming the epoch and batch.
std::vector<double> pretrain(MvnnModel& model, SubNetwork sub, const PreparedSet& train,
                             const TrainConfig& config);

/// Adam on the mean batch cross-entropy with early stopping on validation
/// loss; the best-validation parameters are restored before returning.
/// Empty validation data is a ConfigError.
TrainResult train_joint(MvnnModel& model, const TrainData& data, const TrainConfig& config,
                        const EpochCallback& on_epoch = {});

/// Sets the pixel statistics from the training split, pretrains every
/// sub-network the model has, then trains jointly.
TrainResult fit(MvnnModel& model, const TrainData& data, const TrainConfig& config,
                const EpochCallback& on_epoch = {});

struct Evaluation {
  Metrics metrics;
  double loss = 0;
  std::vector<FusedOutput> outputs;
};

/// Inference-mode pass over a prepared split.
Evaluation evaluate(MvnnModel& model, const PreparedSet& set, Index chunk = 32);

/// Parameter values and buffers, for restoring a model in place.
struct ModelSnapshot {
  std::vector<Vector> params;
  std::vector<Vector> buffers;
};
ModelSnapshot snapshot(MvnnModel& model);
void restore(MvnnModel& model, const ModelSnapshot& snap);

struct AblationRow {
  Ablation variant = Ablation::Full;
  Metrics metrics;
  int epochs = 0;
};

/// Trains and tests each variant from the same seed and split.
std::vector<AblationRow> run_ablations(const ModelConfig& model_config, const TrainData& data,
                                       const PreparedSet& test, const TrainConfig& config,
                                       const std::vector<Ablation>& variants = {
                                           kAllAblations.begin(), kAllAblations.end()});

std::string ablation_table_json(const std::vector<AblationRow>& rows);
std::string ablation_table_text(const std::vector<AblationRow>& rows);

}  // namespace mvnn
