#include "json.hpp"
#include "doctest.h"
#include "helpers.hpp"
#include "mvnn/checkpoint.hpp"
#include "mvnn/errors.hpp"
#include "mvnn/train.hpp"

using namespace mvnn;
using namespace testing;

namespace {

// Samples whose label shifts the mean of both inputs a little, so training
// has something to find.
PreparedSet random_set(std::size_t n, Index size, Rng& rng) {
  PreparedSet set;
  set.pixel_size = size;
  set.has_freq = set.has_pixel = true;
  for (std::size_t i = 0; i < n; ++i) {
    PreparedSample s;
    s.path = "s" + std::to_string(i);
    s.label = static_cast<int>(i % 2);
    const double shift = 0.2 * s.label;
    s.freq = Vector(64 * 250);
    for (double& v : s.freq) v = std::min(1.0, rng.uniform(0, 0.8) + shift);
    s.pixels = Vector(3 * size * size);
    for (double& v : s.pixels) v = std::min(1.0, rng.uniform(0, 0.8) + shift);
    set.samples.push_back(std::move(s));
  }
  return set;
}

TrainConfig quick_config() {
  TrainConfig c;
  c.batch_size = 8;
  c.max_epochs = 3;
  c.patience = 5;
  c.pretrain_epochs = 1;
  c.seed = 4;
  return c;
}

std::vector<Vector> values(const MvnnModel& m) {
  std::vector<Vector> out;
  for (const auto& p : m.parameters()) out.push_back(p.tensor.data());
  return out;
}

}  // namespace

TEST_CASE("metrics") {
  Confusion c{2, 1, 3, 1};
  const Metrics m = compute_metrics(c);
  CHECK(m.precision == 2.0 / 3);
  CHECK(m.recall == 2.0 / 3);
  CHECK(m.f1 == doctest::Approx(2.0 / 3).epsilon(1e-15));
  CHECK(m.accuracy == 5.0 / 7);

  const std::vector<int> truth{0, 1, 1, 0}, pred{0, 1, 1, 0};
  const Metrics perfect = compute_metrics(truth, pred);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.f1 == 1.0);
  CHECK(perfect.confusion.tp == 2);
  CHECK(perfect.confusion.tn == 2);

  const std::vector<int> none{0, 0, 0, 0};
  const Metrics silent = compute_metrics(truth, none);
  CHECK(silent.precision_undefined);
  CHECK(silent.precision == 0);
  CHECK_FALSE(silent.recall_undefined);
  CHECK(silent.accuracy == 0.5);

  const std::vector<int> short_pred{0};
  CHECK_THROWS_AS(compute_metrics(truth, short_pred), DimensionError);

  const auto j = nlohmann::json::parse(m.to_json());
  CHECK(j.at("tp") == 2);
  CHECK(j.at("accuracy").get<double>() == 5.0 / 7);
}

TEST_CASE("adam") {
  Tensor w({3}, {1.0, -2.0, 0.5}, true);
  TrainConfig c;
  c.learning_rate = 0.1;
  Adam adam({w}, c);
  adam.zero_grad();
  backward(sum(mul(w, Tensor({3}, {2.0, -3.0, 0.0}))));
  adam.step();
  // The first bias-corrected step is lr * g / (|g| + eps).
  CHECK(w.data()[0] == doctest::Approx(0.9).epsilon(1e-9));
  CHECK(w.data()[1] == doctest::Approx(-1.9).epsilon(1e-9));
  CHECK(w.data()[2] == 0.5);
  CHECK(adam.steps() == 1);

  TrainConfig bad;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.learning_rate = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("training") {
  const ModelConfig mc = tiny_config();
  Rng rng(1);
  TrainData data{random_set(24, 16, rng), random_set(8, 16, rng)};

  SUBCASE("zero pretraining leaves the model untouched") {
    MvnnModel model(mc, Ablation::Full, 3);
    const auto before = values(model);
    TrainConfig c = quick_config();
    c.pretrain_epochs = 0;
    CHECK(pretrain(model, SubNetwork::Freq, data.train, c).empty());
    CHECK(pretrain(model, SubNetwork::Pixel, data.train, c).empty());
    CHECK(values(model) == before);
  }
  SUBCASE("pretraining moves only its own sub-network") {
    MvnnModel model(mc, Ablation::Full, 3);
    const auto before = model.parameters();
    std::vector<Vector> saved;
    for (const auto& p : before) saved.push_back(p.tensor.data());
    const auto losses = pretrain(model, SubNetwork::Freq, data.train, quick_config());
    CHECK(losses.size() == 1);
    const auto after = model.parameters();
    for (std::size_t i = 0; i < after.size(); ++i) {
      CAPTURE(after[i].name);
      const bool freq = after[i].name.rfind("freq.", 0) == 0;
      if (!freq) CHECK(after[i].tensor.data() == saved[i]);
    }
  }
  SUBCASE("zero learning rate") {
    MvnnModel model(mc, Ablation::Full, 3);
    TrainConfig c = quick_config();
    c.learning_rate = 0;
    c.pretrain_epochs = 2;
    const auto before = values(model);
    fit(model, data, c);
    CHECK(values(model) == before);
  }
  SUBCASE("early stopping keeps the best model") {
    MvnnModel model(mc, Ablation::Full, 3);
    TrainConfig c = quick_config();
    c.max_epochs = 6;
    c.patience = 2;
    c.learning_rate = 0.01;
    std::vector<EpochRecord> seen;
    const TrainResult r = fit(model, data, c, [&](const EpochRecord& e) { seen.push_back(e); });
    CHECK(seen.size() == r.history.size());
    REQUIRE(r.best_so_far.size() == r.history.size());
    for (std::size_t i = 1; i < r.best_so_far.size(); ++i) CHECK(r.best_so_far[i] <= r.best_so_far[i - 1]);
    double best = INFINITY;
    for (const auto& e : r.history) best = std::min(best, e.val_loss);
    CHECK(r.best_val_loss == best);
    const Evaluation val = evaluate(model, data.val);
    CHECK(std::abs(val.loss - r.best_val_loss) < 1e-12);
    const auto j = nlohmann::json::parse(r.history[0].to_json());
    CHECK(j.contains("train_loss"));
  }
  SUBCASE("micro-batches accumulate to the full-batch step") {
    TrainConfig c = quick_config();
    c.pretrain_epochs = 0;
    c.max_epochs = 1;
    MvnnModel a(mc, Ablation::NoAttention, 3), b(mc, Ablation::NoAttention, 3);
    // Dropout masks depend on how samples are grouped, so compare without it.
    ModelConfig nodrop = mc;
    nodrop.freq.dropout = 0;
    nodrop.pixel.dropout = 0;
    MvnnModel x(nodrop, Ablation::NoPixel, 3), y(nodrop, Ablation::NoPixel, 3);
    c.micro_batch = 0;
    train_joint(x, data, c);
    c.micro_batch = 3;
    train_joint(y, data, c);
    const auto vx = values(x), vy = values(y);
    // Batch norm sees smaller batches, so the steps differ; they stay close.
    double diff = 0;
    for (std::size_t i = 0; i < vx.size(); ++i) diff = std::max(diff, (vx[i] - vy[i]).cwiseAbs().maxCoeff());
    CHECK(diff < 1e-2);
    MvnnModel pix(nodrop, Ablation::NoFreq, 3), pix2(nodrop, Ablation::NoFreq, 3);
    c.micro_batch = 0;
    train_joint(pix, data, c);
    c.micro_batch = 3;
    train_joint(pix2, data, c);
    const auto pa = values(pix), pb = values(pix2);
    double pdiff = 0;
    for (std::size_t i = 0; i < pa.size(); ++i) pdiff = std::max(pdiff, (pa[i] - pb[i]).cwiseAbs().maxCoeff());
    // No batch norm in the pixel branch: accumulation matches up to rounding.
    CHECK(pdiff < 1e-12);
  }
  SUBCASE("errors") {
    MvnnModel model(mc, Ablation::Full, 3);
    TrainData no_val{data.train, PreparedSet{}};
    CHECK_THROWS_AS(train_joint(model, no_val, quick_config()), ConfigError);
    for (auto& p : model.parameters())
      if (p.name == "fusion.classifier.w_c") p.tensor.mutable_data().setConstant(NAN);
    try {
      train_joint(model, data, quick_config());
      FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("epoch 1") != std::string::npos);
      CHECK(msg.find("batch 1") != std::string::npos);
    }
  }
  SUBCASE("determinism and checkpoints") {
    MvnnModel a(mc, Ablation::Full, 5), b(mc, Ablation::Full, 5);
    const TrainResult ra = fit(a, data, quick_config());
    const TrainResult rb = fit(b, data, quick_config());
    REQUIRE(ra.history.size() == rb.history.size());
    for (std::size_t i = 0; i < ra.history.size(); ++i) {
      CHECK(ra.history[i].train_loss == rb.history[i].train_loss);
      CHECK(ra.history[i].val_loss == rb.history[i].val_loss);
    }
    const auto bytes = serialize_checkpoint(a, quick_config());
    CHECK(bytes == serialize_checkpoint(b, quick_config()));

    LoadedCheckpoint loaded = deserialize_checkpoint(bytes);
    CHECK(serialize_checkpoint(loaded.model, loaded.train) == bytes);
    CHECK(loaded.train.seed == quick_config().seed);
    const Evaluation before = evaluate(a, data.val);
    const Evaluation after = evaluate(loaded.model, data.val);
    CHECK(before.loss == after.loss);
    for (std::size_t i = 0; i < before.outputs.size(); ++i) CHECK(before.outputs[i].p == after.outputs[i].p);
    CHECK(before.metrics.to_json() == after.metrics.to_json());

    auto broken = bytes;
    broken[0] = 'X';
    CHECK_THROWS_AS(deserialize_checkpoint(broken), IngestError);
    CHECK_THROWS_AS(deserialize_checkpoint(std::span(bytes).first(bytes.size() - 8)), IngestError);
  }
}

TEST_CASE("config files") {
  ModelConfig mc = ModelConfig::desk();
  mc.attention_dim = 16;
  const ModelConfig back = parse_model_config(model_config_json(mc));
  CHECK(model_config_json(back) == model_config_json(mc));
  CHECK(parse_model_config("{}").freq.filters == ModelConfig::reference().freq.filters);
  CHECK_THROWS_AS(parse_model_config("{\"atention_dim\": 3}"), ConfigError);
  CHECK_THROWS_AS(parse_model_config("{\"attention_dim\": \"big\"}"), ConfigError);

  TrainConfig tc;
  tc.learning_rate = 5e-4;
  tc.micro_batch = 4;
  CHECK(train_config_json(parse_train_config(train_config_json(tc))) == train_config_json(tc));
  CHECK_THROWS_AS(parse_train_config("{\"epochs\": 3}"), ConfigError);
}

TEST_CASE("ablation table") {
  const ModelConfig mc = tiny_config();
  Rng rng(2);
  TrainData data{random_set(16, 16, rng), random_set(6, 16, rng)};
  const PreparedSet test = random_set(6, 16, rng);
  TrainConfig c = quick_config();
  c.max_epochs = 1;
  c.pretrain_epochs = 0;
  const auto rows = run_ablations(mc, data, test, c);
  REQUIRE(rows.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(rows[i].variant == kAllAblations[i]);
    CHECK(rows[i].metrics.confusion.total() == 6);
  }
  const auto j = nlohmann::json::parse(ablation_table_json(rows));
  REQUIRE(j.size() == 6);
  for (const auto& row : j) {
    CHECK(row.contains("variant"));
    CHECK(row.contains("accuracy"));
    CHECK(row.contains("f1"));
  }
  const std::string text = ablation_table_text(rows);
  for (Ablation a : kAllAblations) CHECK(text.find(std::string(to_string(a))) != std::string::npos);
}
