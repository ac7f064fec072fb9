#include <map>

#include "doctest.h"
#include "helpers.hpp"
#include "mvnn/errors.hpp"
#include "mvnn/model.hpp"

using namespace mvnn;
using namespace testing;

TEST_CASE("attention") {
  Rng init(1);
  Attention att(6, 4, init);
  Rng rng(2);

  SUBCASE("identical features") {
    Tensor l = random_tensor({2, 6}, rng);
    const auto r = att({l, l, l, l, l});
    for (double a : to_vec(r.alphas)) CHECK(std::abs(a - 0.2) < 1e-15);
    CHECK(max_abs_diff(to_vec(r.u), to_vec(l)) < 1e-15);
  }
  SUBCASE("zero scoring vector") {
    att.v.mutable_data().setZero();
    std::vector<Tensor> f;
    for (int i = 0; i < 5; ++i) f.push_back(random_tensor({3, 6}, rng, false, -5, 5));
    for (double a : to_vec(att(f).alphas)) CHECK(a == 0.2);
  }
  SUBCASE("scalar oracle") {
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<Tensor> f;
      oracle::Mat rows;
      for (int i = 0; i < 5; ++i) {
        f.push_back(random_tensor({1, 6}, rng, false, -2, 2));
        rows.push_back(to_vec(f.back()));
      }
      const auto r = att(f);
      const auto o = oracle::attention(rows, to_mat(att.w_f), to_vec(att.b_f), to_vec(att.v));
      CHECK(max_abs_diff(to_vec(r.alphas), o.alphas) < 1e-12);
      CHECK(max_abs_diff(to_vec(r.u), o.u) < 1e-12);
    }
  }
  SUBCASE("alpha properties") {
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<Tensor> f;
      for (int i = 0; i < 5; ++i) f.push_back(random_tensor({4, 6}, rng, false, -3, 3));
      const auto r = att(f);
      for (Index s = 0; s < 4; ++s) {
        double sum = 0;
        for (Index i = 0; i < 5; ++i) {
          const double a = r.alphas.at({s, i});
          CHECK((a > 0 && a < 1));
          sum += a;
        }
        CHECK(std::abs(sum - 1) < 1e-9);
      }
      // A constant added to every score: only b_f cannot do that, so shift
      // the scores directly through the softmax they feed.
      const double c = rng.uniform(-50, 50);
      Tensor shifted = softmax(add(r.scores, Tensor::full(r.scores.shape(), c)));
      CHECK(max_abs_diff(to_vec(shifted), to_vec(r.alphas)) < 1e-9);
    }
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(att({Tensor::zeros({1, 6}), Tensor::zeros({1, 5})}), DimensionError);
    CHECK_THROWS_AS(att({Tensor::zeros({1, 5}), Tensor::zeros({1, 5})}), DimensionError);
  }
  SUBCASE("gradients") {
    std::vector<NamedTensor> wrt;
    att.collect("att", wrt);
    std::vector<Tensor> f;
    for (int i = 0; i < 5; ++i) {
      f.push_back(random_tensor({2, 6}, rng, true));
      wrt.push_back({"l" + std::to_string(i), f.back()});
    }
    Tensor w = random_tensor({2, 6}, rng);
    const auto report = gradcheck([&] { return weighted_sum(att(f).u, w); }, wrt);
    INFO(report.worst);
    CHECK(report.max_rel_error < 1e-6);
  }
}

TEST_CASE("classifier") {
  Rng init(3);
  Classifier cls(6, init);
  Rng rng(4);
  Tensor u = random_tensor({3, 6}, rng);

  cls.w_c.mutable_data().setZero();
  cls.b_c.mutable_data().setZero();
  for (double p : to_vec(cls.probabilities(u))) CHECK(p == 0.5);
  cls.b_c.mutable_data() << 0, 10;
  for (Index i = 0; i < 3; ++i) CHECK(std::abs(cls.probabilities(u).at({i, 1}) - 1) < 1e-4);

  Rng again(3);
  Classifier fresh(6, again);
  Tensor logits = fresh.logits(u);
  Tensor p = softmax(logits);
  Tensor q = softmax(add(logits, Tensor::full(logits.shape(), 123.4)));
  CHECK(max_abs_diff(to_vec(p), to_vec(q)) < 1e-9);
  for (Index i = 0; i < 3; ++i)
    CHECK(predict_label(p.at({i, 1})) == predict_label(q.at({i, 1})));

  CHECK(predict_label(0.5) == 1);
  CHECK(predict_label(0.4999999) == 0);
  CHECK(predict_label(0.9) == 1);
}

TEST_CASE("binary cross-entropy") {
  const std::vector<int> one{1}, zero{0};
  CHECK(bce_loss(Tensor({1, 2}, {0, 1}), one).item() < 1e-11);
  CHECK(bce_loss(Tensor({1, 2}, {0.5, 0.5}), one).item() == doctest::Approx(0.693147).epsilon(1e-6));
  CHECK(bce_loss(Tensor({1, 2}, {0.5, 0.5}), zero).item() == doctest::Approx(std::log(2.0)));
  CHECK(std::isfinite(bce_loss(Tensor({1, 2}, {1, 0}), one).item()));
  const std::vector<int> pair{1, 0};
  CHECK(bce_loss(Tensor({2, 2}, {0.2, 0.8, 0.6, 0.4}), pair).item() ==
        doctest::Approx(-(std::log(0.8) + std::log(0.6)) / 2));

  Rng rng(5);
  Tensor logits = random_tensor({4, 2}, rng, true, -3, 3);
  const std::vector<int> labels{0, 1, 1, 0};
  const auto report = gradcheck([&] { return bce_loss(softmax(logits), labels); },
                                {{"logits", logits}}, 1e-5);
  INFO(report.worst);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("model structure per ablation") {
  const ModelConfig c = tiny_config();
  Rng rng(6);
  const Batch batch = random_batch(c, 2, rng);
  struct Expect {
    Ablation a;
    std::optional<Index> alphas;
    Index u_dim;
  };
  const std::vector<Expect> expected{{Ablation::Full, 5, 8},        {Ablation::NoFreq, 4, 8},
                                     {Ablation::NoPixel, {}, 8},      {Ablation::NoAttention, {}, 40},
                                     {Ablation::NoBigru, 5, 8},       {Ablation::NoBranches, 2, 8}};
  for (const Expect& e : expected) {
    CAPTURE(to_string(e.a));
    MvnnModel model(c, e.a, 7);
    const ModelOutput out = model.forward(batch, ForwardMode::inference());
    CHECK(out.probs.shape() == Shape{2, 2});
    CHECK(out.u.shape() == Shape{2, e.u_dim});
    CHECK(out.alphas.has_value() == e.alphas.has_value());
    if (e.alphas) CHECK(out.alphas->shape() == Shape{2, *e.alphas});
    CHECK(model.has_freq() == uses_freq(e.a));
    CHECK(model.has_pixel() == uses_pixel(e.a));
    CHECK(parse_ablation(to_string(e.a)) == e.a);
    const auto again = model.forward(batch, ForwardMode::inference());
    CHECK(to_vec(again.probs) == to_vec(out.probs));
  }
  CHECK_THROWS_AS(parse_ablation("none"), ConfigError);

  MvnnModel no_pixel(c, Ablation::NoPixel, 7);
  CHECK_THROWS_AS(no_pixel.forward(batch, ForwardMode::inference(), Ablation::Full), ConfigError);
  CHECK_THROWS_AS(no_pixel.pixel(), ConfigError);
  MvnnModel no_freq(c, Ablation::NoFreq, 7);
  CHECK_THROWS_AS(no_freq.forward(batch, ForwardMode::inference(), Ablation::NoPixel), ConfigError);

  ModelConfig bad = c;
  bad.pixel.gru_hidden = 5;
  CHECK_THROWS_AS(MvnnModel(bad, Ablation::Full, 1), ConfigError);

  SUBCASE("shared components start from the same weights") {
    MvnnModel full(c, Ablation::Full, 9), nf(c, Ablation::NoFreq, 9);
    std::map<std::string, Vector> a;
    for (auto& p : full.parameters()) a[p.name] = p.tensor.data();
    for (auto& p : nf.parameters())
      if (p.name.rfind("pixel.", 0) == 0) CHECK(a.at(p.name) == p.tensor.data());
  }
}

TEST_CASE("full forward composes the modules") {
  const ModelConfig c = tiny_config();
  Rng rng(8);
  const Batch batch = random_batch(c, 3, rng);
  MvnnModel model(c, Ablation::Full, 11);
  const ForwardMode mode = ForwardMode::inference();
  const ModelOutput out = model.forward(batch, mode);

  std::vector<Tensor> features{model.freq().forward(batch.freq, mode)};
  for (const Tensor& l : model.pixel().forward(batch.pixels, mode)) features.push_back(l);
  const auto fused = model.attention()(features);
  const Tensor p = model.classifier().probabilities(fused.u);
  CHECK(max_abs_diff(to_vec(out.probs), to_vec(p)) < 1e-12);
  CHECK(max_abs_diff(to_vec(*out.alphas), to_vec(fused.alphas)) < 1e-12);

  const auto per_sample = model.predict(batch);
  REQUIRE(per_sample.size() == 3);
  for (Index i = 0; i < 3; ++i) {
    CHECK(per_sample[i].p[1] == out.probs.at({i, 1}));
    CHECK(per_sample[i].predicted_label == predict_label(out.probs.at({i, 1})));
    REQUIRE(per_sample[i].alphas);
    CHECK(per_sample[i].alphas->size() == 5);
  }

  MvnnModel np(c, Ablation::NoPixel, 11);
  const ModelOutput o2 = np.forward(batch, mode);
  const Tensor p2 = np.classifier().probabilities(np.freq().forward(batch.freq, mode));
  CHECK(max_abs_diff(to_vec(o2.probs), to_vec(p2)) < 1e-12);
  CHECK_FALSE(np.predict(batch)[0].alphas.has_value());
}

TEST_CASE("end-to-end gradients") {
  ModelConfig c = tiny_config();
  Rng rng(12);
  const Batch batch = random_batch(c, 2, rng);
  for (Ablation a : {Ablation::Full, Ablation::NoAttention}) {
    CAPTURE(to_string(a));
    MvnnModel model(c, a, 13);
    std::vector<NamedTensor> wrt = model.parameters();
    jitter_biases(wrt, rng);
    const auto report = gradcheck(
        [&] {
          Rng drop(3);
          const ModelOutput out = model.forward(batch, ForwardMode::train(drop));
          return bce_loss(out.probs, batch.labels);
        },
        wrt, 1e-6, 1e-6, true, 1e-4);
    INFO(report.worst);
    MESSAGE(to_string(a), ": ", report.kinks, " of ", report.checked, " points straddle a kink");
    CHECK(report.max_rel_error < 1e-3);
    CHECK(report.kinks * 100 < report.checked);
  }
}
