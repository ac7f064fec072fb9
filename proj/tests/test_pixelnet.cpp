#include "doctest.h"
#include "helpers.hpp"
#include "mvnn/errors.hpp"
#include "mvnn/pixelnet.hpp"

using namespace mvnn;
using namespace testing;

namespace {

PixelNetConfig small_config() {
  PixelNetConfig c;
  c.input_size = 16;
  c.widths = {2, 2, 3, 3};
  c.tap_channels = 2;
  c.branch_dim = 8;
  c.gru_hidden = 4;
  return c;
}

oracle::GruWeights weights_of(const GruCell& cell) {
  return {to_mat(cell.w_r), to_mat(cell.w_z), to_mat(cell.w_h),
          to_vec(cell.b_r), to_vec(cell.b_z), to_vec(cell.b_h)};
}

void zero(const std::vector<NamedTensor>& params) {
  for (NamedTensor p : params) p.tensor.mutable_data().setZero();
}

}  // namespace

TEST_CASE("pixel preprocessing") {
  Rng rng(1);
  Image img(224, 224);
  for (auto& b : img.rgb) b = static_cast<std::uint8_t>(rng.below(256));
  const Vector planes = pixel_planes(img, 224);
  REQUIRE(planes.size() == 3 * 224 * 224);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 224; y += 17)
      for (int x = 0; x < 224; x += 13)
        CHECK(planes[(c * 224 + y) * 224 + x] == img.at(x, y, c) / 255.0);

  Image gray(50, 30);
  std::fill(gray.rgb.begin(), gray.rgb.end(), 77);
  PixelNorm norm{{0.2, 0.3, 0.4}, {0.5, 0.6, 0.7}};
  Tensor t = pixel_preprocess(gray, 32, norm);
  CHECK(t.shape() == Shape{3, 32, 32});
  for (Index c = 0; c < 3; ++c) {
    const double expected = (77 / 255.0 - norm.mean[c]) / norm.stddev[c];
    for (Index i = 0; i < 32 * 32; ++i) CHECK(std::abs(t.data()[c * 1024 + i] - expected) < 1e-12);
  }

  Image checker(448, 448);
  for (int y = 0; y < 448; ++y)
    for (int x = 0; x < 448; ++x)
      for (int c = 0; c < 3; ++c) checker.at(x, y, c) = ((x / 3 + y / 5) % 2) ? 255 : 0;
  double src_mean = 0;
  for (auto b : checker.rgb) src_mean += b / 255.0;
  src_mean /= static_cast<double>(checker.rgb.size());
  const Vector small = pixel_planes(checker, 224);
  CHECK(std::abs(small.mean() - src_mean) < 1e-2);
  CHECK(small.minCoeff() >= 0);
  CHECK(small.maxCoeff() <= 1);
}

TEST_CASE("GRU step") {
  Rng init(2);
  GruCell cell(6, 4, init);
  Rng rng(3);

  SUBCASE("zero weights") {
    std::vector<NamedTensor> p;
    cell.collect("gru", p);
    zero(p);
    Tensor h = random_tensor({1, 4}, rng);
    GruState s = cell.step(random_tensor({1, 6}, rng), h);
    for (double v : to_vec(s.r)) CHECK(v == 0.5);
    for (double v : to_vec(s.z)) CHECK(v == 0.5);
    for (double v : to_vec(s.h_candidate)) CHECK(v == 0);
    CHECK(max_abs_diff(to_vec(s.h), to_vec(scale(h, 0.5))) == 0);
  }
  SUBCASE("saturated update gate") {
    cell.b_z.mutable_data().setConstant(50);
    GruState s = cell.step(random_tensor({1, 6}, rng), random_tensor({1, 4}, rng));
    CHECK(max_abs_diff(to_vec(s.h), to_vec(s.h_candidate)) < 1e-6);
  }
  SUBCASE("scalar-loop oracle") {
    const auto w = weights_of(cell);
    for (int trial = 0; trial < 10; ++trial) {
      Tensor v = random_tensor({1, 6}, rng), h = random_tensor({1, 4}, rng);
      GruState s = cell.step(v, h);
      const auto o = oracle::gru_step(w, to_vec(v), to_vec(h));
      CHECK(max_abs_diff(to_vec(s.r), o.r) < 1e-12);
      CHECK(max_abs_diff(to_vec(s.z), o.z) < 1e-12);
      CHECK(max_abs_diff(to_vec(s.h_candidate), o.cand) < 1e-12);
      CHECK(max_abs_diff(to_vec(s.h), o.h) < 1e-12);
    }
  }
  SUBCASE("gate ranges and convex bound") {
    for (int trial = 0; trial < 50; ++trial) {
      Tensor v = random_tensor({3, 6}, rng, false, -5, 5), h = random_tensor({3, 4}, rng, false, -1, 1);
      GruState s = cell.step(v, h);
      for (double x : to_vec(s.r)) CHECK((x > 0 && x < 1));
      for (double x : to_vec(s.z)) CHECK((x > 0 && x < 1));
      for (double x : to_vec(s.h_candidate)) CHECK((x > -1 && x < 1));
      for (Index i = 0; i < 12; ++i) {
        const double bound = std::max(std::abs(h.data()[i]), std::abs(s.h_candidate.data()[i]));
        CHECK(std::abs(s.h.data()[i]) <= bound + 1e-15);
      }
    }
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(cell.step(Tensor::zeros({1, 5}), Tensor::zeros({1, 4})), DimensionError);
    CHECK_THROWS_AS(cell.step(Tensor::zeros({1, 6}), Tensor::zeros({1, 3})), DimensionError);
  }
  SUBCASE("gradients") {
    std::vector<NamedTensor> wrt;
    cell.collect("gru", wrt);
    Tensor v = random_tensor({2, 6}, rng, true), h = random_tensor({2, 4}, rng, true);
    wrt.push_back({"v", v});
    wrt.push_back({"h", h});
    Tensor w = random_tensor({2, 4}, rng);
    const auto report = gradcheck([&] { return weighted_sum(cell.step(v, h).h, w); }, wrt);
    INFO(report.worst);
    CHECK(report.max_rel_error < 1e-4);
  }
}

TEST_CASE("Bi-GRU") {
  Rng init(4);
  BiGru gru(6, 4, init);
  Rng rng(5);
  std::vector<Tensor> seq;
  for (int t = 0; t < 4; ++t) seq.push_back(random_tensor({1, 6}, rng));

  SUBCASE("oracle") {
    const auto out = gru.forward(seq);
    REQUIRE(out.size() == 4);
    oracle::Mat s;
    for (auto& t : seq) s.push_back(to_vec(t));
    const auto expected = oracle::bigru(weights_of(gru.forward_cell), weights_of(gru.backward_cell), s);
    for (int t = 0; t < 4; ++t) {
      CHECK(out[t].shape() == Shape{1, 8});
      CHECK(max_abs_diff(to_vec(out[t]), expected[t]) < 1e-12);
    }
  }
  SUBCASE("palindrome with shared weights") {
    gru.backward_cell = gru.forward_cell;
    std::vector<Tensor> pal{seq[0], seq[1], seq[1], seq[0]};
    const auto out = gru.forward(pal);
    for (int t = 0; t < 4; ++t)
      for (Index j = 0; j < 4; ++j) CHECK(out[t].at({0, j}) == out[3 - t].at({0, 4 + j}));
  }
  SUBCASE("zero weights") {
    std::vector<NamedTensor> p;
    gru.collect("bigru", p);
    zero(p);
    for (const Tensor& l : gru.forward(seq))
      for (double v : to_vec(l)) CHECK(v == 0);
  }
  SUBCASE("sequence length") {
    seq.pop_back();
    CHECK_THROWS_AS(gru.forward(seq), DimensionError);
  }
  SUBCASE("gradients") {
    std::vector<NamedTensor> wrt;
    gru.collect("bigru", wrt);
    for (int t = 0; t < 4; ++t) {
      seq[t].set_requires_grad(true);
      wrt.push_back({"v" + std::to_string(t), seq[t]});
    }
    std::vector<Tensor> w;
    for (int t = 0; t < 4; ++t) w.push_back(random_tensor({1, 8}, rng));
    const auto report = gradcheck(
        [&] {
          const auto out = gru.forward(seq);
          Tensor loss = weighted_sum(out[0], w[0]);
          for (int t = 1; t < 4; ++t) loss = add(loss, weighted_sum(out[t], w[t]));
          return loss;
        },
        wrt);
    INFO(report.worst);
    CHECK(report.max_rel_error < 1e-4);
  }
}

TEST_CASE("pixel network") {
  Rng init(6);
  PixelNet net(small_config(), {true, true, true, true}, true, init);
  Rng rng(7);
  Tensor x = random_tensor({2, 3, 16, 16}, rng, false, -1, 1);

  SUBCASE("shapes") {
    const auto v = net.branch_forward(x, ForwardMode::inference());
    REQUIRE(v.size() == 4);
    for (const Tensor& t : v) CHECK(t.shape() == Shape{2, 8});
    const auto l = net.forward(x, ForwardMode::inference());
    REQUIRE(l.size() == 4);
    for (const Tensor& t : l) CHECK(t.shape() == Shape{2, 8});
    CHECK_THROWS_AS(net.forward(random_tensor({2, 3, 15, 16}, rng), ForwardMode::inference()),
                    DimensionError);
  }
  SUBCASE("truncated network agrees bit for bit") {
    const auto v = net.branch_forward(x, ForwardMode::inference());
    for (int t = 1; t <= 4; ++t)
      CHECK(to_vec(net.truncated_forward(x, t, ForwardMode::inference())) == to_vec(v[t - 1]));
  }
  SUBCASE("zero input with zero biases") {
    for (auto& p : net.parameters())
      if (p.name.find("bias") != std::string::npos) p.tensor.mutable_data().setZero();
    for (const Tensor& v : net.branch_forward(Tensor::zeros({2, 3, 16, 16}), ForwardMode::inference()))
      for (double e : to_vec(v)) CHECK(e == 0);
  }
  SUBCASE("dropped tap is an error") {
    const auto before = net.parameters().size();
    net.drop_tap(3);
    CHECK_FALSE(net.has_tap(3));
    CHECK(net.parameters().size() < before);
    CHECK_THROWS_AS(net.branch_forward(x, ForwardMode::inference()), ConfigError);
    CHECK_THROWS_AS(net.forward(x, ForwardMode::inference()), ConfigError);
    CHECK_NOTHROW(net.branch_forward(x, ForwardMode::inference(), {1, 2, 4}));
  }
  SUBCASE("no Bi-GRU") {
    Rng r(8);
    PixelNet plain(small_config(), {true, true, true, true}, false, r);
    CHECK_FALSE(plain.has_bigru());
    CHECK_THROWS_AS(plain.forward(x, ForwardMode::inference()), ConfigError);
  }
  SUBCASE("gradients") {
    PixelNetConfig c = small_config();
    c.dropout = 0;
    Rng r(9);
    PixelNet small(c, {true, true, true, true}, true, r);
    Tensor in = random_tensor({2, 3, 16, 16}, rng, true, -1, 1);
    std::vector<Tensor> w;
    for (int t = 0; t < 4; ++t) w.push_back(random_tensor({2, 8}, rng));
    std::vector<NamedTensor> wrt = small.parameters();
    jitter_biases(wrt, rng);
    wrt.push_back({"input", in});
    Rng drop(1);
    const auto report = gradcheck(
        [&] {
          const auto out = small.forward(in, ForwardMode::train(drop));
          Tensor loss = weighted_sum(out[0], w[0]);
          for (int t = 1; t < 4; ++t) loss = add(loss, weighted_sum(out[t], w[t]));
          return loss;
        },
        wrt, 1e-4, 1e-6, true);
    INFO(report.worst);
    MESSAGE(report.kinks, " of ", report.checked, " points straddle a kink");
    CHECK(report.max_rel_error < 1e-4);
    CHECK(report.kinks * 100 < report.checked);
  }
}
