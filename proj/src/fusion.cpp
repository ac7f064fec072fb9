#include "mvnn/fusion.hpp"

#include "mvnn/errors.hpp"

namespace mvnn {

Attention::Attention(Index feature_dim, Index attention_dim, Rng& init)
    : w_f(glorot_uniform({attention_dim, feature_dim}, feature_dim, attention_dim, init)),
      b_f(Tensor::zeros({attention_dim}, true)),
      v(glorot_uniform({attention_dim}, attention_dim, 1, init)) {}

Attention::Result Attention::operator()(const std::vector<Tensor>& features) const {
  if (features.empty()) throw DimensionError("attention over no features");
  const Index n = features.front().dim(0);
  const Index d = feature_dim();
  const auto m = static_cast<Index>(features.size());
  std::vector<Tensor> rows;
  rows.reserve(features.size());
  for (const Tensor& f : features) {
    if (f.rank() != 2 || f.dim(0) != n || f.dim(1) != d) {
      throw DimensionError("attention: feature " + to_string(f.shape()) +
                           " does not match [" + std::to_string(n) + "x" +
                           std::to_string(d) + "]");
    }
    rows.push_back(f.reshape({n, 1, d}));
  }
  const Tensor stacked = concat(rows, 1);  // [n x m x d]
  const Tensor hidden = tanh(linear(stacked.reshape({n * m, d}), w_f, b_f));
  Result r;
  r.scores = matmul(hidden, v.reshape({v.size(), 1})).reshape({n, m});
  r.alphas = softmax(r.scores);
  r.u = batched_matmul(r.alphas.reshape({n, 1, m}), stacked).reshape({n, d});
  return r;
}

void Attention::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".w_f", w_f});
  out.push_back({prefix + ".b_f", b_f});
  out.push_back({prefix + ".v", v});
}

Classifier::Classifier(Index input_dim, Rng& init)
    : w_c(glorot_uniform({2, input_dim}, input_dim, 2, init)),
      b_c(Tensor::zeros({2}, true)) {}

Tensor Classifier::logits(const Tensor& u) const {
  if (u.rank() != 2 || u.dim(1) != input_dim()) {
    throw DimensionError("classifier expects [n x " + std::to_string(input_dim()) +
                         "], got " + to_string(u.shape()));
  }
  return linear(u, w_c, b_c);
}

void Classifier::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".w_c", w_c});
  out.push_back({prefix + ".b_c", b_c});
}

int predict_label(Scalar p_fake) { return p_fake >= 0.5 ? 1 : 0; }

}  // namespace mvnn
