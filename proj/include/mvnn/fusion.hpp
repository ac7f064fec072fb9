#pragma once

#include <optional>
#include <vector>

#include "mvnn/nn.hpp"

namespace mvnn {

/// Scores each feature vector l_i with F(l_i) = v^T tanh(W_f l_i + b_f) and
/// returns the softmax-weighted sum u = sum_i alpha_i l_i.
struct Attention {
  Tensor w_f;  // [d_a x d]
  Tensor b_f;  // [d_a]
  Tensor v;    // [d_a]

  struct Result {
    Tensor scores;  // [n x m]
    Tensor alphas;  // [n x m]
    Tensor u;       // [n x d]
  };

  Attention() = default;
  Attention(Index feature_dim, Index attention_dim, Rng& init);

  Index feature_dim() const { return w_f.dim(1); }

  /// m feature tensors of shape [n x d].
  Result operator()(const std::vector<Tensor>& features) const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

/// p = softmax(W_c u + b_c) over the classes (real, fake).
struct Classifier {
  Tensor w_c;  // [2 x d]
  Tensor b_c;  // [2]

  Classifier() = default;
  Classifier(Index input_dim, Rng& init);

  Index input_dim() const { return w_c.dim(1); }
  Tensor logits(const Tensor& u) const;
  Tensor probabilities(const Tensor& u) const { return softmax(logits(u)); }
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

/// Inference result for a single image.
struct FusedOutput {
  std::optional<Vector> alphas;  // absent when no attention was applied
  Vector u;
  Vector p;  // (p_real, p_fake)
  int predicted_label = 0;
};

/// Label 1 (fake) when p_fake >= 0.5, so an exact tie flags fake.
int predict_label(Scalar p_fake);

}  // namespace mvnn
