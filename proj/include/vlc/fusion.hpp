#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "vlc/corpus.hpp"
#include "vlc/knowledge.hpp"
#include "vlc/linalg.hpp"
#include "vlc/text.hpp"

namespace vlc::fusion {

/// Multi-head attention that reads a single fused vector out of k inference
/// embeddings plus the question embedding. The question supplies the one query;
/// all k+1 vectors supply keys and values.
struct FusionParameters {
  int input_dim = 0;  // d_s
  int model_dim = 0;  // d_model
  int heads = 0;
  std::vector<Matrix> query;  // heads x (d_h x d_s)
  std::vector<Matrix> key;
  std::vector<Matrix> value;
  Matrix output;              // d_model x d_model
  Vector output_bias;         // d_model

  int head_dim() const { return model_dim / heads; }

  /// Zero-filled parameters with the right shapes.
  static FusionParameters zeros(int input_dim, int model_dim, int heads);
  /// Gaussian initialization with std 1/sqrt(fan_in).
  static FusionParameters random(int input_dim, int model_dim, int heads, std::mt19937_64& rng);

  void validate() const;
  void set_zero();
  void add_scaled(const FusionParameters& other, double scale);
};

using FusionGradients = FusionParameters;

struct AttentionDistribution {
  std::vector<double> weights;  // slots 0..k-1 inferences, slot k the question

  std::size_t size() const { return weights.size(); }
  bool valid(double tol = 1e-6) const;
};

/// Intermediate values of one forward pass, consumed by fuse_backward.
struct FusionCache {
  bool ready = false;
  Matrix inputs;                   // (k+1) x d_s, last row the question
  std::vector<Vector> queries;     // per head, d_h
  std::vector<Matrix> keys;        // per head, (k+1) x d_h
  std::vector<Matrix> values;      // per head, (k+1) x d_h
  std::vector<Vector> attention;   // per head softmax, k+1
  Vector concat;                   // d_model
};

struct FusionOutput {
  Vector fused;  // F
  AttentionDistribution attention;
};

FusionOutput fuse(const Vector& question, std::span<const Vector> inferences, const FusionParameters& params,
                  FusionCache* cache = nullptr);

struct FusionInputGradients {
  FusionGradients params;
  Vector question;
  std::vector<Vector> inferences;
};

/// Exact gradients given dL/dF and dL/d(attention distribution).
FusionInputGradients fuse_backward(const FusionParameters& params, const FusionCache& cache, const Vector& grad_fused,
                                   const std::vector<double>& grad_attention);

/// Raw 0.05 everywhere, 0.8 on inferences that contain an answer word (or on
/// the question slot when none do), normalized to sum to one.
AttentionDistribution weak_labels(std::span<const knowledge::Inference> selected,
                                  const std::vector<corpus::AnswerCount>& answers, const StopWords& stopwords);

inline constexpr double kLabelBase = 0.05;
inline constexpr double kLabelHit = 0.8;
inline constexpr double kProbabilityFloor = 1e-12;

/// -sum label_i * log(max(predicted_i, 1e-12)).
double attention_loss(const AttentionDistribution& predicted, const AttentionDistribution& label);

/// d attention_loss / d predicted.
std::vector<double> attention_loss_gradient(const AttentionDistribution& predicted, const AttentionDistribution& label);

}  // namespace vlc::fusion
