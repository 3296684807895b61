#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vlc/corpus.hpp"
#include "vlc/knowledge.hpp"
#include "vlc/linalg.hpp"
#include "vlc/text.hpp"

namespace vlc::selection {

struct EmbeddingVector {
  Vector values;
  bool normalized = false;  // false only for the zero vector of an empty text

  int dim() const { return static_cast<int>(values.size()); }
};

double cosine(const Vector& a, const Vector& b);

/// Anything that maps a sentence into a fixed-dimension space.
class SentenceEncoder {
 public:
  virtual ~SentenceEncoder() = default;
  virtual int dim() const = 0;
  virtual EmbeddingVector encode(const std::string& text) const = 0;
  virtual std::vector<EmbeddingVector> encode_batch(const std::vector<std::string>& texts) const;
};

/// Trainable bag-of-tokens sentence embedder. Tokens without a learned vector
/// use a unit vector drawn from a generator seeded by (seed, token).
class Embedder : public SentenceEncoder {
 public:
  explicit Embedder(int dim = 64, std::uint64_t seed = 17);

  int dim() const override { return dim_; }
  std::uint64_t seed() const { return seed_; }
  bool trained() const { return trained_; }
  void set_trained(bool t) { trained_ = t; }

  EmbeddingVector encode(const std::string& text) const override;

  /// Unnormalized mean of token vectors; zero for an empty token list.
  Vector mean_vector(const std::vector<std::string>& tokens) const;
  Vector token_vector(const std::string& token) const;
  Vector& mutable_token(const std::string& token);

  const std::unordered_map<std::string, Vector>& table() const { return table_; }

  std::string to_json() const;
  static Embedder from_json(std::string_view text);
  void save(const std::string& path) const;
  static Embedder load(const std::string& path);

  bool operator==(const Embedder& o) const;

 private:
  int dim_;
  std::uint64_t seed_;
  bool trained_ = false;
  std::unordered_map<std::string, Vector> table_;
};

EmbeddingVector embed(const SentenceEncoder& encoder, const std::string& text);

struct Candidate {
  knowledge::Inference inference;
  EmbeddingVector vector;
};

/// Top-K candidates by cosine to the question, descending. Ties fall back to
/// relation order in `relations`, then beam rank, then sentence. Zero
/// vectors rank after every nonzero candidate.
std::vector<knowledge::Inference> rank_and_select(const EmbeddingVector& question, const std::vector<Candidate>& candidates,
                                                  std::span<const knowledge::RelationType> relations, int k = 5);

/// Same ordering, returning candidate indices.
std::vector<std::size_t> rank_indices(const EmbeddingVector& question, const std::vector<Candidate>& candidates,
                                      std::span<const knowledge::RelationType> relations, int k);

/// Annotator-weighted share of answers whose content tokens all occur in the sentence.
double label_similarity(const std::string& sentence, const std::vector<corpus::AnswerCount>& answers,
                        const StopWords& stopwords);

/// True when the sentence contains any content token of any answer.
bool contains_answer_token(const std::string& sentence, const std::vector<corpus::AnswerCount>& answers,
                           const StopWords& stopwords);

struct TrainingPair {
  std::string question;
  std::string sentence;
  double score = 0.0;
};

/// Mean over pairs of (cos(q, s) - score)^2 and, when `grads` is non-null,
/// its gradient with respect to every touched token vector.
double augment_loss(const Embedder& embedder, std::span<const TrainingPair> pairs,
                    std::unordered_map<std::string, Vector>* grads = nullptr);

struct AugmentOptions {
  int epochs = 2;
  double learning_rate = 0.02;
  std::uint64_t shuffle_seed = 1;
};

/// Per-pair gradient descent on the cosine-MSE loss. Returns the warning text
/// when there is nothing to train on, else empty.
std::string augment_train(Embedder& embedder, std::span<const TrainingPair> pairs, const AugmentOptions& options);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

struct EmbeddingServiceOptions {
  std::string url;
  std::chrono::milliseconds timeout{10000};
};

/// Client for POST /embed. The dimension is fixed by the first reply.
class ServiceEncoder : public SentenceEncoder {
 public:
  explicit ServiceEncoder(EmbeddingServiceOptions options);

  int dim() const override;
  EmbeddingVector encode(const std::string& text) const override;
  std::vector<EmbeddingVector> encode_batch(const std::vector<std::string>& texts) const override;

 private:
  EmbeddingServiceOptions options_;
  mutable int dim_ = -1;
};

}  // namespace vlc::selection
