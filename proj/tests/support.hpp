#pragma once

#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vlc/corpus.hpp"
#include "vlc/encoder.hpp"
#include "vlc/fusion.hpp"
#include "vlc/knowledge.hpp"
#include "vlc/selection.hpp"

namespace testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

std::string data_dir();

// Brute-force soft accuracy: walk every annotation slot, count equal strings.
double oracle_vqa_accuracy(const std::string& prediction, const std::vector<vlc::corpus::AnswerCount>& answers);

// Step-by-step fusion forward with explicit loops, no Eigen products.
struct OracleFusion {
  std::vector<double> fused;
  std::vector<double> attention;
};
OracleFusion oracle_fuse(const vlc::Vector& question, std::span<const vlc::Vector> inferences,
                         const vlc::fusion::FusionParameters& params);

// Full sort of every candidate under the declared order, truncated to k.
std::vector<std::size_t> oracle_rank(const vlc::selection::EmbeddingVector& question,
                                     const std::vector<vlc::selection::Candidate>& candidates,
                                     std::span<const vlc::knowledge::RelationType> relations, int k);

vlc::Vector random_vector(int dim, std::mt19937_64& rng);

struct GradCheck {
  double worst_relative = 0.0;
  double worst_absolute = 0.0;
  double largest_gradient = 0.0;
  std::string worst_name;
  long checked = 0;
};

// Central differences over every fusion parameter and input, for the loss
// <grad_fused, F> + attention_weight * attention_loss(attention, label).
GradCheck check_fusion_gradients(std::uint64_t seed, int input_dim, int model_dim, int heads, int k,
                                 double attention_weight);

// Central differences over every parameter of a tiny encoder
// (d_model 8, 1 layer, 2 heads, 3-token question, k = 2, 2 regions).
GradCheck check_encoder_gradients(std::uint64_t seed, vlc::encoder::FusionMode mode);

inline constexpr double kGradTolerance = 1e-4;
// Differences this small are below central-difference resolution at step 1e-5.
inline constexpr double kGradAbsFloor = 1e-8;

}  // namespace testing
