#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vlc/encoder.hpp"
#include "vlc/synth.hpp"

namespace vlc::cli {

inline constexpr const char* kToolVersion = "0.1.0";

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitMissing = 3;

struct PathsConfig {
  std::string corpus_dir;  // train.json, val.json, test.json, tags.json
  std::string stub;        // stub knowledge table
  std::string cache;       // knowledge cache (JSONL)
  std::string wordlists;   // directory; empty = built-in lists
  std::string relations;   // relation/template file; empty = built-in set
  std::string rephrase_rules;
  std::string stopwords;
  std::string pretrain_dir;  // knowledge-free corpus; empty = generated
};

struct KnowledgeConfig {
  std::string source = "stub";  // stub | cache | service
  std::string service_url;
  int beam = 5;
  double dedup_threshold = 0.7;
  int timeout_ms = 10000;
  int max_in_flight = 4;
};

struct SelectionConfig {
  std::string encoder = "embedder";  // embedder | service
  std::string service_url;
  int embed_dim = 64;
  std::uint64_t embed_seed = 17;
  bool augment = true;
  int augment_epochs = 2;
  double augment_lr = 0.02;
};

struct PretrainConfig {
  int epochs = 0;
  int n_train = 2000;
  int n_val = 200;
};

/// Everything a command needs. Empty paths default to locations under `out`.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string out = "run";
  synth::SynthConfig synth;
  PathsConfig paths;
  KnowledgeConfig knowledge;
  SelectionConfig selection;
  encoder::ModelConfig model;
  PretrainConfig pretrain;

  /// Field-level ConfigError on unknown keys, wrong types or bad values.
  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  /// FNV-1a of the canonical config without `out`.
  std::string digest() const;
  /// Applies the seed to the generator, the model and the embedder shuffle.
  void apply_seed(std::uint64_t s);
  void resolve_paths();
};

/// {"tool_version", "config_digest", "seed"}
nlohmann::json artifact_meta(const RunConfig& config);

int run(int argc, char** argv);
int run(const std::vector<std::string>& args);

}  // namespace vlc::cli
