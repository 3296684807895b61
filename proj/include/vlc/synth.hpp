#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "vlc/corpus.hpp"
#include "vlc/knowledge.hpp"

namespace vlc::synth {

struct SynthConfig {
  std::uint64_t seed = 1;
  int n_train = 2000;
  int n_val = 300;
  int n_test = 500;
  /// Probability that a question is answerable only through a planted fact.
  double knowledge_strength = 0.8;
  /// Share of (object, relation) facts reserved for val/test questions.
  double held_out_fraction = 0.3;
  /// Distinct objects; beyond the built-in names, pseudo-words are generated.
  int n_objects = 400;
  std::string id_prefix = "q";

  void validate() const;
  nlohmann::json to_json() const;
};

struct PlantedFact {
  std::string object;
  std::string relation;
  std::string answer;
  int template_index = 0;
};

/// A generated corpus. Knowledge questions name an object and ask for one of
/// its relations; their (object, relation) pair is held out of training for
/// val/test, so the answer is available only from the stub knowledge table.
/// The remaining questions ask which object is shown; the answer is the
/// image's single tag.
struct SynthCorpus {
  corpus::Dataset train, val, test;
  corpus::ObjectTagMap tags;
  knowledge::StubSource stub;
  std::map<std::string, PlantedFact> planted;  // question_id -> fact
  nlohmann::json manifest;
};

SynthCorpus generate_synthetic_corpus(const SynthConfig& config);

/// Writes train.json, val.json, test.json, tags.json, stub_knowledge.json and
/// manifest.json into `dir` (created if needed).
void write_synthetic_corpus(const SynthCorpus& corpus, const std::string& dir, const nlohmann::json& extra_meta = {});

/// Reads the planted-fact section of a manifest.
std::map<std::string, PlantedFact> read_planted(const nlohmann::json& manifest);

}  // namespace vlc::synth
