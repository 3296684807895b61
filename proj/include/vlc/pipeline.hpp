#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "vlc/corpus.hpp"
#include "vlc/encoder.hpp"
#include "vlc/knowledge.hpp"
#include "vlc/selection.hpp"
#include "vlc/synth.hpp"

namespace vlc::pipeline {

/// question_id -> deduplicated candidate inferences
using CandidateMap = std::map<std::string, std::vector<knowledge::Inference>>;

CandidateMap generate_candidates(const std::vector<corpus::QuestionRecord>& records, const corpus::ObjectTagMap& tags,
                                 const knowledge::KnowledgePipeline& kp, knowledge::KnowledgeSource& source,
                                 std::vector<std::string>* warnings = nullptr);

/// One (question, candidate, overlap label) pair per candidate of every record.
/// Callers pass training records only.
std::vector<selection::TrainingPair> augmentation_pairs(const std::vector<corpus::QuestionRecord>& records,
                                                        const CandidateMap& candidates, const StopWords& stopwords);

struct Selected {
  std::string question_id;
  std::vector<knowledge::Inference> inferences;  // best first
  std::vector<double> scores;                    // cosine to the question
  Vector question_vec;
  std::vector<Vector> vectors;
};

using SelectionMap = std::map<std::string, Selected>;

Selected select(const corpus::QuestionRecord& record, const std::vector<knowledge::Inference>& candidates,
                const selection::SentenceEncoder& encoder, std::span<const knowledge::RelationType> relations, int k);

SelectionMap select_all(const std::vector<corpus::QuestionRecord>& records, const CandidateMap& candidates,
                        const selection::SentenceEncoder& encoder, std::span<const knowledge::RelationType> relations,
                        int k);

std::string candidates_to_jsonl(const CandidateMap& candidates);
CandidateMap candidates_from_jsonl(std::string_view text, std::string_view origin = "<memory>");
std::string selections_to_jsonl(const SelectionMap& selections);
SelectionMap selections_from_jsonl(std::string_view text, std::string_view origin = "<memory>");

/// Tokenizer from training questions and their selected sentences, region
/// labels from the tag file, answer vocabulary from training answers.
encoder::Checkpoint initial_checkpoint(const encoder::ModelConfig& config,
                                       const std::vector<corpus::QuestionRecord>& train_records,
                                       const SelectionMap& selections, const corpus::ObjectTagMap& tags, int embed_dim);

/// Examples assembled with the checkpoint's tokenizer and config. Weak
/// attention labels are attached in mha mode to the supervised share of
/// records when `with_labels` is set.
std::vector<encoder::Example> make_examples(const std::vector<corpus::QuestionRecord>& records,
                                            const SelectionMap& selections, const corpus::ObjectTagMap& tags,
                                            const encoder::Checkpoint& ckpt, const StopWords& stopwords,
                                            bool with_labels, std::vector<std::string>* warnings = nullptr);

/// Trains on `pre_train` with fusion disabled for `pretrain_epochs`, then on
/// `fine_train` with the checkpoint's configured fusion mode and epochs.
/// Pretraining examples must be assembled with fusion_mode none.
encoder::TrainResult pretrain_then_finetune(encoder::Checkpoint init, int pretrain_epochs,
                                            const std::vector<encoder::Example>& pre_train,
                                            const std::vector<encoder::Example>& pre_val,
                                            const std::vector<encoder::Example>& fine_train,
                                            const std::vector<encoder::Example>& fine_val,
                                            std::vector<std::string>* warnings = nullptr);

/// Mean predicted attention on selected inferences that state the planted
/// fact, over questions where at least one such inference was selected.
struct PlantedAttention {
  double mean_mass = 0.0;
  int questions = 0;
};

PlantedAttention planted_attention(const std::vector<encoder::Prediction>& predictions, const SelectionMap& selections,
                                   const std::map<std::string, synth::PlantedFact>& planted);

/// Index of a selected inference stating the planted fact, or -1.
int planted_slot(const Selected& selected, const synth::PlantedFact& fact);

/// Per-question attention dump line for the analysis command.
nlohmann::json attention_record(const encoder::Prediction& prediction, const Selected* selected,
                                const encoder::Example& example, const corpus::QuestionRecord& record);

/// A synthetic corpus carried through knowledge generation and selection, ready
/// for any number of model configurations.
struct PreparedCorpus {
  synth::SynthCorpus corpus;
  CandidateMap candidates;
  SelectionMap selections;
  selection::Embedder embedder;
  double planted_selected_rate = 0.0;  // share of planted val/test questions whose fact was selected
};

struct PrepareOptions {
  synth::SynthConfig synth;
  int embed_dim = 64;
  std::uint64_t embed_seed = 17;
  bool augment = true;
  selection::AugmentOptions augment_options;
  int k = 5;
};

PreparedCorpus prepare_synthetic(const PrepareOptions& options);

struct ExperimentResult {
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
  PlantedAttention attention;
  std::vector<encoder::EpochLog> log;
};

ExperimentResult run_experiment(const PreparedCorpus& prepared, const encoder::ModelConfig& config);

}  // namespace vlc::pipeline
