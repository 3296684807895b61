#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "vlc/text.hpp"

namespace vlc::corpus {

enum class Split { train, val, test };

std::string to_string(Split s);
Split parse_split(std::string_view s);

struct AnswerCount {
  std::string answer;
  int count = 0;

  bool operator==(const AnswerCount&) const = default;
};

struct QuestionRecord {
  std::string question_id;
  std::string image_id;
  std::string text;
  std::vector<AnswerCount> answers;
  Split split = Split::train;

  int total_count() const;
  bool operator==(const QuestionRecord&) const = default;
};

struct ObjectTag {
  std::string label;
  double confidence = 0.0;
  std::array<double, 4> bbox{};  // x1, y1, x2, y2 normalized to [0, 1]

  bool operator==(const ObjectTag&) const = default;
};

/// A dataset file: records share one annotation count. OK-VQA style files list
/// five answers per question; ingestion doubles their counts.
struct Dataset {
  int annotation_count = 10;
  bool okvqa_style = false;
  std::vector<QuestionRecord> records;
};

using ObjectTagMap = std::map<std::string, std::vector<ObjectTag>>;

/// Parses and validates dataset JSON text, keeping records of `split`.
/// `origin` names the source in error messages.
Dataset parse_dataset(std::string_view json_text, Split split, std::string_view origin = "<memory>");
Dataset load_dataset(const std::string& path, Split split);
/// Inverse of load_dataset: OK-VQA style counts are halved on write.
std::string serialize_dataset(const Dataset& ds);
void save_dataset(const std::string& path, const Dataset& ds);

/// Converts the native OK-VQA question + annotation files into a Dataset.
Dataset import_okvqa(const std::string& questions_path, const std::string& annotations_path, Split split);

ObjectTagMap parse_object_tags(std::string_view json_text, std::string_view origin = "<memory>");
ObjectTagMap load_object_tags(const std::string& path);
std::string serialize_object_tags(const ObjectTagMap& tags);

void validate_record(const QuestionRecord& r, int annotation_count);
void validate_tag(const ObjectTag& t);

class AnswerVocabulary {
 public:
  static constexpr const char* kUnk = "[UNK]";

  AnswerVocabulary();  // just UNK
  explicit AnswerVocabulary(std::vector<std::string> sorted_entries);

  std::size_t size() const { return entries_.size(); }
  int unk_index() const { return unk_index_; }
  int lookup(const std::string& answer) const;
  const std::string& at(int index) const { return entries_.at(static_cast<std::size_t>(index)); }
  const std::vector<std::string>& entries() const { return entries_; }

  bool operator==(const AnswerVocabulary& o) const { return entries_ == o.entries_; }

 private:
  std::vector<std::string> entries_;
  std::unordered_map<std::string, int> index_;
  int unk_index_ = 0;
};

/// Answers whose annotator-weighted count across `records` is at least
/// `min_count`, sorted, with UNK appended last. Empty answers are ignored.
AnswerVocabulary build_answer_vocabulary(const std::vector<QuestionRecord>& records, int min_count = 10);

/// Soft accuracy: min(#annotators who gave `prediction` / 3, 1).
double vqa_accuracy(const std::string& prediction, const std::vector<AnswerCount>& answers);

enum class SubsetReason { none, factual, numerical, visual };
std::string to_string(SubsetReason r);

struct SubsetVerdict {
  bool retained = true;
  SubsetReason reason = SubsetReason::none;
};

struct WordLists {
  std::vector<std::string> gazetteer;
  std::vector<std::string> number_words;
  std::vector<std::string> datetime_words;
  std::vector<std::string> directional_words;
  std::vector<std::string> symbol_words;

  static WordLists defaults();
  /// Reads gazetteer.txt, number_words.txt, datetime_words.txt,
  /// directional_words.txt and symbol_words.txt from `dir`.
  static WordLists load(const std::string& dir);
};

/// Classifies a question as commonsense-dependent (retained) or not.
/// Precedence: factual > numerical > visual.
SubsetVerdict subset_filter(const QuestionRecord& record, const WordLists& lists);

}  // namespace vlc::corpus
