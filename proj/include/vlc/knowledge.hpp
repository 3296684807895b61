#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vlc/corpus.hpp"

namespace vlc::knowledge {

enum class RelationCategory { concept_relation, event_relation };

struct RelationType {
  std::string name;
  std::string templ;  // contains {head} and {tail} exactly once each
  RelationCategory category = RelationCategory::concept_relation;
};

/// Thirty ConceptNet/ATOMIC-style relations with verbalization templates.
const std::vector<RelationType>& default_relations();
std::vector<RelationType> parse_relations(std::string_view json_text);
std::vector<RelationType> load_relations(const std::string& path);
std::string serialize_relations(const std::vector<RelationType>& relations);
void validate_relation(const RelationType& r);

enum class SourceKind { stub, cache, service };
std::string to_string(SourceKind k);

struct Inference {
  std::string relation;
  std::string head;     // the question-object phrase
  std::string subject;  // head-derived subject substituted into the template
  std::string tail;
  int beam_rank = 1;
  std::string sentence;
  SourceKind source = SourceKind::stub;

  bool operator==(const Inference&) const = default;
};

struct QOPhrase {
  std::string declarative;
  std::vector<std::string> tags_used;
  std::string phrase;
};

struct RephraseRule {
  std::string pattern;      // ECMAScript regex, matched case-insensitively against the whole question
  std::string replacement;  // $1-style back-references
};

/// Ordered question-to-declarative rewrite table with a total fallback.
class Rephraser {
 public:
  Rephraser();  // built-in rules
  explicit Rephraser(std::vector<RephraseRule> rules);
  static Rephraser from_file(const std::string& path);

  std::string rephrase(std::string_view question) const;
  const std::vector<RephraseRule>& rules() const { return rules_; }

 private:
  std::vector<RephraseRule> rules_;
  std::vector<std::regex> compiled_;
};

const std::vector<RephraseRule>& default_rephrase_rules();
std::string serialize_rephrase_rules(const std::vector<RephraseRule>& rules);

/// Rephrases with the built-in rule table.
std::string rephrase_question(std::string_view text);

/// Two most confident tags, ties by label; duplicate labels keep the best confidence.
std::vector<corpus::ObjectTag> select_object_tags(const std::vector<corpus::ObjectTag>& tags);

QOPhrase build_qo_phrase(const std::string& declarative, const std::vector<std::string>& tag_labels);

/// Template substitution with the first letter capitalized. nullopt when the
/// tail is empty, in which case the inference is dropped.
std::optional<std::string> verbalize(const RelationType& relation, std::string_view head_subject,
                                     std::string_view tail);

/// One ranked completion reported by a knowledge source.
struct SourceTail {
  std::string relation;
  std::string subject;  // empty: use the phrase's default subject
  std::string tail;
  int rank = 1;
};

class KnowledgeSource {
 public:
  virtual ~KnowledgeSource() = default;
  virtual SourceKind kind() const = 0;
  /// Completions for `phrase` under each relation, at most `beam` per relation,
  /// ordered by rank within a relation. Failures are reported via `warnings`.
  virtual std::vector<SourceTail> generate(const QOPhrase& phrase, std::span<const RelationType> relations, int beam,
                                           std::vector<std::string>* warnings) = 0;
};

/// Deterministic table source: (head pattern, relation) -> ranked tails.
/// A head pattern matches when its words occur contiguously in the phrase;
/// "*" matches every phrase. Matched heads are ordered by first position in
/// the phrase, and their tails are concatenated in that order.
class StubSource : public KnowledgeSource {
 public:
  struct Entry {
    std::string head;
    std::string relation;
    std::vector<std::string> tails;
  };

  StubSource() = default;
  explicit StubSource(std::vector<Entry> entries);
  static StubSource from_json(std::string_view json_text);
  static StubSource from_file(const std::string& path);
  std::string to_json() const;

  SourceKind kind() const override { return SourceKind::stub; }
  std::vector<SourceTail> generate(const QOPhrase& phrase, std::span<const RelationType> relations, int beam,
                                   std::vector<std::string>* warnings) override;

  const std::vector<Entry>& entries() const { return entries_; }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::vector<std::size_t>> by_relation_;
};

struct CacheLine {
  std::string phrase;
  std::string relation;
  int beam_rank = 1;
  std::string tail;
  std::string sentence;
  std::string subject;
};

/// Append-only JSONL cache keyed by (phrase, relation). When constructed with
/// an upstream source, misses are generated upstream and appended.
class CacheSource : public KnowledgeSource {
 public:
  explicit CacheSource(std::string path, std::unique_ptr<KnowledgeSource> upstream = nullptr);

  SourceKind kind() const override { return SourceKind::cache; }
  std::vector<SourceTail> generate(const QOPhrase& phrase, std::span<const RelationType> relations, int beam,
                                   std::vector<std::string>* warnings) override;

  bool contains(const std::string& phrase, const std::string& relation) const;
  std::size_t size() const { return entries_.size(); }
  const std::string& path() const { return path_; }

  static std::vector<CacheLine> parse(std::string_view jsonl, std::string_view origin);

 private:
  void append(const std::vector<CacheLine>& lines);

  std::string path_;
  std::unique_ptr<KnowledgeSource> upstream_;
  std::map<std::pair<std::string, std::string>, std::vector<CacheLine>> entries_;
  mutable std::mutex mutex_;
};

struct ServiceOptions {
  std::string url;  // e.g. http://127.0.0.1:8080
  std::chrono::milliseconds timeout{10000};
  int max_in_flight = 4;
  int retries = 1;
};

/// Client for an external generator: POST /generate.
class ServiceSource : public KnowledgeSource {
 public:
  explicit ServiceSource(ServiceOptions options);
  ~ServiceSource() override;

  SourceKind kind() const override { return SourceKind::service; }
  std::vector<SourceTail> generate(const QOPhrase& phrase, std::span<const RelationType> relations, int beam,
                                   std::vector<std::string>* warnings) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Up to `beam` verbalized inferences per relation, ranks 1..n in source order.
std::vector<Inference> generate_inferences(const QOPhrase& phrase, std::span<const RelationType> relations, int beam,
                                           KnowledgeSource& source, std::vector<std::string>* warnings = nullptr);

/// |T(candidate) ∩ T(kept)| / |T(candidate)| over lowercased word sets.
double token_overlap(std::string_view candidate, std::string_view kept);

/// Drops an inference whose overlap with an earlier kept sentence of the same
/// relation exceeds `threshold`. Earlier means lower beam rank; output keeps input order.
std::vector<Inference> dedup(const std::vector<Inference>& inferences, double threshold = 0.7);

/// Rephrase, pick tags, build the QO phrase, generate and deduplicate.
struct KnowledgePipeline {
  const Rephraser* rephraser = nullptr;
  std::span<const RelationType> relations;
  int beam = 5;
  double dedup_threshold = 0.7;

  QOPhrase phrase_for(const corpus::QuestionRecord& record, const std::vector<corpus::ObjectTag>& tags) const;
  std::vector<Inference> run(const corpus::QuestionRecord& record, const std::vector<corpus::ObjectTag>& tags,
                             KnowledgeSource& source, std::vector<std::string>* warnings = nullptr) const;
};

}  // namespace vlc::knowledge
