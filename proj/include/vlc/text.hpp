#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace vlc {

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);

/// Canonical answer form shared by ingestion, vocabulary building and scoring:
/// lowercase, trimmed, internal whitespace collapsed, terminal punctuation removed.
std::string normalize_answer(std::string_view s);

/// Lowercase alphanumeric runs; everything else separates tokens.
std::vector<std::string> tokenize(std::string_view s);

/// Distinct tokens of `s` (lowercased, punctuation stripped).
std::set<std::string> token_set(std::string_view s);

/// Tokens that preserve original case, split on whitespace and punctuation.
std::vector<std::string> raw_words(std::string_view s);

/// Reads a UTF-8 word list: one entry per line, `#` starts a comment,
/// blank lines ignored, entries lowercased and trimmed.
std::vector<std::string> read_word_list(const std::string& path);
std::vector<std::string> parse_word_list(std::string_view content);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

/// Function words excluded from answer-containment tests.
class StopWords {
 public:
  StopWords();  // built-in list
  explicit StopWords(std::vector<std::string> words);
  static StopWords from_file(const std::string& path);

  bool contains(const std::string& token) const { return words_.count(token) != 0; }
  const std::unordered_set<std::string>& words() const { return words_; }

  /// Tokens of `s` that are not stop words.
  std::vector<std::string> content_tokens(std::string_view s) const;

 private:
  std::unordered_set<std::string> words_;
};

const std::vector<std::string>& default_stopwords();

}  // namespace vlc
