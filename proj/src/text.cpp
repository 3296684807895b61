#include "vlc/text.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "vlc/error.hpp"

namespace vlc {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

bool is_terminal_punct(char c) {
  return c == '.' || c == ',' || c == '!' || c == '?' || c == ';' || c == ':';
}

}  // namespace

std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

std::string normalize_answer(std::string_view s) {
  std::string lowered = to_lower(trim(s));
  std::string out;
  out.reserve(lowered.size());
  bool pending_space = false;
  for (char c : lowered) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  while (!out.empty() && (is_terminal_punct(out.back()) || is_space(out.back()))) out.pop_back();
  return out;
}

std::vector<std::string> tokenize(std::string_view s) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char c : s) {
    if (is_alnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

std::set<std::string> token_set(std::string_view s) {
  auto toks = tokenize(s);
  return {toks.begin(), toks.end()};
}

std::vector<std::string> raw_words(std::string_view s) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : s) {
    if (is_alnum(c) || c == '\'') {
      cur.push_back(c);
    } else {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
      if (c == '.' || c == '!' || c == '?') words.emplace_back(1, c);
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

std::vector<std::string> parse_word_list(std::string_view content) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= content.size()) {
    std::size_t nl = content.find('\n', pos);
    if (nl == std::string_view::npos) nl = content.size();
    std::string_view line = content.substr(pos, nl - pos);
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    std::string entry = to_lower(trim(line));
    if (!entry.empty()) out.push_back(std::move(entry));
    pos = nl + 1;
  }
  return out;
}

std::vector<std::string> read_word_list(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open word list: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_word_list(ss.str());
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("cannot open file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write file: " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

const std::vector<std::string>& default_stopwords() {
  static const std::vector<std::string> words = {
      "a",     "an",    "the",   "of",    "to",    "in",    "on",   "at",    "for",  "with",
      "by",    "from",  "and",   "or",    "but",   "is",    "are",  "was",   "were", "be",
      "been",  "being", "it",    "its",   "this",  "that",  "these", "those", "what", "which",
      "who",   "whom",  "where", "when",  "why",   "how",   "do",   "does",  "did",  "has",
      "have",  "had",   "you",   "your",  "one",   "some",  "as",   "if",    "than", "then",
      "there", "can",   "would", "could", "might", "will",  "up",   "so",    "not",  "no"};
  return words;
}

StopWords::StopWords() : StopWords(default_stopwords()) {}

StopWords::StopWords(std::vector<std::string> words) : words_(words.begin(), words.end()) {}

StopWords StopWords::from_file(const std::string& path) { return StopWords(read_word_list(path)); }

std::vector<std::string> StopWords::content_tokens(std::string_view s) const {
  std::vector<std::string> out;
  for (auto& t : tokenize(s))
    if (!contains(t)) out.push_back(std::move(t));
  return out;
}

}  // namespace vlc
