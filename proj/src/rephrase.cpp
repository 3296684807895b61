#include <algorithm>
#include <cctype>
#include <set>

#include <json.hpp>

#include "vlc/error.hpp"
#include "vlc/knowledge.hpp"

namespace vlc::knowledge {

using nlohmann::json;

namespace {

const std::set<std::string>& question_openers() {
  static const std::set<std::string> words = {"what",  "which", "where", "why",    "how",   "who",  "whom",
                                              "whose", "when",  "is",    "are",    "was",   "were", "can",
                                              "could", "do",    "does",  "did",    "would", "should", "will"};
  return words;
}

const std::set<std::string>& wh_words() {
  static const std::set<std::string> words = {"what", "which", "where", "why", "how", "who", "whom", "whose", "when"};
  return words;
}

std::string capitalize(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

std::string strip_question_mark(std::string s) {
  while (!s.empty() && (s.back() == '?' || std::isspace(static_cast<unsigned char>(s.back())))) s.pop_back();
  return s;
}

std::string first_word_lower(const std::string& s) {
  std::string w;
  for (char c : s) {
    if (std::isalpha(static_cast<unsigned char>(c))) {
      w.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else {
      break;
    }
  }
  return w;
}

}  // namespace

const std::vector<RephraseRule>& default_rephrase_rules() {
  static const std::vector<RephraseRule> rules = {
      {R"(what is the purpose of the umbrella\s*\??)", "The purpose of the umbrellas is"},
      {R"(what (is|are|was|were) the (\w+) of (.+?)\s*\??)", "The $2 of $3 $1"},
      {R"(what (\w+) (is|are) (the|this|that|these|those) (.+?)\s*\??)", "The $1 of $3 $4 $2"},
      {R"((?:what|which) (is|are|was|were) (the|this|that|these|those|a|an) (\w+) (.+?)\s*\??)", "$2 $3 $1 $4"},
      {R"((?:what|which) (is|are|was|were) (the|this|that|these|those|a|an) (\w+)\s*\??)", "$2 $3 $1"},
      {R"(what (can|could|would|might|do|does|did|should) (the|this|that|a|an) (\w+) (.+?)\s*\??)", "$2 $3 $1 $4"},
      {R"(where (might|would|could|can|do|does|should) (?:one|you|someone|people|a person) (.+?)\s*\??)",
       "One $1 $2 at"},
      {R"(where (is|are|was|were) (the|this|that|these|those|a|an) (\w+) (.+?)\s*\??)", "$2 $3 $1 $4 at"},
      {R"(where (is|are|was|were) (.+?)\s*\??)", "$2 $1 at"},
      {R"(why (?:do|does|did|would|might|is|are|was|were) (.+?)\s*\??)", "$1 because"},
      {R"(how (?:do|does|did|can|could|would|is|are) (.+?)\s*\??)", "$1 by"},
      {R"(who (is|are|was|were) (.+?)\s*\??)", "$2 $1"},
      {R"(who (\w+) (.+?)\s*\??)", "The one who $1 $2 is"},
  };
  return rules;
}

std::string serialize_rephrase_rules(const std::vector<RephraseRule>& rules) {
  json doc = json::array();
  for (const auto& r : rules) doc.push_back({{"pattern", r.pattern}, {"replacement", r.replacement}});
  return doc.dump(1) + "\n";
}

Rephraser::Rephraser() : Rephraser(default_rephrase_rules()) {}

Rephraser::Rephraser(std::vector<RephraseRule> rules) : rules_(std::move(rules)) {
  compiled_.reserve(rules_.size());
  for (const auto& r : rules_) {
    try {
      compiled_.emplace_back(r.pattern, std::regex::ECMAScript | std::regex::icase);
    } catch (const std::regex_error& e) {
      throw ConfigError("invalid rephrase pattern '" + r.pattern + "': " + e.what());
    }
  }
}

Rephraser Rephraser::from_file(const std::string& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
  std::vector<RephraseRule> rules;
  try {
    for (const auto& j : doc) rules.push_back({j.at("pattern").get<std::string>(), j.at("replacement").get<std::string>()});
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return Rephraser(std::move(rules));
}

std::string Rephraser::rephrase(std::string_view question) const {
  const std::string text = trim(question);
  const bool is_question = !text.empty() && text.back() == '?';
  if (!is_question && question_openers().count(first_word_lower(text)) == 0) return text;

  for (const auto& re : compiled_) {
    std::smatch m;
    if (std::regex_match(text, m, re)) {
      std::string out = m.format(rules_[static_cast<std::size_t>(&re - compiled_.data())].replacement);
      return capitalize(strip_question_mark(trim(out)));
    }
  }

  std::string body = strip_question_mark(text);
  if (wh_words().count(first_word_lower(body)) != 0) {
    auto space = body.find(' ');
    body = space == std::string::npos ? std::string() : trim(body.substr(space + 1));
  }
  return capitalize(body.empty() ? std::string("It is") : body + " is");
}

std::string rephrase_question(std::string_view text) {
  static const Rephraser rephraser;
  return rephraser.rephrase(text);
}

std::vector<corpus::ObjectTag> select_object_tags(const std::vector<corpus::ObjectTag>& tags) {
  std::vector<corpus::ObjectTag> unique;
  for (const auto& t : tags) {
    auto it = std::find_if(unique.begin(), unique.end(), [&](const auto& u) { return u.label == t.label; });
    if (it == unique.end()) {
      unique.push_back(t);
    } else if (t.confidence > it->confidence) {
      *it = t;
    }
  }
  std::sort(unique.begin(), unique.end(), [](const auto& a, const auto& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return a.label < b.label;
  });
  if (unique.size() > 2) unique.resize(2);
  return unique;
}

QOPhrase build_qo_phrase(const std::string& declarative, const std::vector<std::string>& tag_labels) {
  QOPhrase p;
  p.declarative = declarative;
  p.tags_used.assign(tag_labels.begin(), tag_labels.begin() + static_cast<long>(std::min<std::size_t>(2, tag_labels.size())));
  p.phrase = declarative;
  if (!p.tags_used.empty()) {
    p.phrase += ", with " + p.tags_used[0];
    if (p.tags_used.size() > 1) p.phrase += " and " + p.tags_used[1];
  }
  return p;
}

std::optional<std::string> verbalize(const RelationType& relation, std::string_view head_subject,
                                     std::string_view tail) {
  const std::string t = trim(tail);
  if (t.empty()) return std::nullopt;
  std::string out = relation.templ;
  auto replace_once = [&out](const std::string& key, std::string_view value) {
    auto pos = out.find(key);
    if (pos == std::string::npos) throw ConfigError("template missing " + key);
    out.replace(pos, key.size(), value);
  };
  replace_once("{head}", trim(head_subject));
  replace_once("{tail}", t);
  return capitalize(std::move(out));
}

}  // namespace vlc::knowledge
