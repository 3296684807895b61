#include "vlc/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <unordered_map>

#include <json.hpp>

#include "vlc/error.hpp"

namespace vlc::corpus {

using nlohmann::json;

namespace {

std::string line_context(std::string_view text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

json parse_json(std::string_view text, std::string_view origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string(origin) + ": " + line_context(text, e.byte) + ": " + e.what());
  }
}

template <typename T>
T field(const json& obj, const char* key, std::string_view where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ValidationError(std::string(where) + ": missing field '" + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ValidationError(std::string(where) + ": field '" + key + "' has the wrong type");
  }
}

bool contains_sequence(const std::vector<std::string>& haystack, const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > haystack.size()) return false;
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) != haystack.end();
}

bool contains_any(const std::vector<std::string>& tokens, const std::vector<std::string>& entries) {
  for (const auto& e : entries)
    if (contains_sequence(tokens, tokenize(e))) return true;
  return false;
}

}  // namespace

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ValidationError("unknown split '" + std::string(s) + "'");
}

int QuestionRecord::total_count() const {
  int total = 0;
  for (const auto& a : answers) total += a.count;
  return total;
}

void validate_record(const QuestionRecord& r, int annotation_count) {
  const std::string where = "record " + r.question_id;
  if (r.question_id.empty()) throw ValidationError("record with empty question_id");
  if (r.answers.empty()) throw ValidationError(where + ": no answers");
  for (const auto& a : r.answers) {
    if (a.count <= 0) throw ValidationError(where + ": answer '" + a.answer + "' has non-positive count");
    if (a.answer.empty()) throw ValidationError(where + ": empty answer string");
    if (a.answer != normalize_answer(a.answer))
      throw ValidationError(where + ": answer '" + a.answer + "' is not normalized");
  }
  if (r.total_count() != annotation_count)
    throw ValidationError(where + ": annotator counts sum to " + std::to_string(r.total_count()) +
                          ", expected " + std::to_string(annotation_count));
}

void validate_tag(const ObjectTag& t) {
  if (t.label.empty()) throw ValidationError("object tag with empty label");
  if (!(t.confidence >= 0.0 && t.confidence <= 1.0))
    throw ValidationError("object tag '" + t.label + "': confidence outside [0,1]");
  for (double v : t.bbox)
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("object tag '" + t.label + "': bbox outside [0,1]");
  if (!(t.bbox[0] < t.bbox[2] && t.bbox[1] < t.bbox[3]))
    throw ValidationError("object tag '" + t.label + "': degenerate bbox");
}

Dataset parse_dataset(std::string_view json_text, Split split, std::string_view origin) {
  const json doc = parse_json(json_text, origin);
  if (!doc.is_object()) throw ValidationError(std::string(origin) + ": dataset must be a JSON object");
  Dataset ds;
  ds.annotation_count = field<int>(doc, "annotation_count", origin);
  ds.okvqa_style = field<bool>(doc, "okvqa_style", origin);
  if (ds.annotation_count <= 0) throw ValidationError(std::string(origin) + ": annotation_count must be positive");
  const json records = field<json>(doc, "records", origin);
  if (!records.is_array()) throw ValidationError(std::string(origin) + ": 'records' must be an array");

  for (const auto& jr : records) {
    QuestionRecord r;
    r.question_id = field<std::string>(jr, "question_id", origin);
    const std::string where = std::string(origin) + ": record " + r.question_id;
    r.image_id = field<std::string>(jr, "image_id", where);
    r.text = field<std::string>(jr, "question", where);
    r.split = parse_split(field<std::string>(jr, "split", where));
    for (const auto& ja : field<json>(jr, "answers", where)) {
      AnswerCount a{normalize_answer(field<std::string>(ja, "answer", where)), field<int>(ja, "count", where)};
      auto same = std::find_if(r.answers.begin(), r.answers.end(),
                               [&](const AnswerCount& x) { return x.answer == a.answer; });
      if (same != r.answers.end() && a.count > 0 && same->count > 0) {
        same->count += a.count;
      } else {
        r.answers.push_back(std::move(a));
      }
    }
    if (ds.okvqa_style) {
      for (auto& a : r.answers) a.count *= 2;
    }
    validate_record(r, ds.annotation_count);
    if (r.split == split) ds.records.push_back(std::move(r));
  }
  std::sort(ds.records.begin(), ds.records.end(),
            [](const QuestionRecord& a, const QuestionRecord& b) { return a.question_id < b.question_id; });
  for (std::size_t i = 1; i < ds.records.size(); ++i)
    if (ds.records[i].question_id == ds.records[i - 1].question_id)
      throw ValidationError(std::string(origin) + ": duplicate question_id " + ds.records[i].question_id);
  return ds;
}

Dataset load_dataset(const std::string& path, Split split) { return parse_dataset(read_file(path), split, path); }

std::string serialize_dataset(const Dataset& ds) {
  json doc;
  doc["annotation_count"] = ds.annotation_count;
  doc["okvqa_style"] = ds.okvqa_style;
  json records = json::array();
  for (const auto& r : ds.records) {
    json answers = json::array();
    for (const auto& a : r.answers)
      answers.push_back({{"answer", a.answer}, {"count", ds.okvqa_style ? a.count / 2 : a.count}});
    records.push_back({{"question_id", r.question_id},
                       {"image_id", r.image_id},
                       {"question", r.text},
                       {"answers", std::move(answers)},
                       {"split", to_string(r.split)}});
  }
  doc["records"] = std::move(records);
  return doc.dump(1) + "\n";
}

void save_dataset(const std::string& path, const Dataset& ds) { write_file(path, serialize_dataset(ds)); }

Dataset import_okvqa(const std::string& questions_path, const std::string& annotations_path, Split split) {
  const json questions = parse_json(read_file(questions_path), questions_path);
  const json annotations = parse_json(read_file(annotations_path), annotations_path);
  std::unordered_map<long long, std::string> text_by_id;
  for (const auto& q : field<json>(questions, "questions", questions_path))
    text_by_id[field<long long>(q, "question_id", questions_path)] = field<std::string>(q, "question", questions_path);

  Dataset ds;
  ds.annotation_count = 10;
  ds.okvqa_style = false;  // native files already repeat each of the five answers
  for (const auto& a : field<json>(annotations, "annotations", annotations_path)) {
    QuestionRecord r;
    const auto qid = field<long long>(a, "question_id", annotations_path);
    r.question_id = std::to_string(qid);
    r.image_id = std::to_string(field<long long>(a, "image_id", annotations_path));
    r.text = text_by_id.count(qid) ? text_by_id[qid] : std::string();
    r.split = split;
    std::map<std::string, int> counts;
    for (const auto& ans : field<json>(a, "answers", annotations_path)) {
      std::string norm = normalize_answer(field<std::string>(ans, "answer", annotations_path));
      if (!norm.empty()) ++counts[norm];
    }
    for (auto& [ans, c] : counts) r.answers.push_back({ans, c});
    ds.records.push_back(std::move(r));
  }
  std::sort(ds.records.begin(), ds.records.end(),
            [](const QuestionRecord& x, const QuestionRecord& y) { return x.question_id < y.question_id; });
  return ds;
}

ObjectTagMap parse_object_tags(std::string_view json_text, std::string_view origin) {
  const json doc = parse_json(json_text, origin);
  if (!doc.is_object()) throw ValidationError(std::string(origin) + ": object tags must be a JSON map");
  ObjectTagMap out;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string where = std::string(origin) + ": image " + it.key();
    auto& list = out[it.key()];
    for (const auto& jt : it.value()) {
      ObjectTag t;
      t.label = field<std::string>(jt, "label", where);
      t.confidence = field<double>(jt, "confidence", where);
      auto bbox = field<std::vector<double>>(jt, "bbox", where);
      if (bbox.size() != 4) throw ValidationError(where + ": bbox must have 4 values");
      std::copy(bbox.begin(), bbox.end(), t.bbox.begin());
      validate_tag(t);
      list.push_back(std::move(t));
    }
  }
  return out;
}

ObjectTagMap load_object_tags(const std::string& path) { return parse_object_tags(read_file(path), path); }

std::string serialize_object_tags(const ObjectTagMap& tags) {
  json doc = json::object();
  for (const auto& [image, list] : tags) {
    json arr = json::array();
    for (const auto& t : list)
      arr.push_back({{"label", t.label},
                     {"confidence", t.confidence},
                     {"bbox", std::vector<double>(t.bbox.begin(), t.bbox.end())}});
    doc[image] = std::move(arr);
  }
  return doc.dump(1) + "\n";
}

AnswerVocabulary::AnswerVocabulary() : AnswerVocabulary(std::vector<std::string>{}) {}

AnswerVocabulary::AnswerVocabulary(std::vector<std::string> sorted_entries) : entries_(std::move(sorted_entries)) {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (!index_.emplace(entries_[i], static_cast<int>(i)).second)
      throw ValidationError("duplicate answer vocabulary entry '" + entries_[i] + "'");
  }
  auto unk = index_.find(kUnk);
  if (unk == index_.end()) {
    entries_.emplace_back(kUnk);
    unk_index_ = static_cast<int>(entries_.size()) - 1;
    index_.emplace(kUnk, unk_index_);
  } else {
    unk_index_ = unk->second;
  }
}

int AnswerVocabulary::lookup(const std::string& answer) const {
  auto it = index_.find(answer);
  return it == index_.end() ? unk_index_ : it->second;
}

AnswerVocabulary build_answer_vocabulary(const std::vector<QuestionRecord>& records, int min_count) {
  std::map<std::string, long long> totals;
  for (const auto& r : records)
    for (const auto& a : r.answers)
      if (!a.answer.empty()) totals[a.answer] += a.count;
  std::vector<std::string> entries;
  for (const auto& [answer, total] : totals)
    if (total >= min_count && answer != AnswerVocabulary::kUnk) entries.push_back(answer);
  return AnswerVocabulary(std::move(entries));
}

double vqa_accuracy(const std::string& prediction, const std::vector<AnswerCount>& answers) {
  int matches = 0;
  for (const auto& a : answers)
    if (a.answer == prediction) matches += a.count;
  return std::min(static_cast<double>(matches) / 3.0, 1.0);
}

std::string to_string(SubsetReason r) {
  switch (r) {
    case SubsetReason::none: return "none";
    case SubsetReason::factual: return "factual";
    case SubsetReason::numerical: return "numerical";
    case SubsetReason::visual: return "visual";
  }
  return "none";
}

WordLists WordLists::defaults() {
  WordLists w;
  w.gazetteer = {"usa",      "america",  "united states", "china",     "japan",    "india",    "germany",
                 "france",   "italy",    "spain",         "england",   "britain",  "canada",   "mexico",
                 "russia",   "australia", "brazil",       "africa",    "europe",   "asia",     "new york",
                 "london",   "paris",    "tokyo",         "chicago",   "california", "texas",  "hawaii",
                 "nike",     "adidas",   "pepsi",         "coca cola", "coke",     "starbucks", "mcdonalds",
                 "google",   "microsoft", "samsung",      "sony",      "nintendo", "honda",    "toyota",
                 "ford",     "boeing",   "delta",         "amtrak",    "yankees",  "lakers",   "christmas",
                 "halloween", "easter",  "thanksgiving"};
  w.number_words = {"zero",     "one",     "two",      "three",   "four",    "five",    "six",     "seven",
                    "eight",    "nine",    "ten",      "eleven",  "twelve",  "thirteen", "fourteen", "fifteen",
                    "sixteen",  "seventeen", "eighteen", "nineteen", "twenty", "thirty", "forty",  "fifty",
                    "sixty",    "seventy", "eighty",   "ninety",  "hundred", "thousand", "million", "dozen",
                    "first",    "second",  "third",    "half"};
  w.datetime_words = {"century", "centuries", "decade", "decades", "year",  "years", "month", "months",
                      "week",    "weeks",     "day",    "days",    "hour",  "hours", "minute", "minutes",
                      "date",    "era",       "time",   "o'clock", "clock", "ago",   "age"};
  w.directional_words = {"left of", "right of", "left",   "right",  "behind", "above",      "below",
                         "under",   "beneath",  "next to", "beside", "top",    "bottom",     "front",
                         "background", "foreground", "near", "closest", "farthest", "facing"};
  w.symbol_words = {"mascot", "sign",  "logo",  "symbol", "emblem", "flag", "written",
                    "letter", "letters", "text", "word",  "words",  "say",  "says"};
  return w;
}

WordLists WordLists::load(const std::string& dir) {
  WordLists w;
  w.gazetteer = read_word_list(dir + "/gazetteer.txt");
  w.number_words = read_word_list(dir + "/number_words.txt");
  w.datetime_words = read_word_list(dir + "/datetime_words.txt");
  w.directional_words = read_word_list(dir + "/directional_words.txt");
  w.symbol_words = read_word_list(dir + "/symbol_words.txt");
  return w;
}

SubsetVerdict subset_filter(const QuestionRecord& record, const WordLists& lists) {
  const auto question_tokens = tokenize(record.text);

  bool factual = contains_any(question_tokens, lists.gazetteer);
  for (const auto& a : record.answers) factual = factual || contains_any(tokenize(a.answer), lists.gazetteer);
  if (!factual) {
    bool sentence_start = true;
    for (const auto& w : raw_words(record.text)) {
      if (w == "." || w == "!" || w == "?") {
        sentence_start = true;
        continue;
      }
      if (!sentence_start && w != "I" && std::isupper(static_cast<unsigned char>(w[0]))) {
        factual = true;
        break;
      }
      sentence_start = false;
    }
  }
  if (factual) return {false, SubsetReason::factual};

  bool numerical = contains_any(question_tokens, lists.datetime_words);
  for (const auto& a : record.answers) {
    if (std::any_of(a.answer.begin(), a.answer.end(), [](unsigned char c) { return std::isdigit(c) != 0; }))
      numerical = true;
    numerical = numerical || contains_any(tokenize(a.answer), lists.number_words);
  }
  if (numerical) return {false, SubsetReason::numerical};

  if (contains_any(question_tokens, lists.directional_words) || contains_any(question_tokens, lists.symbol_words))
    return {false, SubsetReason::visual};
  return {true, SubsetReason::none};
}

}  // namespace vlc::corpus
