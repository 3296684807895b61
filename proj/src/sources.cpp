#include <algorithm>
#include <fstream>
#include <semaphore>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

#include "vlc/error.hpp"
#include "vlc/knowledge.hpp"

namespace vlc::knowledge {

using nlohmann::json;

namespace {

/// Position of the first contiguous occurrence of `needle` in `hay`, or npos.
std::size_t find_words(const std::vector<std::string>& hay, const std::vector<std::string>& needle) {
  if (needle.empty()) return std::string::npos;
  auto it = std::search(hay.begin(), hay.end(), needle.begin(), needle.end());
  return it == hay.end() ? std::string::npos : static_cast<std::size_t>(it - hay.begin());
}

std::string default_subject(const QOPhrase& phrase) {
  if (!phrase.tags_used.empty()) return phrase.tags_used.front();
  std::string d = phrase.declarative;
  if (d.size() > 3 && d.compare(d.size() - 3, 3, " is") == 0) d.resize(d.size() - 3);
  return d;
}

const RelationType* find_relation(std::span<const RelationType> relations, const std::string& name) {
  for (const auto& r : relations)
    if (r.name == name) return &r;
  return nullptr;
}

}  // namespace

// ---------------------------------------------------------------------------
// StubSource

StubSource::StubSource(std::vector<Entry> entries) : entries_(std::move(entries)) {
  for (std::size_t i = 0; i < entries_.size(); ++i) by_relation_[entries_[i].relation].push_back(i);
}

StubSource StubSource::from_json(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("stub knowledge table: ") + e.what());
  }
  std::vector<Entry> entries;
  try {
    for (const auto& j : doc.at("entries"))
      entries.push_back({j.at("head").get<std::string>(), j.at("relation").get<std::string>(),
                         j.at("tails").get<std::vector<std::string>>()});
  } catch (const json::exception& e) {
    throw ValidationError(std::string("stub knowledge table: ") + e.what());
  }
  return StubSource(std::move(entries));
}

StubSource StubSource::from_file(const std::string& path) { return from_json(read_file(path)); }

std::string StubSource::to_json() const {
  json arr = json::array();
  for (const auto& e : entries_) arr.push_back({{"head", e.head}, {"relation", e.relation}, {"tails", e.tails}});
  return json{{"entries", std::move(arr)}}.dump(1) + "\n";
}

std::vector<SourceTail> StubSource::generate(const QOPhrase& phrase, std::span<const RelationType> relations,
                                             int beam, std::vector<std::string>*) {
  const auto words = tokenize(phrase.phrase);
  std::vector<SourceTail> out;
  for (const auto& rel : relations) {
    auto it = by_relation_.find(rel.name);
    if (it == by_relation_.end()) continue;
    struct Match {
      std::size_t position;
      std::size_t entry;
    };
    std::vector<Match> matches;
    for (std::size_t idx : it->second) {
      const auto& e = entries_[idx];
      std::size_t pos = e.head == "*" ? words.size() : find_words(words, tokenize(e.head));
      if (pos != std::string::npos) matches.push_back({pos, idx});
    }
    std::stable_sort(matches.begin(), matches.end(),
                     [](const Match& a, const Match& b) { return a.position < b.position; });
    int rank = 0;
    for (const auto& m : matches) {
      const auto& e = entries_[m.entry];
      for (const auto& tail : e.tails) {
        if (rank >= beam) break;
        out.push_back({rel.name, e.head == "*" ? std::string() : e.head, tail, ++rank});
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// CacheSource

std::vector<CacheLine> CacheSource::parse(std::string_view jsonl, std::string_view origin) {
  std::vector<CacheLine> lines;
  std::size_t pos = 0;
  int line_no = 0;
  while (pos < jsonl.size()) {
    std::size_t nl = jsonl.find('\n', pos);
    if (nl == std::string_view::npos) nl = jsonl.size();
    std::string_view line = jsonl.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      CacheLine c;
      c.phrase = j.at("phrase").get<std::string>();
      c.relation = j.at("relation").get<std::string>();
      c.beam_rank = j.at("beam_rank").get<int>();
      c.tail = j.at("tail").get<std::string>();
      c.sentence = j.at("sentence").get<std::string>();
      c.subject = j.value("subject", std::string());
      if (c.beam_rank < 1) throw ParseError("beam_rank must be >= 1");
      lines.push_back(std::move(c));
    } catch (const std::exception& e) {
      throw ParseError(std::string(origin) + ": corrupt cache line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return lines;
}

CacheSource::CacheSource(std::string path, std::unique_ptr<KnowledgeSource> upstream)
    : path_(std::move(path)), upstream_(std::move(upstream)) {
  std::ifstream in(path_, std::ios::binary);
  if (!in) return;
  std::stringstream ss;
  ss << in.rdbuf();
  for (auto& line : parse(ss.str(), path_)) {
    auto& bucket = entries_[{line.phrase, line.relation}];
    bucket.push_back(std::move(line));
  }
  for (auto& [key, bucket] : entries_)
    std::stable_sort(bucket.begin(), bucket.end(),
                     [](const CacheLine& a, const CacheLine& b) { return a.beam_rank < b.beam_rank; });
}

bool CacheSource::contains(const std::string& phrase, const std::string& relation) const {
  std::lock_guard lock(mutex_);
  return entries_.count({phrase, relation}) != 0;
}

void CacheSource::append(const std::vector<CacheLine>& lines) {
  if (lines.empty()) return;
  std::ofstream out(path_, std::ios::binary | std::ios::app);
  if (!out) throw Error("cannot append to knowledge cache " + path_);
  for (const auto& c : lines) {
    json j = {{"phrase", c.phrase},   {"relation", c.relation}, {"beam_rank", c.beam_rank},
              {"tail", c.tail},       {"sentence", c.sentence}, {"subject", c.subject}};
    out << j.dump() << '\n';
  }
}

std::vector<SourceTail> CacheSource::generate(const QOPhrase& phrase, std::span<const RelationType> relations,
                                              int beam, std::vector<std::string>* warnings) {
  std::lock_guard lock(mutex_);
  std::vector<RelationType> missing;
  for (const auto& rel : relations)
    if (!entries_.count({phrase.phrase, rel.name})) missing.push_back(rel);

  if (!missing.empty() && upstream_) {
    auto fresh = upstream_->generate(phrase, missing, beam, warnings);
    std::vector<CacheLine> new_lines;
    const std::string fallback = default_subject(phrase);
    for (const auto& t : fresh) {
      const RelationType* rel = find_relation(missing, t.relation);
      if (!rel) continue;
      const std::string subject = t.subject.empty() ? fallback : t.subject;
      auto sentence = verbalize(*rel, subject, t.tail);
      if (!sentence) continue;
      new_lines.push_back({phrase.phrase, t.relation, t.rank, t.tail, *sentence, subject});
    }
    append(new_lines);
    for (auto& line : new_lines) entries_[{line.phrase, line.relation}].push_back(std::move(line));
  }

  std::vector<SourceTail> out;
  for (const auto& rel : relations) {
    auto it = entries_.find({phrase.phrase, rel.name});
    if (it == entries_.end()) continue;
    int taken = 0;
    for (const auto& c : it->second) {
      if (taken++ >= beam) break;
      out.push_back({c.relation, c.subject, c.tail, c.beam_rank});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// ServiceSource

struct ServiceSource::Impl {
  explicit Impl(ServiceOptions o) : options(std::move(o)), slots(std::max(1, options.max_in_flight)) {}
  ServiceOptions options;
  std::counting_semaphore<1024> slots;
};

ServiceSource::ServiceSource(ServiceOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {}
ServiceSource::~ServiceSource() = default;

std::vector<SourceTail> ServiceSource::generate(const QOPhrase& phrase, std::span<const RelationType> relations,
                                                int beam, std::vector<std::string>* warnings) {
  if (relations.empty()) return {};
  json request = {{"phrase", phrase.phrase}, {"beam", beam}, {"relations", json::array()}};
  for (const auto& r : relations) request["relations"].push_back(r.name);
  const std::string body = request.dump();

  std::string failure;
  for (int attempt = 0; attempt <= impl_->options.retries; ++attempt) {
    impl_->slots.acquire();
    httplib::Result res{nullptr, httplib::Error::Unknown};
    {
      httplib::Client client(impl_->options.url);
      const auto secs = std::chrono::duration_cast<std::chrono::seconds>(impl_->options.timeout);
      const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(impl_->options.timeout - secs);
      client.set_connection_timeout(secs.count(), usecs.count());
      client.set_read_timeout(secs.count(), usecs.count());
      client.set_write_timeout(secs.count(), usecs.count());
      res = client.Post("/generate", body, "application/json");
    }
    impl_->slots.release();
    if (!res) {
      failure = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      failure = "HTTP status " + std::to_string(res->status);
      continue;
    }
    try {
      const json reply = json::parse(res->body);
      std::vector<SourceTail> out;
      for (const auto& j : reply.at("inferences"))
        out.push_back({j.at("relation").get<std::string>(), std::string(), j.at("tail").get<std::string>(),
                       j.at("rank").get<int>()});
      std::stable_sort(out.begin(), out.end(),
                       [](const SourceTail& a, const SourceTail& b) { return a.rank < b.rank; });
      return out;
    } catch (const std::exception& e) {
      failure = std::string("malformed response: ") + e.what();
    }
  }
  if (warnings)
    warnings->push_back("knowledge service unavailable for \"" + phrase.phrase + "\" (" + failure +
                        "); relations degraded to empty");
  return {};
}

// ---------------------------------------------------------------------------

std::vector<Inference> generate_inferences(const QOPhrase& phrase, std::span<const RelationType> relations, int beam,
                                           KnowledgeSource& source, std::vector<std::string>* warnings) {
  std::vector<Inference> out;
  if (relations.empty() || beam <= 0) return out;
  const auto tails = source.generate(phrase, relations, beam, warnings);
  const std::string fallback = default_subject(phrase);
  for (const auto& rel : relations) {
    int rank = 0;
    for (const auto& t : tails) {
      if (t.relation != rel.name) continue;
      if (rank >= beam) break;
      const std::string subject = t.subject.empty() ? fallback : t.subject;
      auto sentence = verbalize(rel, subject, t.tail);
      if (!sentence) continue;
      out.push_back({rel.name, phrase.phrase, subject, trim(t.tail), ++rank, *sentence, source.kind()});
    }
  }
  return out;
}

double token_overlap(std::string_view candidate, std::string_view kept) {
  const auto a = token_set(candidate);
  if (a.empty()) return 0.0;
  const auto b = token_set(kept);
  std::size_t common = 0;
  for (const auto& t : a) common += b.count(t);
  return static_cast<double>(common) / static_cast<double>(a.size());
}

std::vector<Inference> dedup(const std::vector<Inference>& inferences, double threshold) {
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < inferences.size(); ++i) groups[inferences[i].relation].push_back(i);

  std::vector<bool> keep(inferences.size(), true);
  for (auto& [relation, idx] : groups) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return inferences[a].beam_rank < inferences[b].beam_rank;
    });
    std::vector<std::size_t> kept;
    for (std::size_t i : idx) {
      for (std::size_t k : kept) {
        if (token_overlap(inferences[i].sentence, inferences[k].sentence) > threshold) {
          keep[i] = false;
          break;
        }
      }
      if (keep[i]) kept.push_back(i);
    }
  }
  std::vector<Inference> out;
  for (std::size_t i = 0; i < inferences.size(); ++i)
    if (keep[i]) out.push_back(inferences[i]);
  return out;
}

QOPhrase KnowledgePipeline::phrase_for(const corpus::QuestionRecord& record,
                                       const std::vector<corpus::ObjectTag>& tags) const {
  const std::string declarative = rephraser ? rephraser->rephrase(record.text) : rephrase_question(record.text);
  std::vector<std::string> labels;
  for (const auto& t : select_object_tags(tags)) labels.push_back(t.label);
  return build_qo_phrase(declarative, labels);
}

std::vector<Inference> KnowledgePipeline::run(const corpus::QuestionRecord& record,
                                              const std::vector<corpus::ObjectTag>& tags, KnowledgeSource& source,
                                              std::vector<std::string>* warnings) const {
  const QOPhrase phrase = phrase_for(record, tags);
  return dedup(generate_inferences(phrase, relations, beam, source, warnings), dedup_threshold);
}

}  // namespace vlc::knowledge
