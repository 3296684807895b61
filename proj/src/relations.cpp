#include <json.hpp>

#include "vlc/error.hpp"
#include "vlc/knowledge.hpp"

namespace vlc::knowledge {

using nlohmann::json;

namespace {

std::size_t count_occurrences(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = s.find(needle); pos != std::string::npos; pos = s.find(needle, pos + needle.size())) ++n;
  return n;
}

RelationCategory parse_category(const std::string& s) {
  if (s == "concept") return RelationCategory::concept_relation;
  if (s == "event") return RelationCategory::event_relation;
  throw ConfigError("unknown relation category '" + s + "'");
}

}  // namespace

std::string to_string(SourceKind k) {
  switch (k) {
    case SourceKind::stub: return "stub";
    case SourceKind::cache: return "cache";
    case SourceKind::service: return "service";
  }
  return "stub";
}

const std::vector<RelationType>& default_relations() {
  using C = RelationCategory;
  static const std::vector<RelationType> relations = {
      {"AtLocation", "You are likely to find {head} at {tail}", C::concept_relation},
      {"UsedFor", "{head} is used for {tail}", C::concept_relation},
      {"CapableOf", "{head} can {tail}", C::concept_relation},
      {"IsA", "{head} is a kind of {tail}", C::concept_relation},
      {"HasProperty", "{head} is {tail}", C::concept_relation},
      {"MadeUpOf", "{head} is made up of {tail}", C::concept_relation},
      {"PartOf", "{head} is part of {tail}", C::concept_relation},
      {"HasA", "{head} has {tail}", C::concept_relation},
      {"Causes", "{head} causes {tail}", C::concept_relation},
      {"HasSubEvent", "While {head}, you might {tail}", C::concept_relation},
      {"HasPrerequisite", "{head} requires {tail}", C::concept_relation},
      {"ReceivesAction", "{head} can be {tail}", C::concept_relation},
      {"Desires", "{head} wants {tail}", C::concept_relation},
      {"NotDesires", "{head} does not want {tail}", C::concept_relation},
      {"MotivatedByGoal", "You would {head} because you want {tail}", C::concept_relation},
      {"xNeed", "Before {head}, a person needs {tail}", C::event_relation},
      {"xWant", "After {head}, a person wants {tail}", C::event_relation},
      {"xIntent", "Because of {head}, a person intended {tail}", C::event_relation},
      {"xAttr", "Someone involved with {head} is seen as {tail}", C::event_relation},
      {"xEffect", "As a result of {head}, a person {tail}", C::event_relation},
      {"xReact", "After {head}, a person feels {tail}", C::event_relation},
      {"xReason", "{head} happens because {tail}", C::event_relation},
      {"oWant", "After {head}, others want {tail}", C::event_relation},
      {"oEffect", "As a result of {head}, others {tail}", C::event_relation},
      {"oReact", "After {head}, others feel {tail}", C::event_relation},
      {"CausesDesire", "{head} makes you want {tail}", C::event_relation},
      {"HinderedBy", "{head} can be hindered by {tail}", C::event_relation},
      {"isAfter", "{head} happens after {tail}", C::event_relation},
      {"isBefore", "{head} happens before {tail}", C::event_relation},
      {"ObjectUse", "{head} can be used to {tail}", C::event_relation},
  };
  return relations;
}

void validate_relation(const RelationType& r) {
  if (r.name.empty()) throw ConfigError("relation with empty name");
  if (count_occurrences(r.templ, "{head}") != 1 || count_occurrences(r.templ, "{tail}") != 1)
    throw ConfigError("relation " + r.name + ": template must contain {head} and {tail} exactly once");
}

std::vector<RelationType> parse_relations(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("relation config: ") + e.what());
  }
  if (!doc.is_array()) throw ConfigError("relation config must be a JSON list");
  std::vector<RelationType> out;
  for (const auto& j : doc) {
    try {
      RelationType r{j.at("name").get<std::string>(), j.at("template").get<std::string>(),
                     parse_category(j.at("category").get<std::string>())};
      validate_relation(r);
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ConfigError(std::string("relation config entry: ") + e.what());
    }
  }
  return out;
}

std::vector<RelationType> load_relations(const std::string& path) { return parse_relations(read_file(path)); }

std::string serialize_relations(const std::vector<RelationType>& relations) {
  json doc = json::array();
  for (const auto& r : relations)
    doc.push_back({{"name", r.name},
                   {"template", r.templ},
                   {"category", r.category == RelationCategory::concept_relation ? "concept" : "event"}});
  return doc.dump(1) + "\n";
}

}  // namespace vlc::knowledge
