#include <doctest.h>

#include <fstream>
#include <random>
#include <set>

#include "support.hpp"
#include "vlc/error.hpp"
#include "vlc/knowledge.hpp"

using namespace vlc;
using namespace vlc::knowledge;

namespace {

const RelationType& relation(const std::string& name) {
  for (const auto& r : default_relations())
    if (r.name == name) return r;
  throw std::runtime_error("no relation " + name);
}

Inference inf(std::string relation, int rank, std::string sentence) {
  Inference i;
  i.relation = std::move(relation);
  i.beam_rank = rank;
  i.sentence = std::move(sentence);
  return i;
}

StubSource rich_stub(int tails_per_relation) {
  std::vector<StubSource::Entry> entries;
  for (const auto& r : default_relations()) {
    StubSource::Entry e{"*", r.name, {}};
    for (int t = 0; t < tails_per_relation; ++t) e.tails.push_back(r.name + " tail " + std::to_string(t));
    entries.push_back(std::move(e));
  }
  return StubSource(std::move(entries));
}

}  // namespace

TEST_CASE("rephrase_question golden cases and fallback") {
  CHECK(rephrase_question("What is the purpose of the umbrella?") == "The purpose of the umbrellas is");
  CHECK(rephrase_question("The purpose of the umbrella is") == "The purpose of the umbrella is");
  CHECK(rephrase_question("Zorp the fleeb?") == "Zorp the fleeb is");
  CHECK(rephrase_question("What is the color of the bus?") == "The color of the bus is");
  CHECK(rephrase_question("Where might one buy this?") == "One might buy this at");
  CHECK(rephrase_question("What is this animal?") == "This animal is");
}

TEST_CASE("rephrased output never ends with a question mark") {
  for (const char* q : {"Why?", "What?", "How does it fly?", "Who made this cake?", "??", "what kind of dog is this?",
                        "Where is the cat?", "Is it cold?", "Which one is red?"}) {
    const auto out = rephrase_question(q);
    CHECK_FALSE(out.empty());
    CHECK(out.back() != '?');
  }
}

TEST_CASE("the shipped rephrase rules file reproduces the built-in table") {
  const auto loaded = Rephraser::from_file(testing::data_dir() + "/rephrase_rules.json");
  REQUIRE(loaded.rules().size() == default_rephrase_rules().size());
  for (const char* q : {"What is the purpose of the umbrella?", "Where is the dog sleeping?", "Zorp the fleeb?"})
    CHECK(loaded.rephrase(q) == rephrase_question(q));
  CHECK_THROWS_AS(Rephraser(std::vector<RephraseRule>{{"(unclosed", "x"}}), ConfigError);
}

TEST_CASE("select_object_tags takes the two most confident, ties by label, duplicates collapsed") {
  auto tag = [](std::string l, double c) { return corpus::ObjectTag{std::move(l), c, {0.1, 0.1, 0.5, 0.5}}; };
  auto labels = [](const std::vector<corpus::ObjectTag>& ts) {
    std::vector<std::string> out;
    for (const auto& t : ts) out.push_back(t.label);
    return out;
  };
  CHECK(labels(select_object_tags({tag("dog", 0.9), tag("chair", 0.8), tag("cup", 0.7)})) ==
        std::vector<std::string>{"dog", "chair"});
  CHECK(select_object_tags({}).empty());
  CHECK(labels(select_object_tags({tag("b", 0.5), tag("a", 0.5)})) == std::vector<std::string>{"a", "b"});
  CHECK(labels(select_object_tags({tag("cup", 0.6), tag("dog", 0.7), tag("cup", 0.95)})) ==
        std::vector<std::string>{"cup", "dog"});
}

TEST_CASE("build_qo_phrase formats") {
  CHECK(build_qo_phrase("The purpose of the umbrella is", {"dog", "chair"}).phrase ==
        "The purpose of the umbrella is, with dog and chair");
  CHECK(build_qo_phrase("X is", {}).phrase == "X is");
  CHECK(build_qo_phrase("X is", {"cat"}).phrase == "X is, with cat");
  const auto three = build_qo_phrase("X is", {"a", "b", "c"});
  CHECK(three.tags_used.size() == 2);
}

TEST_CASE("verbalize substitutes, capitalizes and skips empty tails") {
  CHECK(verbalize(relation("AtLocation"), "umbrella", "store") == "You are likely to find umbrella at store");
  CHECK(verbalize(relation("UsedFor"), "umbrella", "blocking rain") == "Umbrella is used for blocking rain");
  CHECK_FALSE(verbalize(relation("AtLocation"), "umbrella", "").has_value());
  CHECK_FALSE(verbalize(relation("AtLocation"), "umbrella", "   ").has_value());
}

TEST_CASE("default relation set has thirty valid relations that survive a file round trip") {
  const auto& rels = default_relations();
  CHECK(rels.size() == 30);
  std::set<std::string> names;
  for (const auto& r : rels) {
    CHECK_NOTHROW(validate_relation(r));
    names.insert(r.name);
  }
  CHECK(names.size() == 30);
  const auto loaded = load_relations(testing::data_dir() + "/relations.json");
  REQUIRE(loaded.size() == rels.size());
  for (std::size_t i = 0; i < rels.size(); ++i) {
    CHECK(loaded[i].name == rels[i].name);
    CHECK(loaded[i].templ == rels[i].templ);
    CHECK(loaded[i].category == rels[i].category);
  }
  CHECK_THROWS(validate_relation({"Bad", "{head} twice {head} {tail}", RelationCategory::concept_relation}));
  CHECK_THROWS(validate_relation({"Bad", "no tail {head}", RelationCategory::concept_relation}));
}

TEST_CASE("generate_inferences cardinality") {
  const auto phrase = build_qo_phrase("The purpose of the umbrella is", {"dog", "chair"});
  const auto& rels = default_relations();

  auto stub = rich_stub(7);
  const auto all = generate_inferences(phrase, rels, 5, stub);
  CHECK(all.size() == 150);
  std::map<std::string, std::set<int>> ranks;
  for (const auto& i : all) ranks[i.relation].insert(i.beam_rank);
  CHECK(ranks.size() == 30);
  for (const auto& [r, set] : ranks) CHECK(set == std::set<int>{1, 2, 3, 4, 5});

  CHECK(generate_inferences(phrase, {}, 5, stub).empty());

  StubSource two({{"umbrella", "AtLocation", {"store", "closet"}}});
  const auto few = generate_inferences(phrase, rels, 5, two);
  REQUIRE(few.size() == 2);
  CHECK(few[0].beam_rank == 1);
  CHECK(few[1].beam_rank == 2);
  CHECK(few[0].sentence == "You are likely to find umbrella at store");
}

TEST_CASE("stub heads match contiguous words in phrase order") {
  StubSource stub({{"chair", "UsedFor", {"sitting"}}, {"dog", "UsedFor", {"company", "walks"}}, {"cat", "UsedFor", {"x"}}});
  const auto phrase = build_qo_phrase("It is", {"dog", "chair"});
  const std::vector<RelationType> rels{relation("UsedFor")};
  const auto out = generate_inferences(phrase, rels, 5, stub);
  REQUIRE(out.size() == 3);
  CHECK(out[0].tail == "company");
  CHECK(out[2].tail == "sitting");
  CHECK(out[2].subject == "chair");
  CHECK(StubSource::from_json(stub.to_json()).entries().size() == 3);
}

TEST_CASE("every inference sentence regenerates from template, subject and tail") {
  auto stub = rich_stub(5);
  const auto phrase = build_qo_phrase("The thing is", {"kite"});
  for (const auto& i : generate_inferences(phrase, default_relations(), 5, stub))
    CHECK(verbalize(relation(i.relation), i.subject, i.tail) == i.sentence);
}

TEST_CASE("dedup examples") {
  const auto same = dedup({inf("UsedFor", 1, "A b c"), inf("UsedFor", 2, "a B c")});
  CHECK(same.size() == 1);
  const auto cross = dedup({inf("UsedFor", 1, "A b c"), inf("AtLocation", 1, "A b c")});
  CHECK(cross.size() == 2);
  // candidate T-size 4, three shared with a kept sentence: overlap 0.75
  CHECK(token_overlap("w x y z", "w x y q r") == doctest::Approx(0.75));
  const auto dropped = dedup({inf("UsedFor", 1, "w x y q r"), inf("UsedFor", 2, "w x y z")});
  REQUIRE(dropped.size() == 1);
  CHECK(dropped[0].beam_rank == 1);
  // lower beam rank wins even when listed later
  const auto order = dedup({inf("UsedFor", 2, "a b c"), inf("UsedFor", 1, "a b c")});
  REQUIRE(order.size() == 1);
  CHECK(order[0].beam_rank == 1);
}

TEST_CASE("dedup is idempotent, a subsequence, and the identity at threshold 1") {
  std::mt19937_64 rng(5);
  const std::vector<std::string> words{"a", "b", "c", "d", "e", "f"};
  std::uniform_int_distribution<int> len(1, 5), w(0, 5), rel(0, 2), rank(1, 5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Inference> xs;
    std::set<std::pair<int, int>> used;
    for (int i = 0; i < 12; ++i) {
      const int r = rel(rng), b = rank(rng);
      if (!used.insert({r, b}).second) continue;
      std::string s;
      for (int n = len(rng); n > 0; --n) s += words[static_cast<std::size_t>(w(rng))] + " ";
      xs.push_back(inf("R" + std::to_string(r), b, s));
    }
    const auto once = dedup(xs);
    CHECK(dedup(once) == once);
    std::size_t j = 0;
    for (const auto& x : xs)
      if (j < once.size() && x == once[j]) ++j;
    CHECK(j == once.size());

    std::set<std::pair<std::string, std::set<std::string>>> seen;
    bool exact_dupes = false;
    for (const auto& x : xs) exact_dupes |= !seen.insert({x.relation, token_set(x.sentence)}).second;
    if (!exact_dupes) CHECK(dedup(xs, 1.0) == xs);
  }
}

TEST_CASE("knowledge pipeline is deterministic in question and tags") {
  auto stub = rich_stub(6);
  const Rephraser rephraser;
  KnowledgePipeline kp;
  kp.rephraser = &rephraser;
  kp.relations = default_relations();
  const corpus::QuestionRecord rec{"q", "i", "What is the umbrella used for?", {{"rain", 10}}, corpus::Split::train};
  const std::vector<corpus::ObjectTag> tags{{"umbrella", 0.9, {0.1, 0.1, 0.4, 0.4}}, {"dog", 0.5, {0.2, 0.2, 0.6, 0.6}}};
  const auto a = kp.run(rec, tags, stub);
  const auto b = kp.run(rec, tags, stub);
  CHECK(a == b);
  CHECK(a.size() <= 150);
  CHECK(kp.phrase_for(rec, tags).phrase == "The umbrella is used for, with umbrella and dog");
}

TEST_CASE("cache source serves hits, appends misses and names corrupt lines") {
  testing::TempDir dir("cache");
  const std::string path = dir.file("cache.jsonl");
  const auto phrase = build_qo_phrase("The purpose of the umbrella is", {"umbrella"});
  const std::vector<RelationType> rels{relation("AtLocation"), relation("UsedFor")};
  {
    CacheSource cache(path, std::make_unique<StubSource>(rich_stub(3)));
    const auto first = generate_inferences(phrase, rels, 5, cache);
    CHECK(first.size() == 6);
    CHECK(cache.contains(phrase.phrase, "AtLocation"));
    CHECK(cache.size() == 2);
  }
  CacheSource offline(path);
  const auto again = generate_inferences(phrase, rels, 5, offline);
  REQUIRE(again.size() == 6);
  CHECK(again[0].sentence == "You are likely to find umbrella at AtLocation tail 0");
  CHECK(again[0].source == SourceKind::cache);

  std::ofstream(path, std::ios::app) << "{\"phrase\": \"x\"\n";
  CHECK_THROWS_WITH_AS(CacheSource{path}, doctest::Contains("line 7"), ParseError);
}
