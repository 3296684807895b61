#include "vlc/synth.hpp"

#include <algorithm>
#include <filesystem>
#include <random>
#include <set>

#include "vlc/error.hpp"

namespace vlc::synth {

using nlohmann::json;

namespace {

struct PlantedRelation {
  const char* name;
  std::vector<std::string> answers;
  std::vector<std::string> questions;  // {o} is replaced by the object
};

const std::vector<std::string>& objects() {
  static const std::vector<std::string> v = {
      "umbrella", "bicycle", "guitar", "kettle", "hammer", "pillow", "ladder", "lantern",
      "blanket", "scissors", "bucket", "camera", "violin", "shovel", "backpack", "candle",
      "teapot", "helmet", "wallet", "mirror", "broom", "drum", "basket", "bottle",
      "jacket", "sofa", "lamp", "spoon", "rope", "tent", "kite", "skateboard",
      "suitcase", "whistle", "notebook", "envelope", "saddle", "anchor", "compass", "hose",
      "apron", "barrel", "bench", "blender", "brush", "cabinet", "canoe", "carpet",
      "cart", "chisel", "coat", "cradle", "crayon", "cushion", "desk", "drill",
      "easel", "fan", "faucet", "fence", "flashlight", "flute", "fork", "frisbee",
      "funnel", "glove", "goggles", "hammock", "harp", "hat", "heater", "jar",
      "kayak", "keyboard", "ladle", "leash", "locker", "magnet", "mallet", "mattress",
      "microscope", "mop", "mug", "napkin", "needle", "oven", "paddle", "pan",
      "pencil", "piano", "pitcher", "plate", "pliers", "pot", "quilt", "rake",
      "razor", "rug", "sail", "sandal", "scarf", "shelf", "sled", "sponge",
      "stapler", "stool", "stove", "sweater", "tablecloth", "telescope", "thermos", "toaster",
      "towel", "tray", "trumpet", "vase", "wagon", "whisk", "wrench", "yarn",
  };
  return v;
}

const std::vector<PlantedRelation>& planted_relations() {
  static const std::vector<PlantedRelation> v = {
      {"AtLocation",
       {"store", "kitchen", "park", "office", "garage", "beach", "school", "farm"},
       {"Where are you likely to find the {o}?", "Where is the {o} usually kept?",
        "In what place would you see a {o}?"}},
      {"UsedFor",
       {"cooking", "cleaning", "music", "sleeping", "cutting", "writing", "travel", "storage"},
       {"What is the {o} used for?", "What is the purpose of the {o}?", "Why would someone need a {o}?"}},
      {"MadeUpOf",
       {"wood", "metal", "plastic", "glass", "cotton", "leather", "paper", "rubber"},
       {"What is the {o} made up of?", "What material is the {o}?", "What is this {o} built from?"}},
      {"HasProperty",
       {"heavy", "soft", "sharp", "warm", "fragile", "loud", "shiny", "smooth"},
       {"What property does the {o} have?", "How would you describe the {o}?", "What is the {o} like?"}},
      {"CapableOf",
       {"break", "roll", "float", "burn", "bend", "spin", "fold", "melt"},
       {"What can the {o} do?", "What is the {o} capable of?", "What might the {o} end up doing?"}},
      {"ReceivesAction",
       {"washed", "painted", "repaired", "recycled", "opened", "carried", "stacked", "sold"},
       {"What can be done to the {o}?", "What do people often do with a {o}?", "How is the {o} usually handled?"}},
  };
  return v;
}

// Relations that only ever produce distractor sentences.
const std::vector<std::pair<const char*, std::vector<std::string>>>& noise_relations() {
  static const std::vector<std::pair<const char*, std::vector<std::string>>> v = {
      {"IsA", {"tool", "device", "container", "instrument", "toy", "accessory", "furniture", "gadget"}},
      {"HasA", {"handle", "strap", "lid", "button", "edge", "cover", "wheel", "string"}},
      {"PartOf", {"set", "kit", "collection", "home", "outfit", "room", "workshop", "display"}},
  };
  return v;
}

class Draw {
 public:
  explicit Draw(std::uint64_t seed) : rng_(seed) {}
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(rng_() % n); }
  double unit() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
  double range(double lo, double hi) { return lo + (hi - lo) * unit(); }

 private:
  std::mt19937_64 rng_;
};

// Scene labels that accompany knowledge questions; they carry no planted facts.
const std::vector<std::string>& background() {
  static const std::vector<std::string> v = {"table", "wall",  "floor", "person", "window",
                                             "tree",  "grass", "sky",   "road",   "door"};
  return v;
}

// The named objects followed by pseudo-words CVCVC, unique and clear of every
// answer pool and filter word list.
std::vector<std::string> object_names(int n, Draw& d) {
  std::vector<std::string> out(objects().begin(), objects().begin() + std::min<std::size_t>(objects().size(), n));
  std::set<std::string> taken(out.begin(), out.end());
  for (const auto& r : planted_relations()) taken.insert(r.answers.begin(), r.answers.end());
  for (const auto& [name, pool] : noise_relations()) taken.insert(pool.begin(), pool.end());
  taken.insert(background().begin(), background().end());
  const auto lists = corpus::WordLists::defaults();
  for (const auto* l : {&lists.gazetteer, &lists.number_words, &lists.datetime_words, &lists.directional_words,
                        &lists.symbol_words})
    taken.insert(l->begin(), l->end());
  taken.insert(default_stopwords().begin(), default_stopwords().end());
  static const char consonants[] = "bdfgklmnprstvz";
  static const char vowels[] = "aeiou";
  while (out.size() < static_cast<std::size_t>(n)) {
    std::string w;
    for (int i = 0; i < 5; ++i) w += i % 2 == 0 ? consonants[d.index(14)] : vowels[d.index(5)];
    if (taken.insert(w).second) out.push_back(w);
  }
  return out;
}

// Objects asked about directly ("what is shown") come from this prefix of objects().
constexpr std::size_t kShownObjects = 40;

const std::vector<std::string>& object_questions() {
  static const std::vector<std::string> v = {"What object is shown in this picture?", "What is this thing called?",
                                             "What item can be seen here?"};
  return v;
}


std::string fill(const std::string& templ, const std::string& object) {
  std::string out = templ;
  auto pos = out.find("{o}");
  out.replace(pos, 3, object);
  return out;
}

corpus::ObjectTag random_tag(Draw& d, const std::string& label, double conf_lo, double conf_hi) {
  corpus::ObjectTag t;
  t.label = label;
  t.confidence = std::round(d.range(conf_lo, conf_hi) * 1000.0) / 1000.0;
  const double x1 = std::round(d.range(0.0, 0.6) * 1000.0) / 1000.0;
  const double y1 = std::round(d.range(0.0, 0.6) * 1000.0) / 1000.0;
  const double w = std::round(d.range(0.1, 0.4) * 1000.0) / 1000.0;
  const double h = std::round(d.range(0.1, 0.4) * 1000.0) / 1000.0;
  t.bbox = {x1, y1, x1 + w, y1 + h};
  return t;
}

/// Main answer with 7-10 annotators; the rest spread over one or two alternatives.
std::vector<corpus::AnswerCount> annotate(Draw& d, const std::string& main, const std::vector<std::string>& pool,
                                          int annotation_count) {
  const int main_count = 7 + static_cast<int>(d.index(4));
  std::vector<corpus::AnswerCount> answers{{main, main_count}};
  int rest = annotation_count - main_count;
  while (rest > 0) {
    std::string alt = pool[d.index(pool.size())];
    const int c = rest >= 2 && d.unit() < 0.5 ? 2 : 1;
    auto it = std::find_if(answers.begin(), answers.end(), [&](const auto& a) { return a.answer == alt; });
    if (it == answers.end()) {
      answers.push_back({alt, c});
    } else {
      it->count += c;
    }
    rest -= c;
  }
  return answers;
}

}  // namespace

void SynthConfig::validate() const {
  if (n_train < 1 || n_val < 1 || n_test < 1) throw ConfigError("synth: split sizes must be >= 1");
  if (!(knowledge_strength >= 0.0 && knowledge_strength <= 1.0))
    throw ConfigError("synth: knowledge_strength must lie in [0,1]");
  if (!(held_out_fraction > 0.0 && held_out_fraction < 1.0))
    throw ConfigError("synth: held_out_fraction must lie in (0,1)");
  if (n_objects < static_cast<int>(kShownObjects) || n_objects > 5000)
    throw ConfigError("synth: n_objects must lie in [" + std::to_string(kShownObjects) + ", 5000]");
}

json SynthConfig::to_json() const {
  return json{{"seed", seed},
              {"n_train", n_train},
              {"n_val", n_val},
              {"n_test", n_test},
              {"knowledge_strength", knowledge_strength},
              {"held_out_fraction", held_out_fraction},
              {"n_objects", n_objects},
              {"id_prefix", id_prefix}};
}

SynthCorpus generate_synthetic_corpus(const SynthConfig& config) {
  config.validate();
  Draw d(config.seed);
  const std::vector<std::string> objs = object_names(config.n_objects, d);
  const auto& rels = planted_relations();
  constexpr int kAnnotations = 10;

  SynthCorpus out;
  // Facts: one tail per (object, planted relation); a fixed share is held out.
  std::map<std::pair<std::string, std::string>, std::string> facts;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<knowledge::StubSource::Entry> entries;
  for (std::size_t o = 0; o < objs.size(); ++o) {
    for (std::size_t r = 0; r < rels.size(); ++r) {
      const std::string tail = rels[r].answers[d.index(rels[r].answers.size())];
      facts[{objs[o], rels[r].name}] = tail;
      entries.push_back({objs[o], rels[r].name, {tail}});
      pairs.emplace_back(o, r);
    }
    for (const auto& [name, pool] : noise_relations()) entries.push_back({objs[o], name, {pool[d.index(pool.size())]}});
  }
  for (const auto& b : background())
    for (const auto& [name, pool] : noise_relations()) entries.push_back({b, name, {pool[d.index(pool.size())]}});
  for (std::size_t i = pairs.size(); i > 1; --i) std::swap(pairs[i - 1], pairs[d.index(i)]);
  const auto n_held = static_cast<std::size_t>(std::llround(config.held_out_fraction * static_cast<double>(pairs.size())));
  const std::vector<std::pair<std::size_t, std::size_t>> held(pairs.begin(), pairs.begin() + static_cast<long>(n_held));
  const std::vector<std::pair<std::size_t, std::size_t>> seen(pairs.begin() + static_cast<long>(n_held), pairs.end());
  out.stub = knowledge::StubSource(std::move(entries));

  int counter = 0;
  std::size_t seen_cursor = 0, held_cursor = 0;
  auto make_split = [&](corpus::Split split, int n) {
    corpus::Dataset ds;
    ds.annotation_count = kAnnotations;
    const auto& fact_pool = split == corpus::Split::train ? seen : held;
    for (int i = 0; i < n; ++i) {
      char id[32];
      std::snprintf(id, sizeof(id), "%s%06d", config.id_prefix.c_str(), counter++);
      corpus::QuestionRecord rec;
      rec.question_id = id;
      rec.image_id = std::string("img_") + id;
      rec.split = split;
      std::vector<corpus::ObjectTag> image_tags;
      if (d.unit() < config.knowledge_strength) {
        auto& cursor = split == corpus::Split::train ? seen_cursor : held_cursor;
        const auto [o, r] = fact_pool[cursor++ % fact_pool.size()];
        const std::string& object = objs[o];
        const auto& rel = rels[r];
        const int templ = static_cast<int>(d.index(rel.questions.size()));
        rec.text = fill(rel.questions[static_cast<std::size_t>(templ)], object);
        const std::string answer = facts[{object, rel.name}];
        rec.answers = annotate(d, answer, rel.answers, kAnnotations);
        out.planted[rec.question_id] = {object, rel.name, answer, templ};
        image_tags.push_back(random_tag(d, object, 0.5, 0.95));
        const std::size_t distractors = 1 + d.index(2);
        std::set<std::string> used{object};
        while (image_tags.size() < 1 + distractors) {
          const std::string& other = background()[d.index(background().size())];
          if (!used.insert(other).second) continue;
          image_tags.push_back(random_tag(d, other, 0.5, 0.95));
        }
      } else {
        const std::string& object = objs[d.index(kShownObjects)];
        rec.text = object_questions()[d.index(object_questions().size())];
        rec.answers = annotate(d, object, std::vector<std::string>(objs.begin(), objs.begin() + kShownObjects),
                               kAnnotations);
        image_tags.push_back(random_tag(d, object, 0.6, 0.99));
      }
      out.tags[rec.image_id] = std::move(image_tags);
      ds.records.push_back(std::move(rec));
    }
    return ds;
  };
  out.train = make_split(corpus::Split::train, config.n_train);
  out.val = make_split(corpus::Split::val, config.n_val);
  out.test = make_split(corpus::Split::test, config.n_test);

  // Knowledge-free ceiling on test: the best constant answer per (relation,
  // question template), chosen on the test labels themselves.
  std::map<std::pair<std::string, int>, std::vector<const corpus::QuestionRecord*>> groups;
  int planted_test = 0;
  for (const auto& r : out.test.records) {
    auto it = out.planted.find(r.question_id);
    if (it == out.planted.end()) continue;
    groups[{it->second.relation, it->second.template_index}].push_back(&r);
    ++planted_test;
  }
  // Chance: expected soft accuracy of a uniform guess from the relation's answer pool.
  double ceiling_sum = 0.0, chance_sum = 0.0;
  for (const auto& [key, records] : groups) {
    double best = 0.0;
    for (const auto& rel : rels) {
      if (rel.name != key.first) continue;
      for (const auto& a : rel.answers) {
        double total = 0.0;
        for (const auto* r : records) total += corpus::vqa_accuracy(a, r->answers);
        best = std::max(best, total);
        chance_sum += total / static_cast<double>(rel.answers.size());
      }
    }
    ceiling_sum += best;
  }

  json planted = json::object();
  for (const auto& [qid, f] : out.planted)
    planted[qid] = {{"object", f.object}, {"relation", f.relation}, {"answer", f.answer}, {"template", f.template_index}};
  json held_json = json::array();
  for (const auto& [o, r] : held) held_json.push_back({objs[o], rels[r].name});
  out.manifest = {{"generator", "vlc-synth"},
                  {"params", config.to_json()},
                  {"annotation_count", kAnnotations},
                  {"planted_relations", json::array()},
                  {"answers_per_relation", rels.front().answers.size()},
                  {"chance_rate", planted_test == 0 ? 0.0 : chance_sum / planted_test},
                  {"planted_test_questions", planted_test},
                  {"knowledge_free_ceiling", planted_test == 0 ? 0.0 : ceiling_sum / planted_test},
                  {"held_out_facts", std::move(held_json)},
                  {"planted", std::move(planted)}};
  for (const auto& r : rels) out.manifest["planted_relations"].push_back(r.name);
  return out;
}

void write_synthetic_corpus(const SynthCorpus& c, const std::string& dir, const json& extra_meta) {
  std::filesystem::create_directories(dir);
  corpus::save_dataset(dir + "/train.json", c.train);
  corpus::save_dataset(dir + "/val.json", c.val);
  corpus::save_dataset(dir + "/test.json", c.test);
  write_file(dir + "/tags.json", corpus::serialize_object_tags(c.tags));
  write_file(dir + "/stub_knowledge.json", c.stub.to_json());
  json manifest = c.manifest;
  for (auto it = extra_meta.begin(); extra_meta.is_object() && it != extra_meta.end(); ++it)
    manifest[it.key()] = it.value();
  write_file(dir + "/manifest.json", manifest.dump(1) + "\n");
}

std::map<std::string, PlantedFact> read_planted(const json& manifest) {
  std::map<std::string, PlantedFact> out;
  if (!manifest.contains("planted")) return out;
  for (auto it = manifest["planted"].begin(); it != manifest["planted"].end(); ++it)
    out[it.key()] = {it.value().at("object").get<std::string>(), it.value().at("relation").get<std::string>(),
                     it.value().at("answer").get<std::string>(), it.value().value("template", 0)};
  return out;
}

}  // namespace vlc::synth
