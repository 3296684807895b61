#include "vlc/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "vlc/error.hpp"
#include "vlc/pipeline.hpp"

namespace vlc::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Typed access to one config object; anything left unread is an error.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  const json* find(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void get(const char* key, int& dst) {
    if (auto v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError(field(key) + ": expected an integer");
      dst = v->get<int>();
    }
  }
  void get(const char* key, std::uint64_t& dst) {
    if (auto v = find(key)) {
      if (!v->is_number_integer() || v->get<long long>() < 0)
        throw ConfigError(field(key) + ": expected a non-negative integer");
      dst = v->get<std::uint64_t>();
    }
  }
  void get(const char* key, double& dst) {
    if (auto v = find(key)) {
      if (!v->is_number()) throw ConfigError(field(key) + ": expected a number");
      dst = v->get<double>();
    }
  }
  void get(const char* key, bool& dst) {
    if (auto v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(field(key) + ": expected true or false");
      dst = v->get<bool>();
    }
  }
  void get(const char* key, std::string& dst) {
    if (auto v = find(key)) {
      if (v->is_null()) {
        dst.clear();
      } else if (v->is_string()) {
        dst = v->get<std::string>();
      } else {
        throw ConfigError(field(key) + ": expected a string");
      }
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(field(it.key().c_str()) + ": unknown field");
  }

  std::string field(const char* key) const { return path_ + "." + key; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

void require_file(const std::string& path, const std::string& remedy) {
  if (!fs::exists(path)) throw MissingArtifactError("missing " + path + "; " + remedy);
}

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

void write_artifact(const std::string& path, std::string_view content, const json& meta) {
  fs::create_directories(fs::path(path).parent_path());
  write_file(path, content);
  write_file(path + ".meta.json", meta.dump(1) + "\n");
}

json read_meta(const std::string& artifact) {
  const std::string p = artifact + ".meta.json";
  if (!fs::exists(p)) return json::object();
  try {
    return json::parse(read_file(p));
  } catch (const json::exception& e) {
    throw ParseError(p + ": " + e.what());
  }
}

void report_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
}

// ---------------------------------------------------------------------------
// Shared loading

struct Corpus {
  corpus::Dataset train, val, test;
  corpus::ObjectTagMap tags;

  std::vector<corpus::QuestionRecord> all() const {
    std::vector<corpus::QuestionRecord> out;
    for (const auto* ds : {&train, &val, &test}) out.insert(out.end(), ds->records.begin(), ds->records.end());
    return out;
  }
  const corpus::Dataset& split(corpus::Split s) const {
    return s == corpus::Split::train ? train : s == corpus::Split::val ? val : test;
  }
};

Corpus load_corpus(const RunConfig& cfg) {
  const std::string remedy = "run `vlcbert synth` first or point paths.corpus_dir at a dataset";
  Corpus c;
  auto load = [&](corpus::Split s) {
    const std::string p = join(cfg.paths.corpus_dir, corpus::to_string(s) + ".json");
    require_file(p, remedy);
    return corpus::load_dataset(p, s);
  };
  c.train = load(corpus::Split::train);
  c.val = load(corpus::Split::val);
  c.test = load(corpus::Split::test);
  const std::string tags = join(cfg.paths.corpus_dir, "tags.json");
  require_file(tags, remedy);
  c.tags = corpus::load_object_tags(tags);
  return c;
}

std::vector<knowledge::RelationType> load_relations(const RunConfig& cfg) {
  if (cfg.paths.relations.empty()) return knowledge::default_relations();
  require_file(cfg.paths.relations, "set paths.relations to a relation file or leave it empty");
  return knowledge::load_relations(cfg.paths.relations);
}

StopWords load_stopwords(const RunConfig& cfg) {
  return cfg.paths.stopwords.empty() ? StopWords() : StopWords::from_file(cfg.paths.stopwords);
}

std::string knowledge_dir(const RunConfig& c) { return join(c.out, "knowledge"); }
std::string select_dir(const RunConfig& c) { return join(c.out, "select"); }
std::string train_dir(const RunConfig& c) { return join(c.out, "train"); }
std::string eval_dir(const RunConfig& c) { return join(c.out, "eval"); }
std::string analyze_dir(const RunConfig& c) { return join(c.out, "analyze"); }

pipeline::SelectionMap load_selections(const RunConfig& cfg, json* meta) {
  const std::string p = join(select_dir(cfg), "selected.jsonl");
  require_file(p, "run `vlcbert select` first");
  if (meta) *meta = read_meta(p);
  return pipeline::selections_from_jsonl(read_file(p), p);
}

encoder::Checkpoint load_checkpoint(const RunConfig& cfg) {
  const std::string p = join(train_dir(cfg), "model.ckpt");
  require_file(p, "run `vlcbert train` first");
  return encoder::Checkpoint::load(p);
}

// ---------------------------------------------------------------------------
// Commands

int cmd_synth(const RunConfig& cfg) {
  synth::SynthConfig sc = cfg.synth;
  sc.seed = cfg.seed;
  const auto corpus = synth::generate_synthetic_corpus(sc);
  synth::write_synthetic_corpus(corpus, cfg.paths.corpus_dir, {{"meta", artifact_meta(cfg)}});
  write_file(cfg.paths.stub + ".meta.json", artifact_meta(cfg).dump(1) + "\n");
  std::printf("synth: %zu train, %zu val, %zu test questions -> %s\n", corpus.train.records.size(),
              corpus.val.records.size(), corpus.test.records.size(), cfg.paths.corpus_dir.c_str());
  return kExitOk;
}

int cmd_knowledge(const RunConfig& cfg) {
  const Corpus c = load_corpus(cfg);
  const auto relations = load_relations(cfg);
  const knowledge::Rephraser rephraser = cfg.paths.rephrase_rules.empty()
                                             ? knowledge::Rephraser()
                                             : knowledge::Rephraser::from_file(cfg.paths.rephrase_rules);

  std::unique_ptr<knowledge::KnowledgeSource> upstream;
  if (cfg.knowledge.source == "stub") {
    require_file(cfg.paths.stub, "run `vlcbert synth` first or set paths.stub");
    upstream = std::make_unique<knowledge::StubSource>(knowledge::StubSource::from_file(cfg.paths.stub));
  } else if (cfg.knowledge.source == "service") {
    knowledge::ServiceOptions so;
    so.url = cfg.knowledge.service_url;
    so.timeout = std::chrono::milliseconds(cfg.knowledge.timeout_ms);
    so.max_in_flight = cfg.knowledge.max_in_flight;
    upstream = std::make_unique<knowledge::ServiceSource>(so);
  } else {
    require_file(cfg.paths.cache, "populate the cache with source \"stub\" or \"service\" first");
  }
  fs::create_directories(fs::path(cfg.paths.cache).parent_path());
  knowledge::CacheSource source(cfg.paths.cache, std::move(upstream));

  knowledge::KnowledgePipeline kp;
  kp.rephraser = &rephraser;
  kp.relations = relations;
  kp.beam = cfg.knowledge.beam;
  kp.dedup_threshold = cfg.knowledge.dedup_threshold;
  std::vector<std::string> warnings;
  const auto candidates = pipeline::generate_candidates(c.all(), c.tags, kp, source, &warnings);
  report_warnings(warnings);

  const std::string p = join(knowledge_dir(cfg), "candidates.jsonl");
  write_artifact(p, pipeline::candidates_to_jsonl(candidates), artifact_meta(cfg));
  std::size_t total = 0;
  for (const auto& [q, v] : candidates) total += v.size();
  std::printf("knowledge: %zu inferences for %zu questions -> %s (cache %s, %zu entries)\n", total, candidates.size(),
              p.c_str(), cfg.paths.cache.c_str(), source.size());
  return kExitOk;
}

int cmd_select(const RunConfig& cfg) {
  const Corpus c = load_corpus(cfg);
  const std::string cp = join(knowledge_dir(cfg), "candidates.jsonl");
  require_file(cp, "run `vlcbert knowledge` first");
  const auto candidates = pipeline::candidates_from_jsonl(read_file(cp), cp);
  const auto relations = load_relations(cfg);

  pipeline::SelectionMap selections;
  if (cfg.selection.encoder == "service") {
    if (cfg.selection.augment) std::cerr << "warning: augmentation is skipped for the embedding service\n";
    selection::ServiceEncoder enc({cfg.selection.service_url, std::chrono::milliseconds(cfg.knowledge.timeout_ms)});
    selections = pipeline::select_all(c.all(), candidates, enc, relations, cfg.model.K);
  } else {
    selection::Embedder emb(cfg.selection.embed_dim, cfg.selection.embed_seed);
    if (cfg.selection.augment) {
      const auto pairs = pipeline::augmentation_pairs(c.train.records, candidates, load_stopwords(cfg));
      selection::AugmentOptions ao{cfg.selection.augment_epochs, cfg.selection.augment_lr, cfg.seed};
      const double before = selection::augment_loss(emb, pairs);
      const std::string warning = selection::augment_train(emb, pairs, ao);
      if (!warning.empty()) std::cerr << "warning: " << warning << "\n";
      std::printf("select: augmented embedder on %zu pairs, loss %.6f -> %.6f\n", pairs.size(), before,
                  selection::augment_loss(emb, pairs));
    }
    fs::create_directories(select_dir(cfg));
    emb.save(join(select_dir(cfg), "embedder.json"));
    selections = pipeline::select_all(c.all(), candidates, emb, relations, cfg.model.K);
  }
  const std::string p = join(select_dir(cfg), "selected.jsonl");
  write_artifact(p, pipeline::selections_to_jsonl(selections), artifact_meta(cfg));
  std::printf("select: top-%d inferences for %zu questions -> %s\n", cfg.model.K, selections.size(), p.c_str());
  return kExitOk;
}

struct PretrainCorpus {
  std::vector<corpus::QuestionRecord> train, val;
  corpus::ObjectTagMap tags;
};

PretrainCorpus pretrain_corpus(const RunConfig& cfg) {
  PretrainCorpus out;
  if (cfg.pretrain.epochs == 0) return out;
  if (!cfg.paths.pretrain_dir.empty()) {
    const std::string remedy = "set paths.pretrain_dir to a directory with train.json, val.json and tags.json";
    for (const char* f : {"train.json", "val.json", "tags.json"}) require_file(join(cfg.paths.pretrain_dir, f), remedy);
    out.train = corpus::load_dataset(join(cfg.paths.pretrain_dir, "train.json"), corpus::Split::train).records;
    out.val = corpus::load_dataset(join(cfg.paths.pretrain_dir, "val.json"), corpus::Split::val).records;
    out.tags = corpus::load_object_tags(join(cfg.paths.pretrain_dir, "tags.json"));
    return out;
  }
  synth::SynthConfig sc;
  sc.seed = cfg.seed + 7919;
  sc.n_train = cfg.pretrain.n_train;
  sc.n_val = cfg.pretrain.n_val;
  sc.n_test = 1;
  sc.knowledge_strength = 0.0;
  sc.id_prefix = "p";
  auto g = synth::generate_synthetic_corpus(sc);
  out.train = std::move(g.train.records);
  out.val = std::move(g.val.records);
  out.tags = std::move(g.tags);
  return out;
}

int cmd_train(const RunConfig& cfg) {
  const Corpus c = load_corpus(cfg);
  json sel_meta;
  pipeline::SelectionMap selections;
  if (cfg.model.fusion_mode != encoder::FusionMode::none || fs::exists(join(select_dir(cfg), "selected.jsonl")))
    selections = load_selections(cfg, &sel_meta);
  const StopWords stop = load_stopwords(cfg);
  const PretrainCorpus pre = pretrain_corpus(cfg);

  std::vector<corpus::QuestionRecord> vocab_records = c.train.records;
  vocab_records.insert(vocab_records.end(), pre.train.begin(), pre.train.end());
  corpus::ObjectTagMap tags = c.tags;
  tags.insert(pre.tags.begin(), pre.tags.end());
  int embed_dim = cfg.selection.embed_dim;
  if (!selections.empty()) embed_dim = static_cast<int>(selections.begin()->second.question_vec.size());

  auto ckpt = pipeline::initial_checkpoint(cfg.model, vocab_records, selections, tags, embed_dim);
  ckpt.meta = artifact_meta(cfg);
  std::vector<std::string> warnings;
  const auto train_ex = pipeline::make_examples(c.train.records, selections, c.tags, ckpt, stop, true, &warnings);
  const auto val_ex = pipeline::make_examples(c.val.records, selections, c.tags, ckpt, stop, false, &warnings);
  encoder::Checkpoint plain = ckpt;
  plain.config.fusion_mode = encoder::FusionMode::none;
  const auto pre_train = pipeline::make_examples(pre.train, {}, pre.tags, plain, stop, false, &warnings);
  const auto pre_val = pipeline::make_examples(pre.val, {}, pre.tags, plain, stop, false, &warnings);
  auto result = pipeline::pretrain_then_finetune(std::move(ckpt), cfg.pretrain.epochs, pre_train, pre_val, train_ex,
                                                 val_ex, cfg.pretrain.epochs > 0 ? &warnings : nullptr);
  report_warnings(warnings);

  result.checkpoint.meta = artifact_meta(cfg);
  fs::create_directories(train_dir(cfg));
  result.checkpoint.save(join(train_dir(cfg), "model.ckpt"));
  std::string log;
  for (const auto& e : result.log) {
    log += e.to_json().dump() + "\n";
    std::printf("epoch %d: loss %.5f (answer %.5f, attention %.5f), val accuracy %.4f\n", e.epoch, e.train_loss,
                e.answer_loss, e.attention_loss, e.val_accuracy);
  }
  write_artifact(join(train_dir(cfg), "train_log.jsonl"), log, artifact_meta(cfg));
  std::printf("train: %zu parameters, best epoch %d -> %s\n", result.checkpoint.model.parameter_count(),
              result.checkpoint.epoch, join(train_dir(cfg), "model.ckpt").c_str());
  return kExitOk;
}

void check_digests(const std::vector<std::pair<std::string, json>>& inputs, bool force) {
  std::string first_name, first;
  for (const auto& [name, meta] : inputs) {
    if (!meta.is_object() || !meta.contains("config_digest")) continue;
    const std::string d = meta["config_digest"].get<std::string>();
    if (first.empty()) {
      first_name = name;
      first = d;
    } else if (d != first) {
      if (force) {
        std::cerr << "warning: " << name << " has config digest " << d << " but " << first_name << " has " << first
                  << "\n";
      } else {
        throw ValidationError(name + " was produced under config digest " + d + " but " + first_name + " under " +
                              first + "; rerun the stale stage or pass --force");
      }
    }
  }
}

struct EvalOptions {
  std::string split = "test";
  bool subset = false;
  bool force = false;
  std::string predictions;
};

int cmd_eval(const RunConfig& cfg, const EvalOptions& opt) {
  const corpus::Split split = corpus::parse_split(opt.split);
  const Corpus c = load_corpus(cfg);
  const auto& records = c.split(split).records;
  std::vector<encoder::Prediction> preds;
  json meta = artifact_meta(cfg);
  if (!opt.predictions.empty()) {
    require_file(opt.predictions, "pass a prediction file written by `vlcbert eval`");
    check_digests({{"config", meta}, {opt.predictions, read_meta(opt.predictions)}}, opt.force);
    preds = encoder::predictions_from_jsonl(read_file(opt.predictions));
  } else {
    const auto ckpt = load_checkpoint(cfg);
    json sel_meta;
    pipeline::SelectionMap selections;
    if (ckpt.config.fusion_mode != encoder::FusionMode::none) selections = load_selections(cfg, &sel_meta);
    check_digests({{"model.ckpt", ckpt.meta}, {"selected.jsonl", sel_meta}}, opt.force);
    std::vector<std::string> warnings;
    const auto examples = pipeline::make_examples(records, selections, c.tags, ckpt, load_stopwords(cfg), false,
                                                  &warnings);
    report_warnings(warnings);
    preds = encoder::predict(ckpt, examples);
    write_artifact(join(eval_dir(cfg), "predictions_" + opt.split + ".jsonl"), encoder::predictions_to_jsonl(preds),
                   meta);
  }
  std::optional<corpus::WordLists> lists;
  if (opt.subset)
    lists = cfg.paths.wordlists.empty() ? corpus::WordLists::defaults() : corpus::WordLists::load(cfg.paths.wordlists);
  auto report = encoder::build_report(preds, records, lists ? &*lists : nullptr, opt.split);
  report.meta = meta;
  const std::string rp = join(eval_dir(cfg), "report_" + opt.split + ".json");
  fs::create_directories(eval_dir(cfg));
  write_file(rp, report.to_json().dump(1) + "\n");
  std::printf("eval: %s accuracy %.4f over %d questions\n", opt.split.c_str(), report.accuracy, report.count);
  if (report.subsets)
    for (const auto& [name, s] : *report.subsets) {
      if (s.accuracy)
        std::printf("  %-10s %.4f over %d questions\n", name.c_str(), *s.accuracy, s.count);
      else
        std::printf("  %-10s undefined (no questions)\n", name.c_str());
    }
  std::printf("report -> %s\n", rp.c_str());
  return kExitOk;
}

std::string narrative(const json& rec, const encoder::Prediction& p) {
  std::ostringstream os;
  os << rec["question_id"].get<std::string>() << "  " << rec["question"].get<std::string>() << "\n";
  os << "  answers:";
  for (const auto& a : rec["answers"]) os << " " << a["answer"].get<std::string>() << "(" << a["count"].get<int>() << ")";
  char line[256];
  std::snprintf(line, sizeof(line), "\n  prediction: %s (p=%.3f, accuracy %.3f)\n", p.prediction.c_str(), p.score,
                p.accuracy);
  os << line;
  const auto& infs = rec["inferences"];
  if (rec["weights"].is_null()) {
    for (const auto& s : infs) os << "           " << s.get<std::string>() << "\n";
    return os.str();
  }
  const auto w = rec["weights"].get<std::vector<double>>();
  const bool labeled = !rec["label_weights"].is_null();
  const auto lw = labeled ? rec["label_weights"].get<std::vector<double>>() : std::vector<double>{};
  const auto top = static_cast<std::size_t>(std::max_element(w.begin(), w.end()) - w.begin());
  os << "  attention  label   inference\n";
  for (std::size_t i = 0; i < w.size(); ++i) {
    const std::string text = i < infs.size() ? infs[i].get<std::string>() : "[question]";
    if (labeled)
      std::snprintf(line, sizeof(line), "  %c%.4f    %.4f  %s\n", i == top ? '*' : ' ', w[i], lw[i], text.c_str());
    else
      std::snprintf(line, sizeof(line), "  %c%.4f    -       %s\n", i == top ? '*' : ' ', w[i], text.c_str());
    os << line;
  }
  return os.str();
}

int cmd_analyze(const RunConfig& cfg, const std::string& split_name, bool force) {
  const corpus::Split split = corpus::parse_split(split_name);
  const Corpus c = load_corpus(cfg);
  const auto& records = c.split(split).records;
  const auto ckpt = load_checkpoint(cfg);
  json sel_meta;
  const auto selections = load_selections(cfg, &sel_meta);
  check_digests({{"model.ckpt", ckpt.meta}, {"selected.jsonl", sel_meta}}, force);
  const StopWords stop = load_stopwords(cfg);
  const auto examples = pipeline::make_examples(records, selections, c.tags, ckpt, stop, false);
  const auto preds = encoder::predict(ckpt, examples);

  std::string dump, text;
  for (std::size_t i = 0; i < records.size(); ++i) {
    encoder::Example ex = examples[i];
    const auto it = selections.find(records[i].question_id);
    const pipeline::Selected* sel = it == selections.end() ? nullptr : &it->second;
    if (ckpt.config.fusion_mode == encoder::FusionMode::mha && sel && !sel->inferences.empty())
      ex.attention_label = fusion::weak_labels(sel->inferences, records[i].answers, stop);
    const json rec = pipeline::attention_record(preds[i], sel, ex, records[i]);
    dump += rec.dump() + "\n";
    text += narrative(rec, preds[i]) + "\n";
  }
  write_artifact(join(analyze_dir(cfg), "attention_" + split_name + ".jsonl"), dump, artifact_meta(cfg));
  write_file(join(analyze_dir(cfg), "report_" + split_name + ".txt"), text);
  std::printf("analyze: %zu questions -> %s\n", records.size(), analyze_dir(cfg).c_str());
  return kExitOk;
}

RunConfig load_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  std::string text;
  try {
    text = read_file(path);
  } catch (const MissingArtifactError&) {
    throw ConfigError("cannot read config file " + path);
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return RunConfig::from_json(j);
}

}  // namespace

// ---------------------------------------------------------------------------
// RunConfig

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  Section root(j, "config");
  root.get("seed", c.seed);
  root.get("out", c.out);
  if (auto v = root.find("synth")) {
    Section s(*v, "config.synth");
    s.get("n_train", c.synth.n_train);
    s.get("n_val", c.synth.n_val);
    s.get("n_test", c.synth.n_test);
    s.get("knowledge_strength", c.synth.knowledge_strength);
    s.get("held_out_fraction", c.synth.held_out_fraction);
    s.get("n_objects", c.synth.n_objects);
    s.finish();
  }
  if (auto v = root.find("paths")) {
    Section s(*v, "config.paths");
    s.get("corpus_dir", c.paths.corpus_dir);
    s.get("stub", c.paths.stub);
    s.get("cache", c.paths.cache);
    s.get("wordlists", c.paths.wordlists);
    s.get("relations", c.paths.relations);
    s.get("rephrase_rules", c.paths.rephrase_rules);
    s.get("stopwords", c.paths.stopwords);
    s.get("pretrain_dir", c.paths.pretrain_dir);
    s.finish();
  }
  if (auto v = root.find("knowledge")) {
    Section s(*v, "config.knowledge");
    s.get("source", c.knowledge.source);
    s.get("service_url", c.knowledge.service_url);
    s.get("beam", c.knowledge.beam);
    s.get("dedup_threshold", c.knowledge.dedup_threshold);
    s.get("timeout_ms", c.knowledge.timeout_ms);
    s.get("max_in_flight", c.knowledge.max_in_flight);
    s.finish();
  }
  if (auto v = root.find("selection")) {
    Section s(*v, "config.selection");
    s.get("encoder", c.selection.encoder);
    s.get("service_url", c.selection.service_url);
    s.get("embed_dim", c.selection.embed_dim);
    s.get("embed_seed", c.selection.embed_seed);
    s.get("augment", c.selection.augment);
    s.get("augment_epochs", c.selection.augment_epochs);
    s.get("augment_lr", c.selection.augment_lr);
    s.finish();
  }
  if (auto v = root.find("model")) {
    if (v->is_object() && v->contains("seed")) throw ConfigError("config.model.seed: set the top-level seed instead");
    c.model.update_from_json(*v, "config.model");
  }
  if (auto v = root.find("pretrain")) {
    Section s(*v, "config.pretrain");
    s.get("epochs", c.pretrain.epochs);
    s.get("n_train", c.pretrain.n_train);
    s.get("n_val", c.pretrain.n_val);
    s.finish();
  }
  root.finish();

  try {
    c.synth.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config.") + e.what());
  }
  const auto& k = c.knowledge;
  require(k.source == "stub" || k.source == "cache" || k.source == "service",
          "config.knowledge.source: expected \"stub\", \"cache\" or \"service\"");
  require(k.source != "service" || !k.service_url.empty(), "config.knowledge.service_url: required for the service source");
  require(k.beam >= 1, "config.knowledge.beam: must be >= 1");
  require(k.dedup_threshold >= 0.0 && k.dedup_threshold <= 1.0, "config.knowledge.dedup_threshold: must lie in [0,1]");
  require(k.timeout_ms > 0, "config.knowledge.timeout_ms: must be > 0");
  require(k.max_in_flight >= 1, "config.knowledge.max_in_flight: must be >= 1");
  const auto& s = c.selection;
  require(s.encoder == "embedder" || s.encoder == "service",
          "config.selection.encoder: expected \"embedder\" or \"service\"");
  require(s.encoder != "service" || !s.service_url.empty(), "config.selection.service_url: required for the service encoder");
  require(s.embed_dim >= 1, "config.selection.embed_dim: must be >= 1");
  require(s.augment_epochs >= 0, "config.selection.augment_epochs: must be >= 0");
  require(s.augment_lr > 0.0, "config.selection.augment_lr: must be > 0");
  require(c.pretrain.epochs >= 0, "config.pretrain.epochs: must be >= 0");
  require(c.pretrain.n_train >= 1 && c.pretrain.n_val >= 1, "config.pretrain: n_train and n_val must be >= 1");
  c.apply_seed(c.seed);
  return c;
}

json RunConfig::to_json() const {
  json model_json = model.to_json();
  model_json.erase("seed");
  return json{{"seed", seed},
              {"out", out},
              {"synth",
               {{"n_train", synth.n_train},
                {"n_val", synth.n_val},
                {"n_test", synth.n_test},
                {"knowledge_strength", synth.knowledge_strength},
                {"held_out_fraction", synth.held_out_fraction},
                {"n_objects", synth.n_objects}}},
              {"paths",
               {{"corpus_dir", paths.corpus_dir},
                {"stub", paths.stub},
                {"cache", paths.cache},
                {"wordlists", paths.wordlists},
                {"relations", paths.relations},
                {"rephrase_rules", paths.rephrase_rules},
                {"stopwords", paths.stopwords},
                {"pretrain_dir", paths.pretrain_dir}}},
              {"knowledge",
               {{"source", knowledge.source},
                {"service_url", knowledge.service_url},
                {"beam", knowledge.beam},
                {"dedup_threshold", knowledge.dedup_threshold},
                {"timeout_ms", knowledge.timeout_ms},
                {"max_in_flight", knowledge.max_in_flight}}},
              {"selection",
               {{"encoder", selection.encoder},
                {"service_url", selection.service_url},
                {"embed_dim", selection.embed_dim},
                {"embed_seed", selection.embed_seed},
                {"augment", selection.augment},
                {"augment_epochs", selection.augment_epochs},
                {"augment_lr", selection.augment_lr}}},
              {"model", std::move(model_json)},
              {"pretrain", {{"epochs", pretrain.epochs}, {"n_train", pretrain.n_train}, {"n_val", pretrain.n_val}}}};
}

std::string RunConfig::digest() const {
  // Paths that only default to locations under `out` are not part of the experiment.
  RunConfig defaults = *this;
  defaults.paths = PathsConfig{};
  defaults.resolve_paths();
  const json d = defaults.to_json();
  json j = to_json();
  j.erase("out");
  for (auto& [key, value] : j["paths"].items())
    if (value == d["paths"][key]) value = "";
  return hex64(fnv1a64(j.dump()));
}

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  synth.seed = s;
  model.seed = s;
}

void RunConfig::resolve_paths() {
  if (paths.corpus_dir.empty()) paths.corpus_dir = join(out, "corpus");
  if (paths.stub.empty()) paths.stub = join(paths.corpus_dir, "stub_knowledge.json");
  if (paths.cache.empty()) paths.cache = join(join(out, "knowledge"), "cache.jsonl");
}

json artifact_meta(const RunConfig& config) {
  return json{{"tool_version", kToolVersion}, {"config_digest", config.digest()}, {"seed", config.seed}};
}

// ---------------------------------------------------------------------------

int run(const std::vector<std::string>& args) {
  CLI::App app{"Knowledge-augmented VQA pipeline: synth, knowledge, select, train, eval, analyze"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path, out;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--seed", seed, "seed for every stochastic stage");
  app.add_option("--out", out, "output directory");
  app.set_version_flag("--version", kToolVersion);

  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic corpus and stub knowledge table");
  auto* knowledge_cmd = app.add_subcommand("knowledge", "generate and deduplicate inferences for every question");
  auto* select_cmd = app.add_subcommand("select", "augment the embedder and pick the top-K inferences");
  auto* train_cmd = app.add_subcommand("train", "train the answer model");
  auto* eval_cmd = app.add_subcommand("eval", "score a split and write the report");
  auto* analyze_cmd = app.add_subcommand("analyze", "dump attention weights with a per-question narrative");
  EvalOptions eval_opt;
  eval_cmd->add_option("--split", eval_opt.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  eval_cmd->add_flag("--subset", eval_opt.subset, "also report accuracy on the commonsense subset");
  eval_cmd->add_option("--predictions", eval_opt.predictions, "score a saved prediction file instead of the model");
  eval_cmd->add_flag("--force", eval_opt.force, "accept inputs produced under different configs");
  std::string analyze_split = "test";
  bool analyze_force = false;
  analyze_cmd->add_option("--split", analyze_split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  analyze_cmd->add_flag("--force", analyze_force, "accept inputs produced under different configs");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    RunConfig cfg = load_config(config_path);
    if (seed) cfg.apply_seed(*seed);
    if (!out.empty()) cfg.out = out;
    cfg.resolve_paths();
    if (synth_cmd->parsed()) return cmd_synth(cfg);
    if (knowledge_cmd->parsed()) return cmd_knowledge(cfg);
    if (select_cmd->parsed()) return cmd_select(cfg);
    if (train_cmd->parsed()) return cmd_train(cfg);
    if (eval_cmd->parsed()) return cmd_eval(cfg, eval_opt);
    if (analyze_cmd->parsed()) return cmd_analyze(cfg, analyze_split, analyze_force);
  } catch (const MissingArtifactError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitMissing;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace vlc::cli
