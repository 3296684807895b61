#include "vlc/pipeline.hpp"

#include <algorithm>

#include "vlc/error.hpp"

namespace vlc::pipeline {

using nlohmann::json;

namespace {

json inference_json(const knowledge::Inference& inf) {
  return json{{"relation", inf.relation}, {"head", inf.head},         {"subject", inf.subject},
              {"tail", inf.tail},         {"beam_rank", inf.beam_rank}, {"sentence", inf.sentence},
              {"source", knowledge::to_string(inf.source)}};
}

knowledge::SourceKind parse_source(const std::string& s) {
  if (s == "stub") return knowledge::SourceKind::stub;
  if (s == "cache") return knowledge::SourceKind::cache;
  if (s == "service") return knowledge::SourceKind::service;
  throw ValidationError("unknown inference source '" + s + "'");
}

knowledge::Inference inference_from_json(const json& j) {
  knowledge::Inference inf;
  inf.relation = j.at("relation").get<std::string>();
  inf.head = j.at("head").get<std::string>();
  inf.subject = j.at("subject").get<std::string>();
  inf.tail = j.at("tail").get<std::string>();
  inf.beam_rank = j.at("beam_rank").get<int>();
  inf.sentence = j.at("sentence").get<std::string>();
  inf.source = parse_source(j.at("source").get<std::string>());
  return inf;
}

json vector_json(const Vector& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

Vector vector_from_json(const json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

template <typename F>
void for_each_line(std::string_view text, std::string_view origin, F&& f) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    if (trim(line).empty()) continue;
    try {
      f(json::parse(line));
    } catch (const json::exception& e) {
      throw ParseError(std::string(origin) + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

const std::vector<corpus::ObjectTag>& tags_for(const corpus::ObjectTagMap& tags, const std::string& image_id) {
  static const std::vector<corpus::ObjectTag> none;
  auto it = tags.find(image_id);
  return it == tags.end() ? none : it->second;
}

}  // namespace

CandidateMap generate_candidates(const std::vector<corpus::QuestionRecord>& records, const corpus::ObjectTagMap& tags,
                                 const knowledge::KnowledgePipeline& kp, knowledge::KnowledgeSource& source,
                                 std::vector<std::string>* warnings) {
  CandidateMap out;
  for (const auto& r : records) out[r.question_id] = kp.run(r, tags_for(tags, r.image_id), source, warnings);
  return out;
}

std::vector<selection::TrainingPair> augmentation_pairs(const std::vector<corpus::QuestionRecord>& records,
                                                        const CandidateMap& candidates, const StopWords& stopwords) {
  std::vector<selection::TrainingPair> pairs;
  for (const auto& r : records) {
    auto it = candidates.find(r.question_id);
    if (it == candidates.end()) continue;
    for (const auto& inf : it->second)
      pairs.push_back({r.text, inf.sentence, selection::label_similarity(inf.sentence, r.answers, stopwords)});
  }
  return pairs;
}

Selected select(const corpus::QuestionRecord& record, const std::vector<knowledge::Inference>& candidates,
                const selection::SentenceEncoder& encoder, std::span<const knowledge::RelationType> relations, int k) {
  Selected s;
  s.question_id = record.question_id;
  const selection::EmbeddingVector q = selection::embed(encoder, record.text);
  std::vector<std::string> texts;
  for (const auto& c : candidates) texts.push_back(c.sentence);
  const auto vecs = encoder.encode_batch(texts);
  std::vector<selection::Candidate> cands;
  for (std::size_t i = 0; i < candidates.size(); ++i) cands.push_back({candidates[i], vecs[i]});
  s.question_vec = q.values;
  for (std::size_t idx : selection::rank_indices(q, cands, relations, k)) {
    s.inferences.push_back(cands[idx].inference);
    s.vectors.push_back(cands[idx].vector.values);
    s.scores.push_back(selection::cosine(q.values, cands[idx].vector.values));
  }
  return s;
}

SelectionMap select_all(const std::vector<corpus::QuestionRecord>& records, const CandidateMap& candidates,
                        const selection::SentenceEncoder& encoder, std::span<const knowledge::RelationType> relations,
                        int k) {
  SelectionMap out;
  static const std::vector<knowledge::Inference> empty;
  for (const auto& r : records) {
    auto it = candidates.find(r.question_id);
    out[r.question_id] = select(r, it == candidates.end() ? empty : it->second, encoder, relations, k);
  }
  return out;
}

std::string candidates_to_jsonl(const CandidateMap& candidates) {
  std::string out;
  for (const auto& [qid, infs] : candidates) {
    json line{{"question_id", qid}, {"inferences", json::array()}};
    for (const auto& inf : infs) line["inferences"].push_back(inference_json(inf));
    out += line.dump() + "\n";
  }
  return out;
}

CandidateMap candidates_from_jsonl(std::string_view text, std::string_view origin) {
  CandidateMap out;
  for_each_line(text, origin, [&](const json& j) {
    auto& v = out[j.at("question_id").get<std::string>()];
    for (const auto& inf : j.at("inferences")) v.push_back(inference_from_json(inf));
  });
  return out;
}

std::string selections_to_jsonl(const SelectionMap& selections) {
  std::string out;
  for (const auto& [qid, s] : selections) {
    json line{{"question_id", qid},
              {"question_vec", vector_json(s.question_vec)},
              {"inferences", json::array()},
              {"scores", s.scores},
              {"vectors", json::array()}};
    for (const auto& inf : s.inferences) line["inferences"].push_back(inference_json(inf));
    for (const auto& v : s.vectors) line["vectors"].push_back(vector_json(v));
    out += line.dump() + "\n";
  }
  return out;
}

SelectionMap selections_from_jsonl(std::string_view text, std::string_view origin) {
  SelectionMap out;
  for_each_line(text, origin, [&](const json& j) {
    Selected s;
    s.question_id = j.at("question_id").get<std::string>();
    s.question_vec = vector_from_json(j.at("question_vec"));
    for (const auto& inf : j.at("inferences")) s.inferences.push_back(inference_from_json(inf));
    s.scores = j.at("scores").get<std::vector<double>>();
    for (const auto& v : j.at("vectors")) s.vectors.push_back(vector_from_json(v));
    if (s.scores.size() != s.inferences.size() || s.vectors.size() != s.inferences.size())
      throw ParseError(std::string(origin) + ": question " + s.question_id + ": inconsistent selection lengths");
    out[s.question_id] = std::move(s);
  });
  return out;
}

encoder::Checkpoint initial_checkpoint(const encoder::ModelConfig& config,
                                       const std::vector<corpus::QuestionRecord>& train_records,
                                       const SelectionMap& selections, const corpus::ObjectTagMap& tags,
                                       int embed_dim) {
  std::vector<std::string> texts;
  for (const auto& r : train_records) {
    texts.push_back(r.text);
    auto it = selections.find(r.question_id);
    if (it == selections.end()) continue;
    for (const auto& inf : it->second.inferences) texts.push_back(inf.sentence);
  }
  return encoder::Checkpoint::initialize(config, encoder::Tokenizer::build(texts), encoder::LabelVocab::build(tags),
                                         corpus::build_answer_vocabulary(train_records), embed_dim);
}

std::vector<encoder::Example> make_examples(const std::vector<corpus::QuestionRecord>& records,
                                            const SelectionMap& selections, const corpus::ObjectTagMap& tags,
                                            const encoder::Checkpoint& ckpt, const StopWords& stopwords,
                                            bool with_labels, std::vector<std::string>* warnings) {
  const auto& cfg = ckpt.config;
  std::vector<encoder::Example> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    encoder::KnowledgeInput ki;
    const Selected* sel = nullptr;
    if (auto it = selections.find(r.question_id); it != selections.end()) sel = &it->second;
    if (sel) {
      ki.question_vec = sel->question_vec;
      ki.inference_vecs = sel->vectors;
      for (const auto& inf : sel->inferences) ki.sentences.push_back(inf.sentence);
    } else if (cfg.fusion_mode != encoder::FusionMode::none) {
      throw MissingArtifactError("no selected inferences for question " + r.question_id +
                                 "; run the select command first");
    }
    encoder::Example ex;
    ex.question_id = r.question_id;
    ex.sequence = encoder::assemble_sequence(
        r, ki, encoder::region_tokens(tags_for(tags, r.image_id), ckpt.labels, cfg.max_regions), cfg, ckpt.tokenizer,
        warnings);
    ex.target = encoder::answer_target(r.answers, ckpt.vocabulary);
    ex.answers = r.answers;
    if (with_labels && cfg.fusion_mode == encoder::FusionMode::mha && sel && !sel->inferences.empty() &&
        encoder::is_supervised(r.question_id, cfg.supervision_fraction, cfg.seed))
      ex.attention_label = fusion::weak_labels(sel->inferences, r.answers, stopwords);
    out.push_back(std::move(ex));
  }
  return out;
}

encoder::TrainResult pretrain_then_finetune(encoder::Checkpoint init, int pretrain_epochs,
                                            const std::vector<encoder::Example>& pre_train,
                                            const std::vector<encoder::Example>& pre_val,
                                            const std::vector<encoder::Example>& fine_train,
                                            const std::vector<encoder::Example>& fine_val,
                                            std::vector<std::string>* warnings) {
  const auto answers = static_cast<Eigen::Index>(init.vocabulary.size());
  for (const auto* set : {&pre_train, &pre_val, &fine_train, &fine_val})
    for (const auto& ex : *set)
      if (ex.target.size() != answers)
        throw ValidationError("question " + ex.question_id + " was built against a different answer vocabulary (" +
                              std::to_string(ex.target.size()) + " vs " + std::to_string(answers) + " entries)");

  std::vector<encoder::EpochLog> log;
  if (pre_train.empty() || pretrain_epochs == 0) {
    if (warnings && pre_train.empty()) warnings->push_back("pretraining set is empty; training on the finetune set only");
  } else {
    const encoder::ModelConfig target = init.config;
    init.config.fusion_mode = encoder::FusionMode::none;
    init.config.epochs = pretrain_epochs;
    auto pre = encoder::train(std::move(init), pre_train, pre_val);
    log = std::move(pre.log);
    init = std::move(pre.checkpoint);
    init.config = target;
  }
  auto fine = encoder::train(std::move(init), fine_train, fine_val);
  log.insert(log.end(), fine.log.begin(), fine.log.end());
  fine.log = std::move(log);
  return fine;
}

int planted_slot(const Selected& selected, const synth::PlantedFact& fact) {
  for (std::size_t i = 0; i < selected.inferences.size(); ++i) {
    const auto& inf = selected.inferences[i];
    if (inf.relation == fact.relation && inf.tail == fact.answer && token_set(inf.subject).count(fact.object))
      return static_cast<int>(i);
  }
  return -1;
}

PlantedAttention planted_attention(const std::vector<encoder::Prediction>& predictions, const SelectionMap& selections,
                                   const std::map<std::string, synth::PlantedFact>& planted) {
  PlantedAttention out;
  double total = 0.0;
  for (const auto& p : predictions) {
    auto fact = planted.find(p.question_id);
    auto sel = selections.find(p.question_id);
    if (fact == planted.end() || sel == selections.end() || !p.attention) continue;
    double mass = 0.0;
    bool any = false;
    for (std::size_t i = 0; i < sel->second.inferences.size(); ++i) {
      const auto& inf = sel->second.inferences[i];
      if (inf.relation == fact->second.relation && inf.tail == fact->second.answer) {
        mass += p.attention->weights.at(i);
        any = true;
      }
    }
    if (!any) continue;
    total += mass;
    ++out.questions;
  }
  if (out.questions > 0) out.mean_mass = total / out.questions;
  return out;
}

json attention_record(const encoder::Prediction& prediction, const Selected* selected, const encoder::Example& example,
                      const corpus::QuestionRecord& record) {
  json j{{"question_id", prediction.question_id}, {"question", record.text}};
  j["weights"] = prediction.attention ? json(prediction.attention->weights) : json(nullptr);
  j["inferences"] = json::array();
  if (selected)
    for (const auto& inf : selected->inferences) j["inferences"].push_back(inf.sentence);
  j["label_weights"] = example.attention_label ? json(example.attention_label->weights) : json(nullptr);
  j["prediction"] = prediction.prediction;
  j["answers"] = json::array();
  for (const auto& a : record.answers) j["answers"].push_back({{"answer", a.answer}, {"count", a.count}});
  j["accuracy"] = prediction.accuracy;
  return j;
}

PreparedCorpus prepare_synthetic(const PrepareOptions& options) {
  PreparedCorpus p{synth::generate_synthetic_corpus(options.synth), {}, {}, selection::Embedder(options.embed_dim, options.embed_seed), 0.0};
  const knowledge::Rephraser rephraser;
  knowledge::KnowledgePipeline kp;
  kp.rephraser = &rephraser;
  kp.relations = knowledge::default_relations();
  std::vector<corpus::QuestionRecord> all;
  for (const auto* ds : {&p.corpus.train, &p.corpus.val, &p.corpus.test})
    all.insert(all.end(), ds->records.begin(), ds->records.end());
  p.candidates = generate_candidates(all, p.corpus.tags, kp, p.corpus.stub);
  if (options.augment) {
    const auto pairs = augmentation_pairs(p.corpus.train.records, p.candidates, StopWords());
    selection::augment_train(p.embedder, pairs, options.augment_options);
  }
  p.selections = select_all(all, p.candidates, p.embedder, knowledge::default_relations(), options.k);

  int planted = 0, hit = 0;
  for (const auto* ds : {&p.corpus.val, &p.corpus.test})
    for (const auto& r : ds->records) {
      auto fact = p.corpus.planted.find(r.question_id);
      if (fact == p.corpus.planted.end()) continue;
      ++planted;
      if (planted_slot(p.selections.at(r.question_id), fact->second) >= 0) ++hit;
    }
  p.planted_selected_rate = planted == 0 ? 0.0 : static_cast<double>(hit) / planted;
  return p;
}

ExperimentResult run_experiment(const PreparedCorpus& p, const encoder::ModelConfig& config) {
  const StopWords stop;
  auto ckpt = initial_checkpoint(config, p.corpus.train.records, p.selections, p.corpus.tags, p.embedder.dim());
  const auto train_ex = make_examples(p.corpus.train.records, p.selections, p.corpus.tags, ckpt, stop, true);
  const auto val_ex = make_examples(p.corpus.val.records, p.selections, p.corpus.tags, ckpt, stop, false);
  const auto test_ex = make_examples(p.corpus.test.records, p.selections, p.corpus.tags, ckpt, stop, false);
  auto trained = encoder::train(std::move(ckpt), train_ex, val_ex);
  ExperimentResult out;
  out.log = trained.log;
  out.val_accuracy = encoder::mean_accuracy(encoder::predict(trained.checkpoint, val_ex));
  const auto test_pred = encoder::predict(trained.checkpoint, test_ex);
  out.test_accuracy = encoder::mean_accuracy(test_pred);
  out.attention = planted_attention(test_pred, p.selections, p.corpus.planted);
  return out;
}

}  // namespace vlc::pipeline
