#include <algorithm>
#include <set>

#include "vlc/encoder.hpp"
#include "vlc/error.hpp"

namespace vlc::encoder {

using nlohmann::json;

std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::none: return "none";
    case FusionMode::tokens: return "tokens";
    case FusionMode::linear: return "linear";
    case FusionMode::mha: return "mha";
  }
  return "none";
}

FusionMode parse_fusion_mode(std::string_view s) {
  if (s == "none") return FusionMode::none;
  if (s == "tokens") return FusionMode::tokens;
  if (s == "linear") return FusionMode::linear;
  if (s == "mha") return FusionMode::mha;
  throw ConfigError("unknown fusion_mode '" + std::string(s) + "' (expected none|tokens|linear|mha)");
}

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError(std::string("model.") + name + " must be positive");
  };
  positive(d_model, "d_model");
  positive(layers, "layers");
  positive(heads, "heads");
  positive(ffn, "ffn");
  positive(K, "K");
  positive(batch_size, "batch_size");
  positive(grad_accum, "grad_accum");
  positive(max_len, "max_len");
  if (max_regions < 0) throw ConfigError("model.max_regions must be non-negative");
  if (epochs < 0) throw ConfigError("model.epochs must be non-negative");
  if (d_model % heads != 0) throw ConfigError("model.d_model must be divisible by model.heads");
  if (!(supervision_fraction >= 0.0 && supervision_fraction <= 1.0))
    throw ConfigError("model.supervision_fraction must lie in [0,1]");
  if (!(learning_rate > 0.0)) throw ConfigError("model.learning_rate must be positive");
  if (!(attention_loss_weight >= 0.0)) throw ConfigError("model.attention_loss_weight must be non-negative");
}

json ModelConfig::to_json() const {
  return json{{"d_model", d_model},
              {"layers", layers},
              {"heads", heads},
              {"ffn", ffn},
              {"K", K},
              {"fusion_mode", encoder::to_string(fusion_mode)},
              {"supervision_fraction", supervision_fraction},
              {"batch_size", batch_size},
              {"grad_accum", grad_accum},
              {"epochs", epochs},
              {"learning_rate", learning_rate},
              {"attention_loss_weight", attention_loss_weight},
              {"max_len", max_len},
              {"max_regions", max_regions},
              {"optimizer", optimizer == Optimizer::sgd ? "sgd" : "adam"},
              {"seed", seed}};
}

void ModelConfig::update_from_json(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    const json& v = it.value();
    const std::string field = where + "." + key;
    auto want_int = [&](int& dst) {
      if (!v.is_number_integer()) throw ConfigError(field + ": expected an integer");
      dst = v.get<int>();
    };
    auto want_real = [&](double& dst) {
      if (!v.is_number()) throw ConfigError(field + ": expected a number");
      dst = v.get<double>();
    };
    if (key == "d_model") want_int(d_model);
    else if (key == "layers") want_int(layers);
    else if (key == "heads") want_int(heads);
    else if (key == "ffn") want_int(ffn);
    else if (key == "K") want_int(K);
    else if (key == "batch_size") want_int(batch_size);
    else if (key == "grad_accum") want_int(grad_accum);
    else if (key == "epochs") want_int(epochs);
    else if (key == "max_len") want_int(max_len);
    else if (key == "max_regions") want_int(max_regions);
    else if (key == "supervision_fraction") want_real(supervision_fraction);
    else if (key == "learning_rate") want_real(learning_rate);
    else if (key == "attention_loss_weight") want_real(attention_loss_weight);
    else if (key == "fusion_mode") {
      if (!v.is_string()) throw ConfigError(field + ": expected a string");
      fusion_mode = parse_fusion_mode(v.get<std::string>());
    } else if (key == "optimizer") {
      if (!v.is_string()) throw ConfigError(field + ": expected a string");
      const auto s = v.get<std::string>();
      if (s == "sgd") optimizer = Optimizer::sgd;
      else if (s == "adam") optimizer = Optimizer::adam;
      else throw ConfigError(field + ": expected sgd|adam");
    } else if (key == "seed") {
      if (!v.is_number_unsigned() && !v.is_number_integer()) throw ConfigError(field + ": expected an integer");
      seed = v.get<std::uint64_t>();
    } else {
      throw ConfigError(field + ": unknown field");
    }
  }
}

Tokenizer::Tokenizer() : Tokenizer(std::vector<std::string>{"[CLS]", "[SEP]", "[MASK]", "[END]", "[OOV]"}) {}

Tokenizer::Tokenizer(std::vector<std::string> words) : words_(std::move(words)) {
  static const std::vector<std::string> specials = {"[CLS]", "[SEP]", "[MASK]", "[END]", "[OOV]"};
  if (words_.size() < specials.size() || !std::equal(specials.begin(), specials.end(), words_.begin()))
    throw ValidationError("tokenizer vocabulary must start with the special tokens");
  for (std::size_t i = 0; i < words_.size(); ++i)
    if (!index_.emplace(words_[i], static_cast<int>(i)).second)
      throw ValidationError("duplicate tokenizer entry '" + words_[i] + "'");
}

Tokenizer Tokenizer::build(const std::vector<std::string>& texts) {
  std::set<std::string> seen;
  for (const auto& t : texts)
    for (auto& w : tokenize(t)) seen.insert(std::move(w));
  std::vector<std::string> words = Tokenizer().words();
  words.insert(words.end(), seen.begin(), seen.end());
  return Tokenizer(std::move(words));
}

int Tokenizer::id(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? kOov : it->second;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& w : tokenize(text)) ids.push_back(id(w));
  return ids;
}

LabelVocab::LabelVocab() : LabelVocab(std::vector<std::string>{"[UNK]"}) {}

LabelVocab::LabelVocab(std::vector<std::string> labels) : labels_(std::move(labels)) {
  if (labels_.empty() || labels_[0] != "[UNK]") throw ValidationError("label vocabulary must start with [UNK]");
  for (std::size_t i = 0; i < labels_.size(); ++i)
    if (!index_.emplace(labels_[i], static_cast<int>(i)).second)
      throw ValidationError("duplicate region label '" + labels_[i] + "'");
}

LabelVocab LabelVocab::build(const corpus::ObjectTagMap& tags) {
  std::set<std::string> seen;
  for (const auto& [image, list] : tags)
    for (const auto& t : list) seen.insert(t.label);
  std::vector<std::string> labels{"[UNK]"};
  labels.insert(labels.end(), seen.begin(), seen.end());
  return LabelVocab(std::move(labels));
}

int LabelVocab::id(const std::string& label) const {
  auto it = index_.find(label);
  return it == index_.end() ? 0 : it->second;
}

std::vector<RegionToken> region_tokens(const std::vector<corpus::ObjectTag>& tags, const LabelVocab& labels,
                                       int max_regions) {
  std::vector<corpus::ObjectTag> sorted = tags;
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return a.label < b.label;
  });
  std::vector<RegionToken> out;
  for (const auto& t : sorted) {
    if (static_cast<int>(out.size()) >= max_regions) break;
    out.push_back({labels.id(t.label), {t.bbox[0], t.bbox[1], t.bbox[2], t.bbox[3], t.confidence}});
  }
  return out;
}

int InputSequence::count(SlotKind kind) const {
  return static_cast<int>(std::count_if(slots.begin(), slots.end(), [&](const Slot& s) { return s.kind == kind; }));
}

int InputSequence::count(Segment segment) const {
  return static_cast<int>(
      std::count_if(slots.begin(), slots.end(), [&](const Slot& s) { return s.segment == segment; }));
}

InputSequence assemble_sequence(const corpus::QuestionRecord& record, const KnowledgeInput& knowledge,
                                const std::vector<RegionToken>& regions, const ModelConfig& config,
                                const Tokenizer& tokenizer, std::vector<std::string>* warnings) {
  std::vector<int> question = tokenizer.encode(record.text);
  std::vector<RegionToken> kept_regions = regions;
  std::vector<Slot> commonsense;
  const int k = std::min<int>(config.K, static_cast<int>(knowledge.inference_vecs.size()));

  switch (config.fusion_mode) {
    case FusionMode::none: break;
    case FusionMode::mha: commonsense.push_back({SlotKind::fused, 0, Segment::commonsense, 0}); break;
    case FusionMode::linear:
      for (int i = 0; i < k; ++i) commonsense.push_back({SlotKind::knowledge, i, Segment::commonsense, 0});
      break;
    case FusionMode::tokens: {
      const int sentences = std::min<int>(config.K, static_cast<int>(knowledge.sentences.size()));
      for (int i = 0; i < sentences; ++i)
        for (int id : tokenizer.encode(knowledge.sentences[static_cast<std::size_t>(i)]))
          commonsense.push_back({SlotKind::word, id, Segment::commonsense, 0});
      break;
    }
  }

  // [CLS] q [SEP] (c [SEP])? [MASK] [SEP] r [END]
  auto total = [&] {
    const int fixed = 5 + (commonsense.empty() && config.fusion_mode == FusionMode::none ? 0 : 1);
    return fixed + static_cast<int>(question.size() + commonsense.size() + kept_regions.size());
  };
  if (total() > config.max_len) {
    while (total() > config.max_len && !kept_regions.empty()) kept_regions.pop_back();
    while (total() > config.max_len && !question.empty()) question.pop_back();
    while (total() > config.max_len && !commonsense.empty()) commonsense.pop_back();
    if (warnings)
      warnings->push_back("question " + record.question_id + ": sequence truncated to max_len " +
                          std::to_string(config.max_len));
  }

  InputSequence seq;
  seq.question_vec = knowledge.question_vec;
  seq.inference_vecs.assign(knowledge.inference_vecs.begin(), knowledge.inference_vecs.begin() + k);
  seq.regions = kept_regions;
  auto push = [&seq](Slot s) {
    s.position = static_cast<int>(seq.slots.size());
    seq.slots.push_back(s);
  };
  push({SlotKind::word, Tokenizer::kCls, Segment::question, 0});
  for (int id : question) push({SlotKind::word, id, Segment::question, 0});
  push({SlotKind::word, Tokenizer::kSep, Segment::question, 0});
  if (config.fusion_mode != FusionMode::none) {
    for (const auto& s : commonsense) push(s);
    push({SlotKind::word, Tokenizer::kSep, Segment::commonsense, 0});
  }
  seq.mask_index = static_cast<int>(seq.slots.size());
  push({SlotKind::word, Tokenizer::kMask, Segment::answer, 0});
  push({SlotKind::word, Tokenizer::kSep, Segment::answer, 0});
  for (int i = 0; i < static_cast<int>(kept_regions.size()); ++i) push({SlotKind::region, i, Segment::region, 0});
  push({SlotKind::word, Tokenizer::kEnd, Segment::region, 0});
  return seq;
}

}  // namespace vlc::encoder
