#include <doctest.h>

#include <cmath>
#include <random>

#include "support.hpp"
#include "vlc/encoder.hpp"
#include "vlc/error.hpp"
#include "vlc/pipeline.hpp"

using namespace vlc;
using namespace vlc::encoder;

namespace {

ModelConfig tiny_config(FusionMode mode) {
  ModelConfig c;
  c.d_model = 8;
  c.layers = 1;
  c.heads = 2;
  c.ffn = 16;
  c.K = 2;
  c.max_len = 40;
  c.fusion_mode = mode;
  c.batch_size = 4;
  c.grad_accum = 2;
  c.epochs = 3;
  c.learning_rate = 0.05;
  return c;
}

corpus::QuestionRecord make_record(int i) {
  static const std::vector<std::string> answers{"home", "play", "park"};
  const std::string a = answers[static_cast<std::size_t>(i % 3)];
  return {"q" + std::to_string(i), "i" + std::to_string(i), "where is cat " + std::to_string(i % 4),
          {{a, 8}, {"yard", 2}}, corpus::Split::train};
}

struct Fixture {
  Tokenizer tok;
  LabelVocab labels{{"[UNK]", "cat", "rug"}};
  corpus::AnswerVocabulary vocab{{"home", "park", "play"}};
  std::vector<corpus::QuestionRecord> records;
  std::vector<KnowledgeInput> knowledge;
  std::vector<std::vector<RegionToken>> regions;

  explicit Fixture(int n) {
    std::mt19937_64 rng(42);
    std::vector<std::string> texts;
    for (int i = 0; i < n; ++i) {
      records.push_back(make_record(i));
      KnowledgeInput ki;
      ki.question_vec = testing::random_vector(6, rng);
      ki.inference_vecs = {testing::random_vector(6, rng), testing::random_vector(6, rng)};
      ki.sentences = {"cat is at " + records.back().answers[0].answer, "cat can sleep"};
      knowledge.push_back(ki);
      regions.push_back({{1, {0.1, 0.1, 0.5, 0.5, 0.9}}, {2, {0.4, 0.2, 0.9, 0.7, 0.5}}});
      texts.push_back(records.back().text);
      texts.insert(texts.end(), ki.sentences.begin(), ki.sentences.end());
    }
    tok = Tokenizer::build(texts);
  }

  std::vector<Example> examples(const ModelConfig& cfg) const {
    std::vector<Example> out;
    const StopWords stop;
    for (std::size_t i = 0; i < records.size(); ++i) {
      Example ex;
      ex.question_id = records[i].question_id;
      ex.sequence = assemble_sequence(records[i], knowledge[i], regions[i], cfg, tok);
      ex.target = answer_target(records[i].answers, vocab);
      ex.answers = records[i].answers;
      if (cfg.fusion_mode == FusionMode::mha) {
        std::vector<knowledge::Inference> infs(2);
        infs[0].sentence = knowledge[i].sentences[0];
        infs[1].sentence = knowledge[i].sentences[1];
        ex.attention_label = fusion::weak_labels(infs, records[i].answers, stop);
      }
      out.push_back(std::move(ex));
    }
    return out;
  }

  Checkpoint init(const ModelConfig& cfg) const { return Checkpoint::initialize(cfg, tok, labels, vocab, 6); }
};

bool same_params(const Model& a, const Model& b) {
  const auto pa = a.params(), pb = b.params();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (Eigen::Index j = 0; j < pa[i].size(); ++j)
      if (pa[i].data[j] != pb[i].data[j]) return false;
  return true;
}

}  // namespace

TEST_CASE("sequence layout per fusion mode") {
  Fixture f(1);
  for (auto mode : {FusionMode::none, FusionMode::tokens, FusionMode::linear, FusionMode::mha}) {
    const auto cfg = tiny_config(mode);
    const auto seq = assemble_sequence(f.records[0], f.knowledge[0], f.regions[0], cfg, f.tok);
    CHECK(seq.slots.front().id == Tokenizer::kCls);
    CHECK(seq.slots.back().id == Tokenizer::kEnd);
    int masks = 0;
    for (const auto& s : seq.slots) masks += s.kind == SlotKind::word && s.id == Tokenizer::kMask;
    CHECK(masks == 1);
    CHECK(seq.slots[static_cast<std::size_t>(seq.mask_index)].segment == Segment::answer);
    CHECK(seq.count(SlotKind::region) == 2);
    for (int i = 0; i < seq.length(); ++i) CHECK(seq.slots[static_cast<std::size_t>(i)].position == i);
    switch (mode) {
      case FusionMode::none: CHECK(seq.count(Segment::commonsense) == 0); break;
      case FusionMode::mha:
        CHECK(seq.count(SlotKind::fused) == 1);
        CHECK(seq.count(Segment::commonsense) == 2);  // F and its [SEP]
        break;
      case FusionMode::linear: CHECK(seq.count(SlotKind::knowledge) == 2); break;
      case FusionMode::tokens: CHECK(seq.count(Segment::commonsense) == 1 + 4 + 3); break;
    }
  }
}

TEST_CASE("empty regions give a valid sequence and overlong input truncates regions first") {
  Fixture f(1);
  auto cfg = tiny_config(FusionMode::mha);
  const auto seq = assemble_sequence(f.records[0], f.knowledge[0], {}, cfg, f.tok);
  CHECK(seq.count(SlotKind::region) == 0);
  CHECK(seq.slots.back().id == Tokenizer::kEnd);

  cfg.max_len = 10;  // 7 fixed slots + 4 question words + 2 regions = 13
  std::vector<std::string> warnings;
  const auto cut = assemble_sequence(f.records[0], f.knowledge[0], f.regions[0], cfg, f.tok, &warnings);
  CHECK(cut.length() == 10);
  CHECK(cut.count(SlotKind::region) == 0);
  CHECK(cut.count(Segment::question) == 2 + 3);
  CHECK(warnings.size() == 1);
}

TEST_CASE("forward is deterministic and sized to the vocabulary") {
  Fixture f(2);
  for (auto mode : {FusionMode::none, FusionMode::tokens, FusionMode::linear, FusionMode::mha}) {
    const auto cfg = tiny_config(mode);
    const auto ckpt = f.init(cfg);
    const auto ex = f.examples(cfg);
    const auto a = forward(ckpt.model, ex[0].sequence);
    const auto b = forward(ckpt.model, ex[0].sequence);
    CHECK(a.logits.size() == static_cast<Eigen::Index>(f.vocab.size()));
    CHECK(a.logits == b.logits);
    CHECK(a.attention.has_value() == (mode == FusionMode::mha));
  }
}

TEST_CASE("swapping two region tokens together with their positions leaves logits unchanged") {
  Fixture f(1);
  const auto cfg = tiny_config(FusionMode::mha);
  const auto ckpt = f.init(cfg);
  auto seq = f.examples(cfg)[0].sequence;
  const auto before = forward(ckpt.model, seq).logits;
  std::vector<std::size_t> region_slots;
  for (std::size_t i = 0; i < seq.slots.size(); ++i)
    if (seq.slots[i].kind == SlotKind::region) region_slots.push_back(i);
  REQUIRE(region_slots.size() == 2);
  std::swap(seq.slots[region_slots[0]], seq.slots[region_slots[1]]);
  const auto after = forward(ckpt.model, seq).logits;
  CHECK((after - before).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("layer norm rows have zero mean and unit variance") {
  std::mt19937_64 rng(3);
  Matrix x(7, 16);
  for (int r = 0; r < 7; ++r) x.row(r) = testing::random_vector(16, rng).transpose() * (r + 1) + Vector::Constant(16, r).transpose();
  const Matrix y = layer_norm_rows(x);
  for (int r = 0; r < 7; ++r) {
    const double mean = y.row(r).mean();
    const double var = (y.row(r).array() - mean).square().mean();
    CHECK(std::abs(mean) < 1e-5);
    CHECK(std::abs(var - 1.0) < 1e-5);
  }
}

TEST_CASE("answer target sums to one and sends out-of-vocabulary mass to UNK") {
  const corpus::AnswerVocabulary vocab({"a", "b"});
  const auto t = answer_target({{"a", 5}, {"c", 3}, {"d", 2}}, vocab);
  CHECK(t.sum() == doctest::Approx(1.0));
  CHECK(t[vocab.lookup("a")] == doctest::Approx(0.5));
  CHECK(t[vocab.lookup("b")] == 0.0);
  CHECK(t[vocab.unk_index()] == doctest::Approx(0.5));
}

TEST_CASE("soft cross entropy gradient is softmax minus target") {
  Vector logits(3), target(3), grad;
  logits << 0.5, -1.0, 2.0;
  target << 0.2, 0.3, 0.5;
  const double loss = soft_cross_entropy(logits, target, &grad);
  const Vector p = (logits.array() - logits.maxCoeff()).exp() / (logits.array() - logits.maxCoeff()).exp().sum();
  CHECK(loss == doctest::Approx(-(target.array() * p.array().log()).sum()));
  CHECK((grad - (p - target)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("tiny encoder gradients match central differences in every mode") {
  for (auto mode : {FusionMode::none, FusionMode::tokens, FusionMode::linear, FusionMode::mha}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto r = testing::check_encoder_gradients(seed, mode);
      INFO(to_string(mode) << " seed " << seed << " worst " << r.worst_relative << " at " << r.worst_name);
      CHECK(r.worst_relative < testing::kGradTolerance);
      CHECK(r.checked > 500);
    }
  }
}

TEST_CASE("supervision fraction zero leaves only the answer loss") {
  Fixture f(6);
  auto cfg = tiny_config(FusionMode::mha);
  const auto ckpt = f.init(cfg);
  auto ex = f.examples(cfg);
  for (auto& e : ex) {
    const auto with = example_loss(ckpt.model, e, nullptr);
    CHECK(with.total == doctest::Approx(with.answer + cfg.attention_loss_weight * with.attention));
    e.attention_label.reset();
    const auto without = example_loss(ckpt.model, e, nullptr);
    CHECK(without.total == without.answer);
    CHECK(without.attention == 0.0);
  }
  int chosen = 0;
  for (int i = 0; i < 1000; ++i) chosen += is_supervised("q" + std::to_string(i), 0.3, 7);
  CHECK(chosen > 250);
  CHECK(chosen < 350);
  CHECK_FALSE(is_supervised("q1", 0.0, 7));
  CHECK(is_supervised("q1", 1.0, 7));
}

TEST_CASE("zero epochs returns the initialization") {
  Fixture f(4);
  auto cfg = tiny_config(FusionMode::mha);
  cfg.epochs = 0;
  const auto init = f.init(cfg);
  const auto res = train(init, f.examples(cfg), f.examples(cfg));
  CHECK(res.log.empty());
  CHECK(same_params(res.checkpoint.model, init.model));
  CHECK(res.checkpoint.epoch == 0);
}

TEST_CASE("training is bitwise reproducible and reduces the loss") {
  Fixture f(24);
  for (auto opt : {Optimizer::sgd, Optimizer::adam}) {
    auto cfg = tiny_config(FusionMode::mha);
    cfg.optimizer = opt;
    cfg.epochs = 6;
    cfg.learning_rate = opt == Optimizer::sgd ? 0.1 : 0.01;
    const auto ex = f.examples(cfg);
    const auto a = train(f.init(cfg), ex, ex);
    const auto b = train(f.init(cfg), ex, ex);
    CHECK(a.checkpoint.serialize() == b.checkpoint.serialize());
    REQUIRE(a.log.size() == 6);
    CHECK(a.log.back().train_loss < a.log.front().train_loss);
    CHECK(a.checkpoint.optimizer_state.has_value() == (opt == Optimizer::adam));
  }
}

TEST_CASE("non-finite loss aborts training") {
  Fixture f(4);
  auto cfg = tiny_config(FusionMode::none);
  auto init = f.init(cfg);
  init.model.classifier_b[0] = std::nan("");
  CHECK_THROWS_AS(train(init, f.examples(cfg), {}), DivergenceError);
}

TEST_CASE("checkpoint round trip reproduces forward outputs bit for bit") {
  Fixture f(8);
  testing::TempDir dir("ckpt");
  for (auto opt : {Optimizer::sgd, Optimizer::adam}) {
    auto cfg = tiny_config(FusionMode::mha);
    cfg.optimizer = opt;
    cfg.learning_rate = 0.01;
    const auto ex = f.examples(cfg);
    auto trained = train(f.init(cfg), ex, ex).checkpoint;
    trained.meta = {{"seed", 1}};
    trained.save(dir.file("m.ckpt"));
    const auto back = Checkpoint::load(dir.file("m.ckpt"));
    CHECK(back.serialize() == trained.serialize());
    CHECK(back.config == trained.config);
    CHECK(back.tokenizer == trained.tokenizer);
    CHECK(back.vocabulary == trained.vocabulary);
    CHECK(back.epoch == trained.epoch);
    CHECK(back.rng_state == trained.rng_state);
    for (const auto& e : ex) CHECK(forward(back.model, e.sequence).logits == forward(trained.model, e.sequence).logits);

    // resuming from the reloaded checkpoint continues identically
    CHECK(train(back, ex, ex).checkpoint.serialize() == train(trained, ex, ex).checkpoint.serialize());
  }
  CHECK_THROWS_AS(Checkpoint::deserialize("garbage"), ParseError);
  auto bytes = f.init(tiny_config(FusionMode::none)).serialize();
  bytes.pop_back();
  CHECK_THROWS_AS(Checkpoint::deserialize(bytes), ParseError);
}

TEST_CASE("forward rejects a model whose vocabulary does not match") {
  Fixture f(2);
  const auto cfg = tiny_config(FusionMode::none);
  auto ckpt = f.init(cfg);
  ckpt.vocabulary = corpus::AnswerVocabulary({"only"});
  CHECK_THROWS_AS(predict(ckpt, f.examples(cfg)), ValidationError);
}

TEST_CASE("evaluation report: saturation, empty subsets and prediction files") {
  std::vector<corpus::QuestionRecord> records{make_record(0), make_record(1)};
  std::vector<Prediction> preds;
  for (const auto& r : records) preds.push_back({r.question_id, r.answers[0].answer, 0.9, 0.0, std::nullopt});
  const auto lists = corpus::WordLists::defaults();
  const auto report = build_report(preds, records, &lists, "test");
  CHECK(report.accuracy == 1.0);
  REQUIRE(report.subsets.has_value());
  CHECK(report.subsets->at("retained").count == 2);
  CHECK_FALSE(report.subsets->at("factual").accuracy.has_value());
  CHECK(report.to_json()["subsets"]["factual"]["accuracy"].is_null());

  const auto reread = predictions_from_jsonl(predictions_to_jsonl(preds));
  CHECK(build_report(reread, records, &lists, "test").to_json().dump() == report.to_json().dump());
  CHECK_THROWS_AS(predictions_from_jsonl("{\"question_id\": 1}\n"), ParseError);
  CHECK_THROWS_AS(build_report({{"nope", "x", 0.1, 0.0, std::nullopt}}, records, nullptr, "test"), ValidationError);
}

TEST_CASE("pretrain then finetune staging") {
  Fixture f(12);
  auto cfg = tiny_config(FusionMode::mha);
  cfg.epochs = 0;
  const auto init = f.init(cfg);
  auto none_cfg = cfg;
  none_cfg.fusion_mode = FusionMode::none;
  const auto pre = f.examples(none_cfg);
  const auto fine = f.examples(cfg);

  std::vector<std::string> warnings;
  const auto staged = pipeline::pretrain_then_finetune(init, 3, pre, pre, fine, fine, &warnings);
  CHECK(staged.log.size() == 3);
  CHECK(staged.checkpoint.config.fusion_mode == FusionMode::mha);

  auto pre_only = init;
  pre_only.config.fusion_mode = FusionMode::none;
  pre_only.config.epochs = 3;
  const auto reference = train(pre_only, pre, pre).checkpoint;
  CHECK(same_params(staged.checkpoint.model, reference.model));

  warnings.clear();
  auto with_epochs = init;
  with_epochs.config.epochs = 2;
  const auto cold = pipeline::pretrain_then_finetune(with_epochs, 3, {}, {}, fine, fine, &warnings);
  CHECK_FALSE(warnings.empty());
  CHECK(cold.checkpoint.serialize() == train(with_epochs, fine, fine).checkpoint.serialize());

  auto bad = pre;
  bad[0].target = Vector::Zero(7);
  CHECK_THROWS_AS(pipeline::pretrain_then_finetune(init, 1, bad, bad, fine, fine), ValidationError);
}
