#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "vlc/corpus.hpp"
#include "vlc/fusion.hpp"
#include "vlc/linalg.hpp"

namespace vlc::encoder {

/// How the selected inferences enter the encoder.
enum class FusionMode {
  none,    // no commonsense segment
  tokens,  // every word of every selected sentence
  linear,  // one linearly projected embedding per sentence
  mha,     // a single fused vector from question-queried attention
};

enum class Optimizer { sgd, adam };

std::string to_string(FusionMode m);
FusionMode parse_fusion_mode(std::string_view s);

struct ModelConfig {
  int d_model = 64;
  int layers = 2;
  int heads = 4;
  int ffn = 256;
  int K = 5;
  FusionMode fusion_mode = FusionMode::mha;
  double supervision_fraction = 1.0;
  int batch_size = 16;
  int grad_accum = 4;
  int epochs = 20;
  double learning_rate = 1e-2;
  double attention_loss_weight = 1.0;
  int max_len = 96;
  int max_regions = 10;
  Optimizer optimizer = Optimizer::sgd;
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  /// Fields absent from `j` keep their current value; unknown fields are rejected.
  void update_from_json(const nlohmann::json& j, const std::string& where = "model");
  bool operator==(const ModelConfig&) const = default;
};

/// Lowercase word vocabulary with special tokens at fixed ids.
class Tokenizer {
 public:
  static constexpr int kCls = 0, kSep = 1, kMask = 2, kEnd = 3, kOov = 4;

  Tokenizer();
  explicit Tokenizer(std::vector<std::string> words);  // words[0..4] must be the specials
  static Tokenizer build(const std::vector<std::string>& texts);

  int id(const std::string& word) const;
  std::vector<int> encode(std::string_view text) const;
  int size() const { return static_cast<int>(words_.size()); }
  const std::vector<std::string>& words() const { return words_; }
  bool operator==(const Tokenizer& o) const { return words_ == o.words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

/// Object class labels of region tokens; id 0 is unknown.
class LabelVocab {
 public:
  LabelVocab();
  explicit LabelVocab(std::vector<std::string> labels);  // labels[0] must be "[UNK]"
  static LabelVocab build(const corpus::ObjectTagMap& tags);

  int id(const std::string& label) const;
  int size() const { return static_cast<int>(labels_.size()); }
  const std::vector<std::string>& labels() const { return labels_; }
  bool operator==(const LabelVocab& o) const { return labels_ == o.labels_; }

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, int> index_;
};

struct RegionToken {
  int label_id = 0;
  std::array<double, 5> geometry{};  // x1, y1, x2, y2, confidence
};

std::vector<RegionToken> region_tokens(const std::vector<corpus::ObjectTag>& tags, const LabelVocab& labels,
                                       int max_regions);

enum class Segment { question = 0, commonsense = 1, answer = 2, region = 3 };
inline constexpr int kSegments = 4;

enum class SlotKind { word, fused, knowledge, region };

struct Slot {
  SlotKind kind = SlotKind::word;
  int id = 0;  // word id, knowledge index, or region index
  Segment segment = Segment::question;
  int position = 0;
};

/// [CLS] q.. [SEP] commonsense.. [SEP] [MASK] [SEP] regions.. [END]
struct InputSequence {
  std::vector<Slot> slots;
  int mask_index = -1;
  Vector question_vec;               // fused and knowledge slots read these
  std::vector<Vector> inference_vecs;
  std::vector<RegionToken> regions;

  int length() const { return static_cast<int>(slots.size()); }
  int count(SlotKind kind) const;
  int count(Segment segment) const;
};

/// Commonsense payload for one question: the selected sentences and their embeddings.
struct KnowledgeInput {
  Vector question_vec;
  std::vector<Vector> inference_vecs;
  std::vector<std::string> sentences;
};

InputSequence assemble_sequence(const corpus::QuestionRecord& record, const KnowledgeInput& knowledge,
                                const std::vector<RegionToken>& regions, const ModelConfig& config,
                                const Tokenizer& tokenizer, std::vector<std::string>* warnings = nullptr);

struct LayerParams {
  Matrix wq, wk, wv, wo;
  Vector bq, bk, bv, bo;
  Vector ln1_gain, ln1_bias;
  Matrix w1, w2;
  Vector b1, b2;
  Vector ln2_gain, ln2_bias;
};

/// A named view of one parameter tensor.
struct ParamRef {
  std::string name;
  double* data = nullptr;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  Eigen::Index size() const { return rows * cols; }
};

/// Single-stream transformer encoder with an answer classifier on the MASK slot.
/// A zero-initialized Model of the same shape doubles as a gradient buffer.
class Model {
 public:
  Model() = default;
  Model(const ModelConfig& config, int vocab_size, int region_labels, int answers, int embed_dim);

  static Model random(const ModelConfig& config, int vocab_size, int region_labels, int answers, int embed_dim,
                      std::mt19937_64& rng);
  Model zeros_like() const;

  std::vector<ParamRef> params();
  std::vector<ParamRef> params() const;  // data points at const storage; do not write through it
  void set_zero();
  void add_scaled(const Model& other, double scale);
  std::size_t parameter_count() const;
  bool all_finite() const;

  ModelConfig config;
  int vocab_size = 0;
  int region_labels = 0;
  int answers = 0;
  int embed_dim = 0;

  Matrix token_emb, segment_emb, position_emb, region_emb;
  Matrix geometry_w;
  Vector geometry_b;
  Matrix knowledge_w;  // linear mode: d_model x embed_dim
  Vector knowledge_b;
  fusion::FusionParameters fusion;
  Vector emb_ln_gain, emb_ln_bias;
  std::vector<LayerParams> layers;
  Matrix classifier_w;
  Vector classifier_b;
};

struct LayerCache {
  Matrix input, q, k, v, concat, h1, z, g;
  std::vector<Matrix> attn;
  Matrix xhat1, xhat2;
  Vector rstd1, rstd2;
};

struct ForwardCache {
  Matrix x0, emb_xhat;
  Vector emb_rstd;
  std::vector<LayerCache> layers;
  Matrix final_hidden;
  fusion::FusionCache fusion;
  bool has_fusion = false;
};

struct ForwardResult {
  Vector logits;
  std::optional<fusion::AttentionDistribution> attention;  // mha mode only
};

ForwardResult forward(const Model& model, const InputSequence& seq, ForwardCache* cache = nullptr);

/// Accumulates parameter gradients into `grads`.
void backward(const Model& model, const InputSequence& seq, const ForwardCache& cache, const Vector& grad_logits,
              const std::vector<double>& grad_attention, Model& grads);

/// Row-wise layer normalization without the affine part; exposed for tests.
Matrix layer_norm_rows(const Matrix& x, Vector* rstd = nullptr);
inline constexpr double kLayerNormEps = 1e-12;

/// Soft target over the vocabulary: annotator counts normalized to sum to
/// one, out-of-vocabulary mass on UNK.
Vector answer_target(const std::vector<corpus::AnswerCount>& answers, const corpus::AnswerVocabulary& vocab);

/// -sum target * log softmax(logits) and its gradient.
double soft_cross_entropy(const Vector& logits, const Vector& target, Vector* grad = nullptr);

struct Example {
  std::string question_id;
  InputSequence sequence;
  Vector target;
  std::optional<fusion::AttentionDistribution> attention_label;
  std::vector<corpus::AnswerCount> answers;
};

struct LossParts {
  double total = 0.0;
  double answer = 0.0;
  double attention = 0.0;
};

/// Loss of one example; gradients are accumulated into `grads` when non-null.
LossParts example_loss(const Model& model, const Example& ex, Model* grads);

/// Adam moment estimates; absent for plain SGD.
struct OptimizerState {
  long step = 0;
  Model m, v;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  ModelConfig config;
  Tokenizer tokenizer;
  LabelVocab labels;
  corpus::AnswerVocabulary vocabulary;
  Model model;
  int epoch = 0;
  std::string rng_state;
  std::optional<OptimizerState> optimizer_state;
  nlohmann::json meta = nlohmann::json::object();  // tool version, config digest, seed

  static Checkpoint initialize(const ModelConfig& config, Tokenizer tokenizer, LabelVocab labels,
                               corpus::AnswerVocabulary vocabulary, int embed_dim);

  std::string serialize() const;
  static Checkpoint deserialize(std::string_view bytes);
  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double answer_loss = 0.0;
  double attention_loss = 0.0;
  double val_accuracy = 0.0;

  nlohmann::json to_json() const;
};

struct TrainResult {
  Checkpoint checkpoint;  // best validation epoch
  std::vector<EpochLog> log;
};

/// Deterministic subset of questions that receive attention supervision.
bool is_supervised(const std::string& question_id, double fraction, std::uint64_t seed);

/// Mini-batch training with gradient accumulation; keeps the best-validation weights.
TrainResult train(Checkpoint init, const std::vector<Example>& train_set, const std::vector<Example>& val_set);

struct Prediction {
  std::string question_id;
  std::string prediction;
  double score = 0.0;  // softmax probability of the prediction
  double accuracy = 0.0;
  std::optional<fusion::AttentionDistribution> attention;
};

std::vector<Prediction> predict(const Checkpoint& ckpt, const std::vector<Example>& examples);
double mean_accuracy(const std::vector<Prediction>& predictions);

struct SubsetScore {
  int count = 0;
  std::optional<double> accuracy;  // absent when no record qualifies
};

struct EvalReport {
  std::string split;
  int count = 0;
  double accuracy = 0.0;
  std::optional<std::map<std::string, SubsetScore>> subsets;  // "retained" plus one per exclusion reason
  std::vector<Prediction> predictions;
  nlohmann::json meta = nlohmann::json::object();

  nlohmann::json to_json() const;
};

/// Scores predictions against the records; the subset section is added when
/// `wordlists` is given.
EvalReport build_report(const std::vector<Prediction>& predictions, const std::vector<corpus::QuestionRecord>& records,
                        const corpus::WordLists* wordlists, const std::string& split);

std::string predictions_to_jsonl(const std::vector<Prediction>& predictions);
std::vector<Prediction> predictions_from_jsonl(std::string_view text);

}  // namespace vlc::encoder
