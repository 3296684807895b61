#include "support.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>

#include <unistd.h>

namespace testing {

namespace fs = std::filesystem;
using namespace vlc;

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = fs::temp_directory_path() /
          ("vlc_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

std::string data_dir() { return VLC_DATA_DIR; }

double oracle_vqa_accuracy(const std::string& prediction, const std::vector<corpus::AnswerCount>& answers) {
  std::vector<std::string> slots;
  for (const auto& a : answers)
    for (int i = 0; i < a.count; ++i) slots.push_back(a.answer);
  int matches = 0;
  for (const auto& s : slots)
    if (s == prediction) ++matches;
  if (matches >= 3) return 1.0;
  return matches / 3.0;
}

OracleFusion oracle_fuse(const Vector& question, std::span<const Vector> inferences,
                         const fusion::FusionParameters& p) {
  const int n = static_cast<int>(inferences.size()) + 1;
  const int dh = p.model_dim / p.heads;
  auto row = [&](int i) -> const Vector& { return i + 1 < n ? inferences[static_cast<std::size_t>(i)] : question; };
  auto project = [&](const Matrix& w, const Vector& x) {
    std::vector<double> y(static_cast<std::size_t>(w.rows()), 0.0);
    for (int r = 0; r < w.rows(); ++r)
      for (int c = 0; c < w.cols(); ++c) y[static_cast<std::size_t>(r)] += w(r, c) * x[c];
    return y;
  };

  OracleFusion out;
  out.attention.assign(static_cast<std::size_t>(n), 0.0);
  std::vector<double> concat;
  for (int h = 0; h < p.heads; ++h) {
    const auto q = project(p.query[h], question);
    std::vector<double> scores(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      const auto key = project(p.key[h], row(i));
      double s = 0.0;
      for (int j = 0; j < dh; ++j) s += q[static_cast<std::size_t>(j)] * key[static_cast<std::size_t>(j)];
      scores[static_cast<std::size_t>(i)] = s / std::sqrt(static_cast<double>(dh));
    }
    const double mx = *std::max_element(scores.begin(), scores.end());
    double z = 0.0;
    for (double& s : scores) z += (s = std::exp(s - mx));
    std::vector<double> head(static_cast<std::size_t>(dh), 0.0);
    for (int i = 0; i < n; ++i) {
      const double a = scores[static_cast<std::size_t>(i)] / z;
      out.attention[static_cast<std::size_t>(i)] += a / p.heads;
      const auto v = project(p.value[h], row(i));
      for (int j = 0; j < dh; ++j) head[static_cast<std::size_t>(j)] += a * v[static_cast<std::size_t>(j)];
    }
    concat.insert(concat.end(), head.begin(), head.end());
  }
  out.fused.assign(static_cast<std::size_t>(p.model_dim), 0.0);
  for (int r = 0; r < p.model_dim; ++r) {
    double s = p.output_bias[r];
    for (int c = 0; c < p.model_dim; ++c) s += p.output(r, c) * concat[static_cast<std::size_t>(c)];
    out.fused[static_cast<std::size_t>(r)] = s;
  }
  return out;
}

std::vector<std::size_t> oracle_rank(const selection::EmbeddingVector& question,
                                     const std::vector<selection::Candidate>& candidates,
                                     std::span<const knowledge::RelationType> relations, int k) {
  struct Key {
    bool zero;
    double score;
    std::size_t relation;
    int beam;
    std::string sentence;
    std::string subject;
    std::size_t index;
  };
  std::vector<Key> keys;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    const bool zero = c.vector.values.norm() == 0.0;
    std::size_t rel = relations.size();
    for (std::size_t r = 0; r < relations.size(); ++r)
      if (relations[r].name == c.inference.relation) {
        rel = r;
        break;
      }
    keys.push_back({zero, zero ? 0.0 : selection::cosine(question.values, c.vector.values), rel,
                    c.inference.beam_rank, c.inference.sentence, c.inference.subject, i});
  }
  std::sort(keys.begin(), keys.end(), [](const Key& a, const Key& b) {
    return std::tie(a.zero, b.score, a.relation, a.beam, a.sentence, a.subject) <
           std::tie(b.zero, a.score, b.relation, b.beam, b.sentence, b.subject);
  });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < keys.size() && static_cast<int>(i) < k; ++i) out.push_back(keys[i].index);
  return out;
}

Vector random_vector(int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Vector v(dim);
  for (int i = 0; i < dim; ++i) v[i] = nd(rng);
  return v;
}

namespace {

constexpr double kStep = 1e-5;

void record(GradCheck& g, const std::string& name, double numeric, double analytic) {
  ++g.checked;
  const double diff = std::abs(numeric - analytic);
  g.worst_absolute = std::max(g.worst_absolute, diff);
  g.largest_gradient = std::max(g.largest_gradient, std::abs(analytic));
  if (diff <= kGradAbsFloor) return;
  const double rel = diff / std::max(std::abs(numeric), std::abs(analytic));
  if (rel > g.worst_relative) {
    g.worst_relative = rel;
    g.worst_name = name;
  }
}

template <typename Loss>
void probe(GradCheck& g, const std::string& name, double* data, Eigen::Index size, const double* analytic, Loss&& loss) {
  for (Eigen::Index i = 0; i < size; ++i) {
    const double old = data[i];
    data[i] = old + kStep;
    const double lp = loss();
    data[i] = old - kStep;
    const double lm = loss();
    data[i] = old;
    record(g, name, (lp - lm) / (2.0 * kStep), analytic[i]);
  }
}

}  // namespace

GradCheck check_fusion_gradients(std::uint64_t seed, int input_dim, int model_dim, int heads, int k,
                                 double attention_weight) {
  std::mt19937_64 rng(seed);
  auto params = fusion::FusionParameters::random(input_dim, model_dim, heads, rng);
  params.output_bias = random_vector(model_dim, rng);
  Vector q = random_vector(input_dim, rng);
  std::vector<Vector> c;
  for (int i = 0; i < k; ++i) c.push_back(random_vector(input_dim, rng));
  const Vector grad_f = random_vector(model_dim, rng);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  fusion::AttentionDistribution label;
  double total = 0.0;
  for (int i = 0; i <= k; ++i) total += label.weights.emplace_back(u(rng));
  for (double& w : label.weights) w /= total;

  auto loss = [&] {
    const auto out = fusion::fuse(q, c, params);
    return grad_f.dot(out.fused) + attention_weight * fusion::attention_loss(out.attention, label);
  };

  fusion::FusionCache cache;
  const auto out = fusion::fuse(q, c, params, &cache);
  auto grad_a = fusion::attention_loss_gradient(out.attention, label);
  for (double& v : grad_a) v *= attention_weight;
  const auto g = fusion::fuse_backward(params, cache, grad_f, grad_a);

  GradCheck result;
  for (int h = 0; h < heads; ++h) {
    probe(result, "query", params.query[h].data(), params.query[h].size(), g.params.query[h].data(), loss);
    probe(result, "key", params.key[h].data(), params.key[h].size(), g.params.key[h].data(), loss);
    probe(result, "value", params.value[h].data(), params.value[h].size(), g.params.value[h].data(), loss);
  }
  probe(result, "output", params.output.data(), params.output.size(), g.params.output.data(), loss);
  probe(result, "output_bias", params.output_bias.data(), params.output_bias.size(), g.params.output_bias.data(), loss);
  probe(result, "question", q.data(), q.size(), g.question.data(), loss);
  for (int i = 0; i < k; ++i) probe(result, "inference", c[i].data(), c[i].size(), g.inferences[i].data(), loss);
  return result;
}

GradCheck check_encoder_gradients(std::uint64_t seed, encoder::FusionMode mode) {
  using namespace vlc::encoder;
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.ffn = 16;
  cfg.K = 2;
  cfg.max_len = 32;
  cfg.fusion_mode = mode;
  const Tokenizer tok = Tokenizer::build({"where is cat", "cat is used for play", "you find cat at home"});
  const LabelVocab labels({"[UNK]", "cat", "rug"});
  const corpus::AnswerVocabulary vocab({"home", "play", "[UNK]"});
  constexpr int kEmbed = 6;

  std::mt19937_64 rng(seed);
  Model model = Model::random(cfg, tok.size(), labels.size(), static_cast<int>(vocab.size()), kEmbed, rng);
  // Random biases and gains so every parameter carries a non-trivial gradient.
  std::normal_distribution<double> jitter(0.0, 0.3);
  for (auto& p : model.params())
    if (p.cols == 1)
      for (Eigen::Index i = 0; i < p.size(); ++i) p.data[i] += jitter(rng);

  const corpus::QuestionRecord record{"q1", "i1", "where is cat", {{"home", 6}, {"play", 3}, {"yard", 1}},
                                      corpus::Split::train};
  KnowledgeInput ki;
  ki.question_vec = random_vector(kEmbed, rng);
  ki.inference_vecs = {random_vector(kEmbed, rng), random_vector(kEmbed, rng)};
  ki.sentences = {"cat is used for play", "you find cat at home"};
  std::uniform_real_distribution<double> u(0.0, 0.5);
  const std::vector<RegionToken> regions{{1, {u(rng), u(rng), 0.5 + u(rng), 0.5 + u(rng), 0.9}},
                                         {2, {u(rng), u(rng), 0.5 + u(rng), 0.5 + u(rng), 0.6}}};
  Example ex;
  ex.question_id = "q1";
  ex.sequence = assemble_sequence(record, ki, regions, cfg, tok);
  ex.target = answer_target(record.answers, vocab);
  ex.answers = record.answers;
  if (mode == FusionMode::mha) ex.attention_label = fusion::AttentionDistribution{{0.1, 0.7, 0.2}};

  Model grads = model.zeros_like();
  example_loss(model, ex, &grads);
  auto ps = model.params();
  const auto gs = grads.params();
  auto loss = [&] { return example_loss(model, ex, nullptr).total; };
  GradCheck result;
  for (std::size_t i = 0; i < ps.size(); ++i) probe(result, ps[i].name, ps[i].data, ps[i].size(), gs[i].data, loss);
  return result;
}

}  // namespace testing
