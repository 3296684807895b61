#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "vlc/encoder.hpp"
#include "vlc/error.hpp"

namespace vlc::encoder {

using nlohmann::json;

namespace {

void sgd_step(Model& model, const Model& grads, double lr, double scale) { model.add_scaled(grads, -lr * scale); }

void adam_step(Model& model, const Model& grads, OptimizerState& st, double lr, double scale) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++st.step;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
  auto p = model.params();
  auto g = grads.params();
  auto m = st.m.params();
  auto v = st.v.params();
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (Eigen::Index j = 0; j < p[i].size(); ++j) {
      const double gj = g[i].data[j] * scale;
      m[i].data[j] = b1 * m[i].data[j] + (1.0 - b1) * gj;
      v[i].data[j] = b2 * v[i].data[j] + (1.0 - b2) * gj * gj;
      p[i].data[j] -= lr * (m[i].data[j] / c1) / (std::sqrt(v[i].data[j] / c2) + eps);
    }
  }
}

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

std::vector<Prediction> predict_with(const Model& model, const corpus::AnswerVocabulary& vocab,
                                     const std::vector<Example>& examples) {
  std::vector<Prediction> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    const auto res = forward(model, ex.sequence);
    if (res.logits.size() != static_cast<Eigen::Index>(vocab.size()))
      throw ValidationError("model output size does not match the answer vocabulary");
    Eigen::Index best = 0;
    res.logits.maxCoeff(&best);
    const double mx = res.logits.maxCoeff();
    const double denom = (res.logits.array() - mx).exp().sum();
    Prediction p;
    p.question_id = ex.question_id;
    p.prediction = vocab.at(static_cast<int>(best));
    p.score = 1.0 / denom;
    p.accuracy = corpus::vqa_accuracy(p.prediction, ex.answers);
    p.attention = res.attention;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

bool is_supervised(const std::string& question_id, double fraction, std::uint64_t seed) {
  if (fraction >= 1.0) return true;
  if (fraction <= 0.0) return false;
  std::uint64_t h = fnv1a64(question_id, fnv1a64(std::to_string(seed) + "/supervision"));
  h ^= h >> 30;
  h *= 0xbf58476d1ce4e5b9ULL;
  h ^= h >> 27;
  h *= 0x94d049bb133111ebULL;
  h ^= h >> 31;
  return static_cast<double>(h >> 11) * 0x1.0p-53 < fraction;
}

json EpochLog::to_json() const {
  return json{{"epoch", epoch},
              {"train_loss", train_loss},
              {"answer_loss", answer_loss},
              {"attention_loss", attention_loss},
              {"val_accuracy", val_accuracy}};
}

TrainResult train(Checkpoint init, const std::vector<Example>& train_set, const std::vector<Example>& val_set) {
  const ModelConfig& cfg = init.config;
  cfg.validate();
  TrainResult result;
  if (cfg.epochs == 0 || train_set.empty()) {
    result.checkpoint = std::move(init);
    return result;
  }

  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  if (!init.rng_state.empty()) {
    std::istringstream is(init.rng_state);
    is >> rng;
  }
  Model& model = init.model;
  Model grads = model.zeros_like();
  std::optional<OptimizerState>& adam = init.optimizer_state;
  if (cfg.optimizer != Optimizer::adam) {
    adam.reset();
  } else if (!adam) {
    adam = OptimizerState{0, model.zeros_like(), model.zeros_like()};
  }

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  double best_acc = -std::numeric_limits<double>::infinity();
  const int start_epoch = init.epoch;
  for (int e = 1; e <= cfg.epochs; ++e) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

    EpochLog log;
    log.epoch = start_epoch + e;
    grads.set_zero();
    int in_group = 0;
    int micro = 0;
    auto step = [&] {
      if (in_group == 0) return;
      const double scale = 1.0 / in_group;
      if (adam) {
        adam_step(model, grads, *adam, cfg.learning_rate, scale);
      } else {
        sgd_step(model, grads, cfg.learning_rate, scale);
      }
      grads.set_zero();
      in_group = 0;
      micro = 0;
    };
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
      for (std::size_t i = b; i < end; ++i) {
        const LossParts l = example_loss(model, train_set[order[i]], &grads);
        if (!std::isfinite(l.total))
          throw DivergenceError("training diverged at epoch " + std::to_string(log.epoch) + " on question " +
                                train_set[order[i]].question_id + " (loss " + std::to_string(l.total) + ")");
        log.train_loss += l.total;
        log.answer_loss += l.answer;
        log.attention_loss += l.attention;
        ++in_group;
      }
      if (++micro == cfg.grad_accum) step();
    }
    step();
    if (!model.all_finite()) throw DivergenceError("training diverged: non-finite parameters at epoch " + std::to_string(log.epoch));

    const double n = static_cast<double>(train_set.size());
    log.train_loss /= n;
    log.answer_loss /= n;
    log.attention_loss /= n;
    log.val_accuracy = val_set.empty() ? 0.0 : mean_accuracy(predict_with(model, init.vocabulary, val_set));
    result.log.push_back(log);

    if (val_set.empty() || log.val_accuracy > best_acc) {
      best_acc = log.val_accuracy;
      result.checkpoint = init;
      result.checkpoint.epoch = log.epoch;
      result.checkpoint.rng_state = rng_to_string(rng);
    }
  }
  return result;
}

std::vector<Prediction> predict(const Checkpoint& ckpt, const std::vector<Example>& examples) {
  return predict_with(ckpt.model, ckpt.vocabulary, examples);
}

double mean_accuracy(const std::vector<Prediction>& predictions) {
  if (predictions.empty()) return 0.0;
  double s = 0.0;
  for (const auto& p : predictions) s += p.accuracy;
  return s / static_cast<double>(predictions.size());
}

EvalReport build_report(const std::vector<Prediction>& predictions, const std::vector<corpus::QuestionRecord>& records,
                        const corpus::WordLists* wordlists, const std::string& split) {
  std::unordered_map<std::string, const corpus::QuestionRecord*> by_id;
  for (const auto& r : records) by_id[r.question_id] = &r;

  EvalReport report;
  report.split = split;
  report.count = static_cast<int>(predictions.size());
  double total = 0.0;
  std::map<std::string, std::pair<int, double>> subset_sums;
  if (wordlists)
    for (const char* name : {"retained", "factual", "numerical", "visual"}) subset_sums[name] = {0, 0.0};

  for (const auto& p : predictions) {
    auto it = by_id.find(p.question_id);
    if (it == by_id.end()) throw ValidationError("prediction for unknown question " + p.question_id);
    Prediction scored = p;
    scored.accuracy = corpus::vqa_accuracy(p.prediction, it->second->answers);
    scored.attention.reset();
    total += scored.accuracy;
    if (wordlists) {
      const auto verdict = corpus::subset_filter(*it->second, *wordlists);
      auto& slot = subset_sums[verdict.retained ? "retained" : corpus::to_string(verdict.reason)];
      ++slot.first;
      slot.second += scored.accuracy;
    }
    report.predictions.push_back(std::move(scored));
  }
  report.accuracy = predictions.empty() ? 0.0 : total / static_cast<double>(predictions.size());
  if (wordlists) {
    report.subsets.emplace();
    for (const auto& [name, sums] : subset_sums) {
      SubsetScore s;
      s.count = sums.first;
      if (sums.first > 0) s.accuracy = sums.second / sums.first;
      (*report.subsets)[name] = s;
    }
  }
  return report;
}

json EvalReport::to_json() const {
  json j;
  j["meta"] = meta;
  j["split"] = split;
  j["count"] = count;
  j["accuracy"] = accuracy;
  if (subsets) {
    json s = json::object();
    for (const auto& [name, score] : *subsets)
      s[name] = {{"count", score.count}, {"accuracy", score.accuracy ? json(*score.accuracy) : json(nullptr)}};
    j["subsets"] = std::move(s);
  }
  json preds = json::array();
  for (const auto& p : predictions)
    preds.push_back({{"question_id", p.question_id},
                     {"prediction", p.prediction},
                     {"score", p.score},
                     {"accuracy", p.accuracy}});
  j["predictions"] = std::move(preds);
  return j;
}

std::string predictions_to_jsonl(const std::vector<Prediction>& predictions) {
  std::string out;
  for (const auto& p : predictions)
    out += json{{"question_id", p.question_id}, {"prediction", p.prediction}, {"score", p.score}}.dump() + "\n";
  return out;
}

std::vector<Prediction> predictions_from_jsonl(std::string_view text) {
  std::vector<Prediction> out;
  std::size_t pos = 0;
  int line_no = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const std::string line = trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      Prediction p;
      p.question_id = j.at("question_id").get<std::string>();
      p.prediction = j.at("prediction").get<std::string>();
      p.score = j.at("score").get<double>();
      out.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw ParseError("prediction file line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace vlc::encoder
