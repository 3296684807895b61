#include "vlc/selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <httplib.h>
#include <json.hpp>

#include "vlc/error.hpp"

namespace vlc::selection {

using nlohmann::json;

namespace {

double unit_uniform(std::mt19937_64& rng) { return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53; }

// Box-Muller on top of the raw engine so the draw is identical across standard libraries.
double std_normal(std::mt19937_64& rng) {
  const double u1 = unit_uniform(rng);
  const double u2 = unit_uniform(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

EmbeddingVector normalized(Vector v) {
  const double n = v.norm();
  if (n == 0.0) return {std::move(v), false};
  v /= n;
  return {std::move(v), true};
}

}  // namespace

double cosine(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw DimensionError("cosine: dimension mismatch");
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

std::vector<EmbeddingVector> SentenceEncoder::encode_batch(const std::vector<std::string>& texts) const {
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(encode(t));
  return out;
}

Embedder::Embedder(int dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim <= 0) throw ConfigError("embedder dimension must be positive");
}

Vector Embedder::token_vector(const std::string& token) const {
  if (auto it = table_.find(token); it != table_.end()) return it->second;
  std::mt19937_64 rng(fnv1a64(token, fnv1a64(std::to_string(seed_))));
  Vector v(dim_);
  for (int i = 0; i < dim_; ++i) v[i] = std_normal(rng);
  return v / v.norm();
}

Vector& Embedder::mutable_token(const std::string& token) {
  auto it = table_.find(token);
  if (it == table_.end()) it = table_.emplace(token, token_vector(token)).first;
  return it->second;
}

Vector Embedder::mean_vector(const std::vector<std::string>& tokens) const {
  Vector m = Vector::Zero(dim_);
  if (tokens.empty()) return m;
  for (const auto& t : tokens) m += token_vector(t);
  return m / static_cast<double>(tokens.size());
}

EmbeddingVector Embedder::encode(const std::string& text) const { return normalized(mean_vector(tokenize(text))); }

std::string Embedder::to_json() const {
  std::vector<std::string> keys;
  keys.reserve(table_.size());
  for (const auto& [k, v] : table_) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  json tokens = json::object();
  for (const auto& k : keys) {
    const Vector& v = table_.at(k);
    tokens[k] = std::vector<double>(v.data(), v.data() + v.size());
  }
  return json{{"format", "vlc-embedder"}, {"version", 1},     {"dim", dim_},
              {"seed", seed_},            {"trained", trained_}, {"tokens", std::move(tokens)}}
             .dump() +
         "\n";
}

Embedder Embedder::from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    if (j.at("format").get<std::string>() != "vlc-embedder" || j.at("version").get<int>() != 1)
      throw ParseError("embedder checkpoint: unsupported format or version");
    Embedder e(j.at("dim").get<int>(), j.at("seed").get<std::uint64_t>());
    e.trained_ = j.at("trained").get<bool>();
    for (auto it = j.at("tokens").begin(); it != j.at("tokens").end(); ++it) {
      auto values = it.value().get<std::vector<double>>();
      if (static_cast<int>(values.size()) != e.dim_) throw ParseError("embedder checkpoint: bad vector size");
      e.table_[it.key()] = Eigen::Map<Vector>(values.data(), e.dim_);
    }
    return e;
  } catch (const json::exception& ex) {
    throw ParseError(std::string("embedder checkpoint: ") + ex.what());
  }
}

void Embedder::save(const std::string& path) const { write_file(path, to_json()); }
Embedder Embedder::load(const std::string& path) { return from_json(read_file(path)); }

bool Embedder::operator==(const Embedder& o) const {
  if (dim_ != o.dim_ || seed_ != o.seed_ || trained_ != o.trained_ || table_.size() != o.table_.size()) return false;
  for (const auto& [k, v] : table_) {
    auto it = o.table_.find(k);
    if (it == o.table_.end() || it->second != v) return false;
  }
  return true;
}

EmbeddingVector embed(const SentenceEncoder& encoder, const std::string& text) { return encoder.encode(text); }

std::vector<std::size_t> rank_indices(const EmbeddingVector& question, const std::vector<Candidate>& candidates,
                                      std::span<const knowledge::RelationType> relations, int k) {
  std::vector<double> score(candidates.size());
  std::vector<std::size_t> rel_order(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    if (c.vector.dim() != question.dim())
      throw DimensionError("rank_and_select: candidate dimension " + std::to_string(c.vector.dim()) +
                           " != question dimension " + std::to_string(question.dim()));
    const bool zero = c.vector.values.norm() == 0.0;
    score[i] = zero ? -std::numeric_limits<double>::infinity() : cosine(question.values, c.vector.values);
    auto it = std::find_if(relations.begin(), relations.end(),
                           [&](const auto& r) { return r.name == c.inference.relation; });
    rel_order[i] = static_cast<std::size_t>(it - relations.begin());
  }
  std::vector<std::size_t> idx(candidates.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto before = [&](std::size_t a, std::size_t b) {
    if (score[a] != score[b]) return score[a] > score[b];
    if (rel_order[a] != rel_order[b]) return rel_order[a] < rel_order[b];
    const auto& ia = candidates[a].inference;
    const auto& ib = candidates[b].inference;
    if (ia.beam_rank != ib.beam_rank) return ia.beam_rank < ib.beam_rank;
    if (ia.sentence != ib.sentence) return ia.sentence < ib.sentence;
    return ia.subject < ib.subject;
  };
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(std::max(k, 0)), idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<long>(take), idx.end(), before);
  idx.resize(take);
  return idx;
}

std::vector<knowledge::Inference> rank_and_select(const EmbeddingVector& question, const std::vector<Candidate>& candidates,
                                                  std::span<const knowledge::RelationType> relations, int k) {
  std::vector<knowledge::Inference> out;
  for (std::size_t i : rank_indices(question, candidates, relations, k)) out.push_back(candidates[i].inference);
  return out;
}

double label_similarity(const std::string& sentence, const std::vector<corpus::AnswerCount>& answers,
                        const StopWords& stopwords) {
  const auto words = token_set(sentence);
  long long total = 0, matched = 0;
  for (const auto& a : answers) {
    total += a.count;
    const auto content = stopwords.content_tokens(a.answer);
    if (content.empty()) continue;
    if (std::all_of(content.begin(), content.end(), [&](const std::string& t) { return words.count(t) != 0; }))
      matched += a.count;
  }
  return total == 0 ? 0.0 : static_cast<double>(matched) / static_cast<double>(total);
}

bool contains_answer_token(const std::string& sentence, const std::vector<corpus::AnswerCount>& answers,
                           const StopWords& stopwords) {
  const auto words = token_set(sentence);
  for (const auto& a : answers)
    for (const auto& t : stopwords.content_tokens(a.answer))
      if (words.count(t)) return true;
  return false;
}

namespace {

// Loss and gradient of (cos(mean(q), mean(s)) - y)^2 for one pair.
double pair_loss(const Embedder& e, const std::vector<std::string>& q, const std::vector<std::string>& s, double y,
                 double grad_scale, std::unordered_map<std::string, Vector>* grads) {
  if (q.empty() || s.empty()) return 0.0;
  const Vector mq = e.mean_vector(q);
  const Vector ms = e.mean_vector(s);
  const double nq = mq.norm(), ns = ms.norm();
  if (nq == 0.0 || ns == 0.0) return 0.0;
  const double c = mq.dot(ms) / (nq * ns);
  const double diff = c - y;
  if (grads) {
    const double g = 2.0 * diff * grad_scale;
    const Vector dmq = g * (ms / (nq * ns) - c * mq / (nq * nq));
    const Vector dms = g * (mq / (nq * ns) - c * ms / (ns * ns));
    auto add = [&](const std::vector<std::string>& toks, const Vector& dm) {
      const double w = 1.0 / static_cast<double>(toks.size());
      for (const auto& t : toks) {
        auto it = grads->find(t);
        if (it == grads->end()) it = grads->emplace(t, Vector::Zero(e.dim())).first;
        it->second += w * dm;
      }
    };
    add(q, dmq);
    add(s, dms);
  }
  return diff * diff;
}

}  // namespace

double augment_loss(const Embedder& embedder, std::span<const TrainingPair> pairs,
                    std::unordered_map<std::string, Vector>* grads) {
  if (pairs.empty()) return 0.0;
  const double scale = 1.0 / static_cast<double>(pairs.size());
  double total = 0.0;
  for (const auto& p : pairs) total += pair_loss(embedder, tokenize(p.question), tokenize(p.sentence), p.score, scale, grads);
  return total * scale;
}

std::string augment_train(Embedder& embedder, std::span<const TrainingPair> pairs, const AugmentOptions& options) {
  if (pairs.empty()) return "augment_train: no training pairs; embedder left unchanged";
  if (options.epochs <= 0) return {};
  struct Tokenized {
    std::vector<std::string> q, s;
    double y;
  };
  std::vector<Tokenized> data;
  data.reserve(pairs.size());
  for (const auto& p : pairs) data.push_back({tokenize(p.question), tokenize(p.sentence), p.score});

  std::mt19937_64 rng(options.shuffle_seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::unordered_map<std::string, Vector> grads;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    for (std::size_t i : order) {
      grads.clear();
      pair_loss(embedder, data[i].q, data[i].s, data[i].y, 1.0, &grads);
      for (const auto& [tok, g] : grads) embedder.mutable_token(tok) -= options.learning_rate * g;
    }
  }
  embedder.set_trained(true);
  return {};
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("spearman: length mismatch");
  if (x.size() < 2) return 0.0;
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

ServiceEncoder::ServiceEncoder(EmbeddingServiceOptions options) : options_(std::move(options)) {}

int ServiceEncoder::dim() const {
  if (dim_ < 0) encode_batch({"dimension probe"});
  return dim_;
}

EmbeddingVector ServiceEncoder::encode(const std::string& text) const { return encode_batch({text}).front(); }

std::vector<EmbeddingVector> ServiceEncoder::encode_batch(const std::vector<std::string>& texts) const {
  httplib::Client client(options_.url);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(options_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(options_.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  auto res = client.Post("/embed", json{{"texts", texts}}.dump(), "application/json");
  if (!res) throw Error("embedding service: transport error " + httplib::to_string(res.error()));
  if (res->status != 200) throw Error("embedding service: HTTP status " + std::to_string(res->status));
  std::vector<std::vector<double>> vectors;
  try {
    vectors = json::parse(res->body).at("vectors").get<std::vector<std::vector<double>>>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("embedding service: malformed response: ") + e.what());
  }
  if (vectors.size() != texts.size()) throw Error("embedding service: wrong number of vectors");
  std::vector<EmbeddingVector> out;
  for (auto& v : vectors) {
    if (dim_ < 0) dim_ = static_cast<int>(v.size());
    if (static_cast<int>(v.size()) != dim_)
      throw DimensionError("embedding service: dimension " + std::to_string(v.size()) + " != " + std::to_string(dim_));
    out.push_back(normalized(Eigen::Map<Vector>(v.data(), dim_)));
  }
  return out;
}

}  // namespace vlc::selection
