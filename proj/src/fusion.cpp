#include "vlc/fusion.hpp"

#include <cmath>
#include <numeric>

#include "vlc/error.hpp"
#include "vlc/selection.hpp"

namespace vlc::fusion {

namespace {

Matrix gaussian(int rows, int cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = dist(rng);
  return m;
}

Vector softmax(const Vector& scores) {
  const double mx = scores.maxCoeff();
  Vector e = (scores.array() - mx).exp();
  return e / e.sum();
}

}  // namespace

FusionParameters FusionParameters::zeros(int input_dim, int model_dim, int heads) {
  if (heads <= 0 || model_dim <= 0 || input_dim <= 0 || model_dim % heads != 0)
    throw ConfigError("fusion: model_dim must be a positive multiple of heads");
  FusionParameters p;
  p.input_dim = input_dim;
  p.model_dim = model_dim;
  p.heads = heads;
  const int dh = model_dim / heads;
  for (int h = 0; h < heads; ++h) {
    p.query.push_back(Matrix::Zero(dh, input_dim));
    p.key.push_back(Matrix::Zero(dh, input_dim));
    p.value.push_back(Matrix::Zero(dh, input_dim));
  }
  p.output = Matrix::Zero(model_dim, model_dim);
  p.output_bias = Vector::Zero(model_dim);
  return p;
}

FusionParameters FusionParameters::random(int input_dim, int model_dim, int heads, std::mt19937_64& rng) {
  FusionParameters p = zeros(input_dim, model_dim, heads);
  const double in_std = 1.0 / std::sqrt(static_cast<double>(input_dim));
  for (int h = 0; h < heads; ++h) {
    p.query[h] = gaussian(p.head_dim(), input_dim, in_std, rng);
    p.key[h] = gaussian(p.head_dim(), input_dim, in_std, rng);
    p.value[h] = gaussian(p.head_dim(), input_dim, in_std, rng);
  }
  p.output = gaussian(model_dim, model_dim, 1.0 / std::sqrt(static_cast<double>(model_dim)), rng);
  return p;
}

void FusionParameters::validate() const {
  if (heads <= 0 || model_dim % heads != 0) throw ConfigError("fusion: model_dim must be divisible by heads");
  auto finite = [](const auto& m) { return m.allFinite(); };
  for (int h = 0; h < heads; ++h)
    if (!finite(query[h]) || !finite(key[h]) || !finite(value[h])) throw ValidationError("fusion: non-finite parameter");
  if (!finite(output) || !finite(output_bias)) throw ValidationError("fusion: non-finite parameter");
}

void FusionParameters::set_zero() {
  for (int h = 0; h < heads; ++h) {
    query[h].setZero();
    key[h].setZero();
    value[h].setZero();
  }
  output.setZero();
  output_bias.setZero();
}

void FusionParameters::add_scaled(const FusionParameters& o, double scale) {
  for (int h = 0; h < heads; ++h) {
    query[h] += scale * o.query[h];
    key[h] += scale * o.key[h];
    value[h] += scale * o.value[h];
  }
  output += scale * o.output;
  output_bias += scale * o.output_bias;
}

bool AttentionDistribution::valid(double tol) const {
  if (weights.empty()) return false;
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) return false;
    sum += w;
  }
  return std::abs(sum - 1.0) <= tol;
}

FusionOutput fuse(const Vector& question, std::span<const Vector> inferences, const FusionParameters& params,
                  FusionCache* cache) {
  const int ds = params.input_dim;
  if (question.size() != ds) throw DimensionError("fuse: question dimension mismatch");
  for (const auto& c : inferences)
    if (c.size() != ds) throw DimensionError("fuse: inference dimension mismatch");

  const int n = static_cast<int>(inferences.size()) + 1;
  const int dh = params.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix x(n, ds);
  for (int i = 0; i + 1 < n; ++i) x.row(i) = inferences[static_cast<std::size_t>(i)].transpose();
  x.row(n - 1) = question.transpose();

  FusionCache local;
  FusionCache& c = cache ? *cache : local;
  c.inputs = x;
  c.queries.assign(params.heads, Vector());
  c.keys.assign(params.heads, Matrix());
  c.values.assign(params.heads, Matrix());
  c.attention.assign(params.heads, Vector());
  c.concat.resize(params.model_dim);

  FusionOutput out;
  out.attention.weights.assign(static_cast<std::size_t>(n), 0.0);
  for (int h = 0; h < params.heads; ++h) {
    c.queries[h] = params.query[h] * question;
    c.keys[h] = x * params.key[h].transpose();
    c.values[h] = x * params.value[h].transpose();
    c.attention[h] = softmax(c.keys[h] * c.queries[h] * scale);
    c.concat.segment(h * dh, dh) = c.values[h].transpose() * c.attention[h];
    for (int i = 0; i < n; ++i) out.attention.weights[i] += c.attention[h][i] / params.heads;
  }
  out.fused = params.output * c.concat + params.output_bias;
  c.ready = true;
  return out;
}

FusionInputGradients fuse_backward(const FusionParameters& params, const FusionCache& cache, const Vector& grad_fused,
                                   const std::vector<double>& grad_attention) {
  if (!cache.ready) throw Error("fuse_backward: no forward cache");
  const int n = static_cast<int>(cache.inputs.rows());
  if (grad_fused.size() != params.model_dim) throw DimensionError("fuse_backward: dL/dF dimension mismatch");
  if (!grad_attention.empty() && static_cast<int>(grad_attention.size()) != n)
    throw DimensionError("fuse_backward: attention gradient length mismatch");

  const int dh = params.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  FusionInputGradients g;
  g.params = FusionParameters::zeros(params.input_dim, params.model_dim, params.heads);
  g.params.output = grad_fused * cache.concat.transpose();
  g.params.output_bias = grad_fused;
  const Vector d_concat = params.output.transpose() * grad_fused;

  Matrix d_inputs = Matrix::Zero(n, params.input_dim);
  Vector d_question = Vector::Zero(params.input_dim);
  const Vector q = cache.inputs.row(n - 1).transpose();
  for (int h = 0; h < params.heads; ++h) {
    const Vector d_head = d_concat.segment(h * dh, dh);
    const Vector& a = cache.attention[h];
    const Matrix d_values = a * d_head.transpose();  // n x dh
    Vector d_a = cache.values[h] * d_head;
    if (!grad_attention.empty())
      for (int i = 0; i < n; ++i) d_a[i] += grad_attention[static_cast<std::size_t>(i)] / params.heads;
    const Vector d_scores = a.cwiseProduct(d_a.array().matrix() - Vector::Constant(n, a.dot(d_a)));
    const Vector d_query = scale * (cache.keys[h].transpose() * d_scores);   // dh
    const Matrix d_keys = scale * d_scores * cache.queries[h].transpose();   // n x dh

    g.params.query[h] = d_query * q.transpose();
    g.params.key[h] = d_keys.transpose() * cache.inputs;
    g.params.value[h] = d_values.transpose() * cache.inputs;
    d_inputs += d_keys * params.key[h] + d_values * params.value[h];
    d_question += params.query[h].transpose() * d_query;
  }
  d_question += d_inputs.row(n - 1).transpose();
  g.question = d_question;
  for (int i = 0; i + 1 < n; ++i) g.inferences.push_back(d_inputs.row(i).transpose());
  return g;
}

AttentionDistribution weak_labels(std::span<const knowledge::Inference> selected,
                                  const std::vector<corpus::AnswerCount>& answers, const StopWords& stopwords) {
  const std::size_t k = selected.size();
  std::vector<double> raw(k + 1, kLabelBase);
  bool any = false;
  for (std::size_t i = 0; i < k; ++i) {
    if (selection::contains_answer_token(selected[i].sentence, answers, stopwords)) {
      raw[i] = kLabelHit;
      any = true;
    }
  }
  if (!any) raw[k] = kLabelHit;
  const double total = std::accumulate(raw.begin(), raw.end(), 0.0);
  for (double& w : raw) w /= total;
  return {std::move(raw)};
}

double attention_loss(const AttentionDistribution& predicted, const AttentionDistribution& label) {
  if (predicted.size() != label.size()) throw DimensionError("attention_loss: length mismatch");
  double loss = 0.0;
  for (std::size_t i = 0; i < label.size(); ++i)
    loss -= label.weights[i] * std::log(std::max(predicted.weights[i], kProbabilityFloor));
  return loss;
}

std::vector<double> attention_loss_gradient(const AttentionDistribution& predicted, const AttentionDistribution& label) {
  if (predicted.size() != label.size()) throw DimensionError("attention_loss: length mismatch");
  std::vector<double> g(label.size(), 0.0);
  for (std::size_t i = 0; i < label.size(); ++i)
    if (predicted.weights[i] > kProbabilityFloor) g[i] = -label.weights[i] / predicted.weights[i];
  return g;
}

}  // namespace vlc::fusion
