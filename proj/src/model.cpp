#include <cmath>

#include "vlc/encoder.hpp"
#include "vlc/error.hpp"

namespace vlc::encoder {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

double inv_sqrt(int n) { return 1.0 / std::sqrt(static_cast<double>(n)); }

ParamRef ref(std::string name, Matrix& m) { return {std::move(name), m.data(), m.rows(), m.cols()}; }
ParamRef ref(std::string name, Vector& v) { return {std::move(name), v.data(), v.size(), 1}; }

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }
double gelu_grad(double x) { return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x); }

void softmax_rows(Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
}

// dx for y = xhat * gain + bias, accumulating the affine gradients.
Matrix layer_norm_backward(const Matrix& dy, const Matrix& xhat, const Vector& rstd, const Vector& gain,
                           Vector& d_gain, Vector& d_bias) {
  d_gain += (dy.cwiseProduct(xhat)).colwise().sum().transpose();
  d_bias += dy.colwise().sum().transpose();
  Matrix dxhat = dy * gain.asDiagonal();
  const double inv_d = 1.0 / static_cast<double>(dy.cols());
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double mean_d = dxhat.row(r).sum() * inv_d;
    const double mean_dx = dxhat.row(r).dot(xhat.row(r)) * inv_d;
    dx.row(r) = rstd[r] * (dxhat.row(r).array() - mean_d - xhat.row(r).array() * mean_dx).matrix();
  }
  return dx;
}

Matrix affine(const Matrix& xhat, const Vector& gain, const Vector& bias) {
  return (xhat * gain.asDiagonal()).rowwise() + bias.transpose();
}

}  // namespace

Matrix layer_norm_rows(const Matrix& x, Vector* rstd) {
  Matrix out(x.rows(), x.cols());
  if (rstd) rstd->resize(x.rows());
  const double inv_d = 1.0 / static_cast<double>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).sum() * inv_d;
    const double var = (x.row(r).array() - mean).square().sum() * inv_d;
    const double s = 1.0 / std::sqrt(var + kLayerNormEps);
    out.row(r) = (x.row(r).array() - mean) * s;
    if (rstd) (*rstd)[r] = s;
  }
  return out;
}

Model::Model(const ModelConfig& cfg, int vocab, int region_vocab, int answer_count, int edim)
    : config(cfg), vocab_size(vocab), region_labels(region_vocab), answers(answer_count), embed_dim(edim) {
  cfg.validate();
  const int d = cfg.d_model;
  token_emb = Matrix::Zero(vocab, d);
  segment_emb = Matrix::Zero(kSegments, d);
  position_emb = Matrix::Zero(cfg.max_len, d);
  region_emb = Matrix::Zero(region_vocab, d);
  geometry_w = Matrix::Zero(d, 5);
  geometry_b = Vector::Zero(d);
  knowledge_w = Matrix::Zero(d, edim);
  knowledge_b = Vector::Zero(d);
  fusion = fusion::FusionParameters::zeros(edim, d, cfg.heads);
  emb_ln_gain = Vector::Zero(d);
  emb_ln_bias = Vector::Zero(d);
  layers.resize(static_cast<std::size_t>(cfg.layers));
  for (auto& l : layers) {
    l.wq = l.wk = l.wv = l.wo = Matrix::Zero(d, d);
    l.bq = l.bk = l.bv = l.bo = Vector::Zero(d);
    l.ln1_gain = l.ln1_bias = l.ln2_gain = l.ln2_bias = Vector::Zero(d);
    l.w1 = Matrix::Zero(cfg.ffn, d);
    l.b1 = Vector::Zero(cfg.ffn);
    l.w2 = Matrix::Zero(d, cfg.ffn);
    l.b2 = Vector::Zero(d);
  }
  classifier_w = Matrix::Zero(answer_count, d);
  classifier_b = Vector::Zero(answer_count);
}

Model Model::random(const ModelConfig& cfg, int vocab, int region_vocab, int answer_count, int edim,
                    std::mt19937_64& rng) {
  Model m(cfg, vocab, region_vocab, answer_count, edim);
  const int d = cfg.d_model;
  const double emb_std = 0.5;
  m.token_emb = gaussian(vocab, d, emb_std, rng);
  m.segment_emb = gaussian(kSegments, d, emb_std, rng);
  m.position_emb = gaussian(cfg.max_len, d, emb_std, rng);
  m.region_emb = gaussian(region_vocab, d, emb_std, rng);
  m.geometry_w = gaussian(d, 5, inv_sqrt(5), rng);
  m.knowledge_w = gaussian(d, edim, 1.0, rng);
  m.fusion = fusion::FusionParameters::random(edim, d, cfg.heads, rng);
  const double unit_scale = std::sqrt(static_cast<double>(edim));
  for (int h = 0; h < cfg.heads; ++h) {
    m.fusion.query[h] *= unit_scale;
    m.fusion.key[h] = m.fusion.query[h];
    m.fusion.value[h] *= unit_scale;
  }
  m.emb_ln_gain.setOnes();
  for (auto& l : m.layers) {
    l.wq = gaussian(d, d, inv_sqrt(d), rng);
    l.wk = gaussian(d, d, inv_sqrt(d), rng);
    l.wv = gaussian(d, d, inv_sqrt(d), rng);
    l.wo = gaussian(d, d, inv_sqrt(d), rng);
    l.ln1_gain.setOnes();
    l.ln2_gain.setOnes();
    l.w1 = gaussian(cfg.ffn, d, inv_sqrt(d), rng);
    l.w2 = gaussian(d, cfg.ffn, inv_sqrt(cfg.ffn), rng);
  }
  m.classifier_w = gaussian(answer_count, d, inv_sqrt(d), rng);
  return m;
}

Model Model::zeros_like() const { return Model(config, vocab_size, region_labels, answers, embed_dim); }

std::vector<ParamRef> Model::params() {
  std::vector<ParamRef> p;
  p.push_back(ref("token_emb", token_emb));
  p.push_back(ref("segment_emb", segment_emb));
  p.push_back(ref("position_emb", position_emb));
  p.push_back(ref("region_emb", region_emb));
  p.push_back(ref("geometry_w", geometry_w));
  p.push_back(ref("geometry_b", geometry_b));
  p.push_back(ref("knowledge_w", knowledge_w));
  p.push_back(ref("knowledge_b", knowledge_b));
  for (int h = 0; h < fusion.heads; ++h) {
    const std::string s = std::to_string(h);
    p.push_back(ref("fusion.query." + s, fusion.query[h]));
    p.push_back(ref("fusion.key." + s, fusion.key[h]));
    p.push_back(ref("fusion.value." + s, fusion.value[h]));
  }
  p.push_back(ref("fusion.output", fusion.output));
  p.push_back(ref("fusion.output_bias", fusion.output_bias));
  p.push_back(ref("emb_ln_gain", emb_ln_gain));
  p.push_back(ref("emb_ln_bias", emb_ln_bias));
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& l = layers[i];
    const std::string s = "layer" + std::to_string(i) + ".";
    p.push_back(ref(s + "wq", l.wq));
    p.push_back(ref(s + "wk", l.wk));
    p.push_back(ref(s + "wv", l.wv));
    p.push_back(ref(s + "wo", l.wo));
    p.push_back(ref(s + "bq", l.bq));
    p.push_back(ref(s + "bk", l.bk));
    p.push_back(ref(s + "bv", l.bv));
    p.push_back(ref(s + "bo", l.bo));
    p.push_back(ref(s + "ln1_gain", l.ln1_gain));
    p.push_back(ref(s + "ln1_bias", l.ln1_bias));
    p.push_back(ref(s + "w1", l.w1));
    p.push_back(ref(s + "b1", l.b1));
    p.push_back(ref(s + "w2", l.w2));
    p.push_back(ref(s + "b2", l.b2));
    p.push_back(ref(s + "ln2_gain", l.ln2_gain));
    p.push_back(ref(s + "ln2_bias", l.ln2_bias));
  }
  p.push_back(ref("classifier_w", classifier_w));
  p.push_back(ref("classifier_b", classifier_b));
  return p;
}

std::vector<ParamRef> Model::params() const { return const_cast<Model*>(this)->params(); }

void Model::set_zero() {
  for (auto& p : params()) std::fill(p.data, p.data + p.size(), 0.0);
}

void Model::add_scaled(const Model& other, double scale) {
  auto mine = params();
  auto theirs = other.params();
  for (std::size_t i = 0; i < mine.size(); ++i) {
    Eigen::Map<Eigen::VectorXd> dst(mine[i].data, mine[i].size());
    Eigen::Map<const Eigen::VectorXd> src(theirs[i].data, theirs[i].size());
    dst += scale * src;
  }
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params()) n += static_cast<std::size_t>(p.size());
  return n;
}

bool Model::all_finite() const {
  for (const auto& p : params())
    if (!Eigen::Map<const Eigen::VectorXd>(p.data, p.size()).allFinite()) return false;
  return true;
}

ForwardResult forward(const Model& model, const InputSequence& seq, ForwardCache* cache) {
  const int d = model.config.d_model;
  const int L = seq.length();
  if (L > model.position_emb.rows()) throw ValidationError("sequence longer than the model's max_len");
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  ForwardResult result;

  Vector fused;
  c.has_fusion = false;
  for (const auto& s : seq.slots) {
    if (s.kind == SlotKind::fused) {
      auto out = fusion::fuse(seq.question_vec, seq.inference_vecs, model.fusion, &c.fusion);
      fused = std::move(out.fused);
      result.attention = std::move(out.attention);
      c.has_fusion = true;
      break;
    }
  }

  c.x0.resize(L, d);
  for (int i = 0; i < L; ++i) {
    const Slot& s = seq.slots[static_cast<std::size_t>(i)];
    auto row = c.x0.row(i);
    switch (s.kind) {
      case SlotKind::word:
        if (s.id < 0 || s.id >= model.vocab_size) throw ValidationError("token id outside the model vocabulary");
        row = model.token_emb.row(s.id);
        break;
      case SlotKind::fused: row = fused.transpose(); break;
      case SlotKind::knowledge:
        row = (model.knowledge_w * seq.inference_vecs[static_cast<std::size_t>(s.id)] + model.knowledge_b).transpose();
        break;
      case SlotKind::region: {
        const auto& r = seq.regions[static_cast<std::size_t>(s.id)];
        if (r.label_id < 0 || r.label_id >= model.region_labels)
          throw ValidationError("region label outside the model vocabulary");
        Eigen::Map<const Vector> g(r.geometry.data(), 5);
        row = model.region_emb.row(r.label_id) + (model.geometry_w * g + model.geometry_b).transpose();
        break;
      }
    }
    row += model.segment_emb.row(static_cast<int>(s.segment)) + model.position_emb.row(s.position);
  }

  c.emb_xhat = layer_norm_rows(c.x0, &c.emb_rstd);
  Matrix x = affine(c.emb_xhat, model.emb_ln_gain, model.emb_ln_bias);

  const int heads = model.config.heads;
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  c.layers.resize(model.layers.size());
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const LayerParams& p = model.layers[li];
    LayerCache& lc = c.layers[li];
    lc.input = x;
    lc.q = (x * p.wq.transpose()).rowwise() + p.bq.transpose();
    lc.k = (x * p.wk.transpose()).rowwise() + p.bk.transpose();
    lc.v = (x * p.wv.transpose()).rowwise() + p.bv.transpose();
    lc.concat.resize(L, d);
    lc.attn.resize(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      Matrix s = scale * (lc.q.middleCols(h * dh, dh) * lc.k.middleCols(h * dh, dh).transpose());
      softmax_rows(s);
      lc.concat.middleCols(h * dh, dh) = s * lc.v.middleCols(h * dh, dh);
      lc.attn[static_cast<std::size_t>(h)] = std::move(s);
    }
    Matrix r1 = x + ((lc.concat * p.wo.transpose()).rowwise() + p.bo.transpose());
    lc.xhat1 = layer_norm_rows(r1, &lc.rstd1);
    lc.h1 = affine(lc.xhat1, p.ln1_gain, p.ln1_bias);
    lc.z = (lc.h1 * p.w1.transpose()).rowwise() + p.b1.transpose();
    lc.g = lc.z.unaryExpr([](double v) { return gelu(v); });
    Matrix r2 = lc.h1 + ((lc.g * p.w2.transpose()).rowwise() + p.b2.transpose());
    lc.xhat2 = layer_norm_rows(r2, &lc.rstd2);
    x = affine(lc.xhat2, p.ln2_gain, p.ln2_bias);
  }
  c.final_hidden = x;
  result.logits = model.classifier_w * x.row(seq.mask_index).transpose() + model.classifier_b;
  return result;
}

void backward(const Model& model, const InputSequence& seq, const ForwardCache& c, const Vector& grad_logits,
              const std::vector<double>& grad_attention, Model& g) {
  const int d = model.config.d_model;
  const int L = seq.length();
  const int heads = model.config.heads;
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const Vector h_mask = c.final_hidden.row(seq.mask_index).transpose();
  g.classifier_w += grad_logits * h_mask.transpose();
  g.classifier_b += grad_logits;
  Matrix dx = Matrix::Zero(L, d);
  dx.row(seq.mask_index) = (model.classifier_w.transpose() * grad_logits).transpose();

  for (std::size_t li = model.layers.size(); li-- > 0;) {
    const LayerParams& p = model.layers[li];
    LayerParams& gp = g.layers[li];
    const LayerCache& lc = c.layers[li];

    Matrix d_r2 = layer_norm_backward(dx, lc.xhat2, lc.rstd2, p.ln2_gain, gp.ln2_gain, gp.ln2_bias);
    gp.w2 += d_r2.transpose() * lc.g;
    gp.b2 += d_r2.colwise().sum().transpose();
    Matrix d_z = (d_r2 * p.w2).cwiseProduct(lc.z.unaryExpr([](double v) { return gelu_grad(v); }));
    gp.w1 += d_z.transpose() * lc.h1;
    gp.b1 += d_z.colwise().sum().transpose();
    Matrix d_h1 = d_r2 + d_z * p.w1;

    Matrix d_r1 = layer_norm_backward(d_h1, lc.xhat1, lc.rstd1, p.ln1_gain, gp.ln1_gain, gp.ln1_bias);
    gp.wo += d_r1.transpose() * lc.concat;
    gp.bo += d_r1.colwise().sum().transpose();
    Matrix d_concat = d_r1 * p.wo;

    Matrix dq(L, d), dk(L, d), dv(L, d);
    for (int h = 0; h < heads; ++h) {
      const Matrix& a = lc.attn[static_cast<std::size_t>(h)];
      const auto d_out = d_concat.middleCols(h * dh, dh);
      dv.middleCols(h * dh, dh) = a.transpose() * d_out;
      Matrix d_a = d_out * lc.v.middleCols(h * dh, dh).transpose();
      Vector row_dot = (d_a.cwiseProduct(a)).rowwise().sum();
      Matrix d_s = scale * a.cwiseProduct(d_a.colwise() - row_dot);
      dq.middleCols(h * dh, dh) = d_s * lc.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh) = d_s.transpose() * lc.q.middleCols(h * dh, dh);
    }
    gp.wq += dq.transpose() * lc.input;
    gp.wk += dk.transpose() * lc.input;
    gp.wv += dv.transpose() * lc.input;
    gp.bq += dq.colwise().sum().transpose();
    gp.bk += dk.colwise().sum().transpose();
    gp.bv += dv.colwise().sum().transpose();
    dx = d_r1 + dq * p.wq + dk * p.wk + dv * p.wv;
  }

  Matrix dx0 = layer_norm_backward(dx, c.emb_xhat, c.emb_rstd, model.emb_ln_gain, g.emb_ln_gain, g.emb_ln_bias);
  Vector d_fused = Vector::Zero(d);
  for (int i = 0; i < L; ++i) {
    const Slot& s = seq.slots[static_cast<std::size_t>(i)];
    const auto row = dx0.row(i);
    g.segment_emb.row(static_cast<int>(s.segment)) += row;
    g.position_emb.row(s.position) += row;
    switch (s.kind) {
      case SlotKind::word: g.token_emb.row(s.id) += row; break;
      case SlotKind::fused: d_fused += row.transpose(); break;
      case SlotKind::knowledge:
        g.knowledge_w += row.transpose() * seq.inference_vecs[static_cast<std::size_t>(s.id)].transpose();
        g.knowledge_b += row.transpose();
        break;
      case SlotKind::region: {
        const auto& r = seq.regions[static_cast<std::size_t>(s.id)];
        Eigen::Map<const Vector> geo(r.geometry.data(), 5);
        g.region_emb.row(r.label_id) += row;
        g.geometry_w += row.transpose() * geo.transpose();
        g.geometry_b += row.transpose();
        break;
      }
    }
  }
  if (c.has_fusion) {
    auto fg = fusion::fuse_backward(model.fusion, c.fusion, d_fused, grad_attention);
    g.fusion.add_scaled(fg.params, 1.0);
  }
}

Vector answer_target(const std::vector<corpus::AnswerCount>& answers, const corpus::AnswerVocabulary& vocab) {
  Vector t = Vector::Zero(static_cast<Eigen::Index>(vocab.size()));
  double total = 0.0;
  for (const auto& a : answers) {
    t[vocab.lookup(a.answer)] += a.count;
    total += a.count;
  }
  if (total > 0.0) t /= total;
  return t;
}

double soft_cross_entropy(const Vector& logits, const Vector& target, Vector* grad) {
  const double mx = logits.maxCoeff();
  const Vector shifted = logits.array() - mx;
  const double lse = std::log(shifted.array().exp().sum());
  const Vector log_p = shifted.array() - lse;
  if (grad) *grad = log_p.array().exp().matrix() * target.sum() - target;
  return -target.dot(log_p);
}

LossParts example_loss(const Model& model, const Example& ex, Model* grads) {
  ForwardCache cache;
  const ForwardResult out = forward(model, ex.sequence, grads ? &cache : nullptr);
  LossParts loss;
  Vector d_logits;
  loss.answer = soft_cross_entropy(out.logits, ex.target, grads ? &d_logits : nullptr);
  std::vector<double> d_attention;
  const double w = model.config.attention_loss_weight;
  if (out.attention && ex.attention_label && w > 0.0) {
    loss.attention = fusion::attention_loss(*out.attention, *ex.attention_label);
    if (grads) {
      d_attention = fusion::attention_loss_gradient(*out.attention, *ex.attention_label);
      for (double& v : d_attention) v *= w;
    }
  }
  loss.total = loss.answer + w * loss.attention;
  if (grads) backward(model, ex.sequence, cache, d_logits, d_attention, *grads);
  return loss;
}

}  // namespace vlc::encoder
