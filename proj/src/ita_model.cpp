#include "memesieve/ita_model.hpp"

#include <json.hpp>

#include <cmath>
#include <numbers>
#include <sstream>

#include "memesieve/common.hpp"

namespace memesieve {

using json = nlohmann::json;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

namespace {

constexpr double kNormEps = 1e-5;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

void softmax_rows(MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp();
    m.row(r) /= m.row(r).sum();
  }
}

// Row-wise layer norm; keeps normalised values and 1/std for backward.
MatrixXd layer_norm(const MatrixXd& x, const MatrixXd& gain, const MatrixXd& bias, MatrixXd& hat, VectorXd& inv_std) {
  const auto d = static_cast<double>(x.cols());
  hat.resize(x.rows(), x.cols());
  inv_std.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).sum() / d;
    RowVectorXd centered = x.row(r).array() - mean;
    const double var = centered.squaredNorm() / d;
    inv_std[r] = 1.0 / std::sqrt(var + kNormEps);
    hat.row(r) = centered * inv_std[r];
  }
  MatrixXd out = hat.array().rowwise() * gain.row(0).array();
  out.rowwise() += bias.row(0);
  return out;
}

MatrixXd layer_norm_backward(const MatrixXd& grad_out, const MatrixXd& hat, const VectorXd& inv_std,
                             const MatrixXd& gain, MatrixXd& grad_gain, MatrixXd& grad_bias) {
  grad_gain.row(0) += (grad_out.array() * hat.array()).colwise().sum().matrix();
  grad_bias.row(0) += grad_out.colwise().sum();
  MatrixXd dhat = grad_out.array().rowwise() * gain.row(0).array();
  const auto d = static_cast<double>(hat.cols());
  MatrixXd dx(hat.rows(), hat.cols());
  for (Eigen::Index r = 0; r < hat.rows(); ++r) {
    const double mean_dhat = dhat.row(r).sum() / d;
    const double mean_dhat_hat = dhat.row(r).dot(hat.row(r)) / d;
    dx.row(r) = inv_std[r] * (dhat.row(r).array() - mean_dhat - hat.row(r).array() * mean_dhat_hat);
  }
  return dx;
}

MatrixXd dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution keep(1.0 - p);
  MatrixXd m(rows, cols);
  const double scale = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = keep(rng) ? scale : 0.0;
  return m;
}

void check_finite(const MatrixXd& m, const std::string& where) {
  if (!m.allFinite()) throw Error(ErrorKind::divergence, "non-finite values in ITA forward pass at " + where);
}

MatrixXd xavier(Eigen::Index fan_in, Eigen::Index fan_out, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in + fan_out)));
  MatrixXd m(fan_in, fan_out);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

}  // namespace

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------

ItaConfig ItaConfig::for_dims(int embed_dim, int image_dim, int num_layers, int num_heads) {
  ItaConfig c;
  c.num_layers = num_layers;
  c.embed_dim = embed_dim;
  c.image_dim = image_dim;
  c.key_dim = embed_dim;
  c.num_heads = num_heads;
  c.ffn_dim = 4 * embed_dim;
  c.decoder_hidden = embed_dim;
  c.output_dim = embed_dim;
  return c;
}

ItaConfig ItaConfig::for_encoder(const EncoderShape& shape, int num_layers, int num_heads) {
  return for_dims(shape.embed_dim, shape.image_dim, num_layers, num_heads);
}

void ItaConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::invalid_input, "ItaConfig: " + m); };
  if (num_layers < 1) fail("num_layers must be >= 1");
  if (embed_dim < 1 || image_dim < 1 || key_dim < 1 || output_dim < 1 || decoder_hidden < 1 || ffn_dim < 1) {
    fail("all dimensions must be >= 1");
  }
  if (num_heads < 1 || embed_dim % num_heads != 0) fail("embed_dim must be divisible by num_heads");
  if (key_dim % num_heads != 0) fail("key_dim must be divisible by num_heads");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0,1)");
}

std::string ItaConfig::to_json() const {
  json j{{"num_layers", num_layers}, {"embed_dim", embed_dim},   {"image_dim", image_dim},
         {"key_dim", key_dim},       {"num_heads", num_heads},   {"ffn_dim", ffn_dim},
         {"decoder_hidden", decoder_hidden}, {"output_dim", output_dim}, {"dropout", dropout}};
  return j.dump();
}

ItaConfig ItaConfig::from_json(std::string_view text) {
  try {
    auto j = json::parse(text);
    ItaConfig c;
    c.num_layers = j.at("num_layers").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.image_dim = j.at("image_dim").get<int>();
    c.key_dim = j.at("key_dim").get<int>();
    c.num_heads = j.at("num_heads").get<int>();
    c.ffn_dim = j.at("ffn_dim").get<int>();
    c.decoder_hidden = j.at("decoder_hidden").get<int>();
    c.output_dim = j.at("output_dim").get<int>();
    c.dropout = j.at("dropout").get<double>();
    return c;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::invalid_input, std::string("malformed ItaConfig JSON: ") + e.what());
  }
}

ItaParameters ItaParameters::zeros_like() const {
  ItaParameters z = *this;
  z.for_each([](const std::string&, ParamGroup, MatrixXd& m) { m.setZero(); });
  return z;
}

std::uint64_t ItaParameters::checksum() const {
  Fnv1a h;
  for_each([&](const std::string& name, ParamGroup, const MatrixXd& m) {
    h.update(name);
    h.update(std::span(reinterpret_cast<const std::uint8_t*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double)));
  });
  return h.value();
}

// ---------------------------------------------------------------------------

ItaModel::ItaModel(const ItaConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(derive_seed(seed, "ita-init"));
  const int d = config_.embed_dim;
  params_.image_projection = xavier(config_.image_dim, d, rng);
  params_.layers.resize(static_cast<std::size_t>(config_.num_layers));
  for (auto& l : params_.layers) {
    l.query = xavier(d, config_.key_dim, rng);
    l.key = xavier(d, config_.key_dim, rng);
    l.value = xavier(d, config_.key_dim, rng);
    l.out = xavier(config_.key_dim, d, rng);
    l.out_bias = MatrixXd::Zero(1, d);
    l.norm1_gain = MatrixXd::Ones(1, d);
    l.norm1_bias = MatrixXd::Zero(1, d);
    l.ffn_in = xavier(d, config_.ffn_dim, rng);
    l.ffn_in_bias = MatrixXd::Zero(1, config_.ffn_dim);
    l.ffn_out = xavier(config_.ffn_dim, d, rng);
    l.ffn_out_bias = MatrixXd::Zero(1, d);
    l.norm2_gain = MatrixXd::Ones(1, d);
    l.norm2_bias = MatrixXd::Zero(1, d);
  }
  params_.decoder_in = xavier(2 * d, config_.decoder_hidden, rng);
  params_.decoder_in_bias = MatrixXd::Zero(1, config_.decoder_hidden);
  params_.decoder_out = xavier(config_.decoder_hidden, config_.output_dim, rng);
  params_.decoder_out_bias = MatrixXd::Zero(1, config_.output_dim);
}

ItaModel::ItaModel(const ItaConfig& config, ItaParameters parameters)
    : config_(config), params_(std::move(parameters)) {
  config_.validate();
  const int d = config_.embed_dim;
  auto expect = [](const MatrixXd& m, Eigen::Index r, Eigen::Index c, const std::string& name) {
    if (m.rows() != r || m.cols() != c) {
      throw Error(ErrorKind::dimension_mismatch, "parameter " + name + " has shape " + std::to_string(m.rows()) + "x" +
                                                     std::to_string(m.cols()) + ", expected " + std::to_string(r) +
                                                     "x" + std::to_string(c));
    }
  };
  if (params_.layers.size() != static_cast<std::size_t>(config_.num_layers)) {
    throw Error(ErrorKind::dimension_mismatch, "parameter layer count does not match num_layers");
  }
  expect(params_.image_projection, config_.image_dim, d, "image_projection");
  for (const auto& l : params_.layers) {
    expect(l.query, d, config_.key_dim, "query");
    expect(l.key, d, config_.key_dim, "key");
    expect(l.value, d, config_.key_dim, "value");
    expect(l.out, config_.key_dim, d, "out");
    expect(l.out_bias, 1, d, "out_bias");
    expect(l.norm1_gain, 1, d, "norm1_gain");
    expect(l.norm1_bias, 1, d, "norm1_bias");
    expect(l.ffn_in, d, config_.ffn_dim, "ffn_in");
    expect(l.ffn_in_bias, 1, config_.ffn_dim, "ffn_in_bias");
    expect(l.ffn_out, config_.ffn_dim, d, "ffn_out");
    expect(l.ffn_out_bias, 1, d, "ffn_out_bias");
    expect(l.norm2_gain, 1, d, "norm2_gain");
    expect(l.norm2_bias, 1, d, "norm2_bias");
  }
  expect(params_.decoder_in, 2 * d, config_.decoder_hidden, "decoder_in");
  expect(params_.decoder_in_bias, 1, config_.decoder_hidden, "decoder_in_bias");
  expect(params_.decoder_out, config_.decoder_hidden, config_.output_dim, "decoder_out");
  expect(params_.decoder_out_bias, 1, config_.output_dim, "decoder_out_bias");
  if (params_.has_head) {
    expect(params_.head_weight, config_.output_dim, 1, "head_weight");
    expect(params_.head_bias, 1, 1, "head_bias");
  }
}

FusedSequence ItaModel::project_and_fuse(const EmbeddingBundle& bundle) const {
  const int d = config_.embed_dim;
  if (bundle.image_seq.cols() != config_.image_dim || bundle.text_seq.cols() != d ||
      bundle.image_pooled.size() != d || bundle.text_pooled.size() != d) {
    throw Error(ErrorKind::dimension_mismatch,
                "embedding bundle does not match ItaConfig (d=" + std::to_string(d) + ", d_i=" +
                    std::to_string(config_.image_dim) + "); got image_seq " + std::to_string(bundle.image_seq.rows()) +
                    "x" + std::to_string(bundle.image_seq.cols()) + ", text_seq " +
                    std::to_string(bundle.text_seq.rows()) + "x" + std::to_string(bundle.text_seq.cols()));
  }
  if (bundle.image_seq.rows() < 1 || bundle.text_seq.rows() < 1) {
    throw Error(ErrorKind::dimension_mismatch, "embedding bundle needs at least one image and one text position");
  }
  FusedSequence out;
  out.image_positions = static_cast<int>(bundle.image_seq.rows());
  out.text_positions = static_cast<int>(bundle.text_seq.rows());
  out.rows.resize(out.image_positions + out.text_positions, d);
  out.rows.topRows(out.image_positions) = bundle.image_seq * params_.image_projection;
  out.rows.bottomRows(out.text_positions) = bundle.text_seq;
  return out;
}

ForwardTrace ItaModel::forward_trace(const EmbeddingBundle& bundle, std::mt19937_64* rng) const {
  auto fused = project_and_fuse(bundle);
  ForwardTrace t;
  t.image_seq = bundle.image_seq;
  t.image_positions = fused.image_positions;
  t.text_positions = fused.text_positions;
  const bool drop = rng != nullptr && config_.dropout > 0.0;
  const int heads = config_.num_heads;
  const int hd = config_.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  MatrixXd x = std::move(fused.rows);
  t.layers.resize(params_.layers.size());
  for (std::size_t li = 0; li < params_.layers.size(); ++li) {
    const auto& p = params_.layers[li];
    auto& lt = t.layers[li];
    lt.input = x;
    lt.q = x * p.query;
    lt.k = x * p.key;
    lt.v = x * p.value;
    lt.context.resize(x.rows(), config_.key_dim);
    lt.probs.resize(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      MatrixXd scores = lt.q.middleCols(h * hd, hd) * lt.k.middleCols(h * hd, hd).transpose() * scale;
      softmax_rows(scores);
      lt.context.middleCols(h * hd, hd) = scores * lt.v.middleCols(h * hd, hd);
      lt.probs[static_cast<std::size_t>(h)] = std::move(scores);
    }
    MatrixXd attn = lt.context * p.out;
    attn.rowwise() += p.out_bias.row(0);
    if (drop) {
      lt.attn_drop = dropout_mask(attn.rows(), attn.cols(), config_.dropout, *rng);
      attn = attn.cwiseProduct(lt.attn_drop);
    }
    lt.hidden = layer_norm(x + attn, p.norm1_gain, p.norm1_bias, lt.norm1_hat, lt.norm1_inv_std);
    lt.ffn_pre = lt.hidden * p.ffn_in;
    lt.ffn_pre.rowwise() += p.ffn_in_bias.row(0);
    lt.ffn_act = lt.ffn_pre.unaryExpr([](double v) { return gelu(v); });
    MatrixXd ffn = lt.ffn_act * p.ffn_out;
    ffn.rowwise() += p.ffn_out_bias.row(0);
    if (drop) {
      lt.ffn_drop = dropout_mask(ffn.rows(), ffn.cols(), config_.dropout, *rng);
      ffn = ffn.cwiseProduct(lt.ffn_drop);
    }
    x = layer_norm(lt.hidden + ffn, p.norm2_gain, p.norm2_bias, lt.norm2_hat, lt.norm2_inv_std);
    check_finite(x, "layer " + std::to_string(li));
  }
  t.output = x;

  // Image side pools at the class position, text side at end-of-sequence.
  const int d = config_.embed_dim;
  const Eigen::Index eos = x.rows() - 1;
  t.decoder_input.resize(2 * d);
  t.decoder_input.head(d) = x.row(0) + bundle.image_pooled.transpose();
  t.decoder_input.tail(d) = x.row(eos) + bundle.text_pooled.transpose();
  t.decoder_pre = t.decoder_input * params_.decoder_in + params_.decoder_in_bias.row(0);
  t.decoder_act = t.decoder_pre.unaryExpr([](double v) { return gelu(v); });
  RowVectorXd out = t.decoder_act * params_.decoder_out + params_.decoder_out_bias.row(0);
  check_finite(out, "decoder");
  t.joint = out.transpose();
  return t;
}

ForwardResult ItaModel::forward(const EmbeddingBundle& bundle, bool capture) const {
  auto trace = forward_trace(bundle, nullptr);
  ForwardResult r;
  r.joint = std::move(trace.joint);
  if (capture) {
    AttentionStack stack;
    stack.image_positions = trace.image_positions;
    stack.text_positions = trace.text_positions;
    for (const auto& lt : trace.layers) {
      MatrixXd avg = lt.probs.front();
      for (std::size_t h = 1; h < lt.probs.size(); ++h) avg += lt.probs[h];
      avg /= static_cast<double>(lt.probs.size());
      stack.layers.push_back(std::move(avg));
    }
    r.attention = std::move(stack);
  }
  return r;
}

void ItaModel::backward(const ForwardTrace& t, const VectorXd& grad_joint, ItaParameters& g) const {
  const int d = config_.embed_dim;
  const int heads = config_.num_heads;
  const int hd = config_.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  RowVectorXd dh = grad_joint.transpose();
  g.decoder_out.noalias() += t.decoder_act.transpose() * dh;
  g.decoder_out_bias.row(0) += dh;
  RowVectorXd dact = dh * params_.decoder_out.transpose();
  RowVectorXd dpre(dact.size());
  for (Eigen::Index i = 0; i < dact.size(); ++i) dpre[i] = dact[i] * gelu_grad(t.decoder_pre[i]);
  g.decoder_in.noalias() += t.decoder_input.transpose() * dpre;
  g.decoder_in_bias.row(0) += dpre;
  RowVectorXd dz = dpre * params_.decoder_in.transpose();

  MatrixXd dx = MatrixXd::Zero(t.output.rows(), d);
  dx.row(0) += dz.head(d);
  dx.row(dx.rows() - 1) += dz.tail(d);

  for (std::size_t li = params_.layers.size(); li-- > 0;) {
    const auto& p = params_.layers[li];
    const auto& lt = t.layers[li];
    auto& gl = g.layers[li];

    MatrixXd dres2 = layer_norm_backward(dx, lt.norm2_hat, lt.norm2_inv_std, p.norm2_gain, gl.norm2_gain, gl.norm2_bias);
    MatrixXd dhidden = dres2;
    MatrixXd dffn = lt.ffn_drop.size() ? MatrixXd(dres2.cwiseProduct(lt.ffn_drop)) : dres2;
    gl.ffn_out.noalias() += lt.ffn_act.transpose() * dffn;
    gl.ffn_out_bias.row(0) += dffn.colwise().sum();
    MatrixXd dact_ffn = dffn * p.ffn_out.transpose();
    MatrixXd dpre_ffn = dact_ffn.cwiseProduct(lt.ffn_pre.unaryExpr([](double v) { return gelu_grad(v); }));
    gl.ffn_in.noalias() += lt.hidden.transpose() * dpre_ffn;
    gl.ffn_in_bias.row(0) += dpre_ffn.colwise().sum();
    dhidden.noalias() += dpre_ffn * p.ffn_in.transpose();

    MatrixXd dres1 = layer_norm_backward(dhidden, lt.norm1_hat, lt.norm1_inv_std, p.norm1_gain, gl.norm1_gain, gl.norm1_bias);
    MatrixXd dinput = dres1;
    MatrixXd dattn = lt.attn_drop.size() ? MatrixXd(dres1.cwiseProduct(lt.attn_drop)) : dres1;
    gl.out.noalias() += lt.context.transpose() * dattn;
    gl.out_bias.row(0) += dattn.colwise().sum();
    MatrixXd dcontext = dattn * p.out.transpose();

    MatrixXd dq(lt.q.rows(), lt.q.cols());
    MatrixXd dk(lt.k.rows(), lt.k.cols());
    MatrixXd dv(lt.v.rows(), lt.v.cols());
    for (int h = 0; h < heads; ++h) {
      const MatrixXd& prob = lt.probs[static_cast<std::size_t>(h)];
      auto dctx_h = dcontext.middleCols(h * hd, hd);
      MatrixXd dprob = dctx_h * lt.v.middleCols(h * hd, hd).transpose();
      dv.middleCols(h * hd, hd) = prob.transpose() * dctx_h;
      VectorXd row_dot = (dprob.cwiseProduct(prob)).rowwise().sum();
      MatrixXd dscores = prob.cwiseProduct(dprob.colwise() - row_dot) * scale;
      dq.middleCols(h * hd, hd) = dscores * lt.k.middleCols(h * hd, hd);
      dk.middleCols(h * hd, hd) = dscores.transpose() * lt.q.middleCols(h * hd, hd);
    }
    gl.query.noalias() += lt.input.transpose() * dq;
    gl.key.noalias() += lt.input.transpose() * dk;
    gl.value.noalias() += lt.input.transpose() * dv;
    dinput.noalias() += dq * p.query.transpose();
    dinput.noalias() += dk * p.key.transpose();
    dinput.noalias() += dv * p.value.transpose();
    dx = std::move(dinput);
  }
  // Text rows of X come straight from the frozen encoder; only the image
  // projection receives gradient.
  g.image_projection.noalias() += t.image_seq.transpose() * dx.topRows(t.image_positions);
}

void ItaModel::attach_head() {
  params_.has_head = true;
  params_.head_weight = MatrixXd::Zero(config_.output_dim, 1);
  params_.head_bias = MatrixXd::Zero(1, 1);
}

void ItaModel::remove_head() {
  params_.has_head = false;
  params_.head_weight.resize(0, 0);
  params_.head_bias.resize(0, 0);
}

double ItaModel::head_logit(const VectorXd& joint) const {
  if (!params_.has_head) throw Error(ErrorKind::invalid_input, "classification head is not attached");
  return params_.head_weight.col(0).dot(joint) + params_.head_bias(0, 0);
}

VectorXd ItaModel::backward_head(const VectorXd& joint, double grad_logit, ItaParameters& g) const {
  g.head_weight.col(0) += grad_logit * joint;
  g.head_bias(0, 0) += grad_logit;
  return grad_logit * params_.head_weight.col(0);
}

double ItaModel::classify(const EmbeddingBundle& bundle) const {
  if (!params_.has_head) throw Error(ErrorKind::invalid_input, "classification head is not attached");
  return sigmoid(head_logit(forward(bundle, false).joint));
}

void ItaModel::set_trainable(ParamGroup group, bool trainable) {
  (group == ParamGroup::stack ? stack_trainable_ : head_trainable_) = trainable;
}

bool ItaModel::trainable(ParamGroup group) const {
  return group == ParamGroup::stack ? stack_trainable_ : head_trainable_;
}

std::size_t ItaModel::parameter_count() const {
  std::size_t n = 0;
  params_.for_each([&](const std::string&, ParamGroup group, const MatrixXd& m) {
    if (trainable(group)) n += static_cast<std::size_t>(m.size());
  });
  return n;
}

std::size_t ItaModel::total_parameter_count() const {
  std::size_t n = 0;
  params_.for_each([&](const std::string&, ParamGroup, const MatrixXd& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

}  // namespace memesieve
