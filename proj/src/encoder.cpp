#include "seqtag/encoder.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "seqtag/error.hpp"
#include "seqtag/rng.hpp"

namespace seqtag {

namespace {

constexpr double kLayerNormEps = 1e-5;

Matrix normal_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal() * scale;
  return m;
}

Matrix dropout_mask(Rng& rng, Eigen::Index rows, Eigen::Index cols, double rate) {
  Matrix m(rows, cols);
  const double keep = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform() < rate ? 0.0 : keep;
  return m;
}

constexpr double kInvSqrt2 = 0.70710678118654752440;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  const double pdf = std::exp(-0.5 * x * x) * (std::numbers::inv_sqrtpi * kInvSqrt2);
  return cdf + x * pdf;
}

// Row-wise layer norm; fills xhat and inv_std for the backward pass.
Matrix layer_norm(const Matrix& x, const Vector& gain, const Vector& bias, Matrix& xhat,
                  Vector& inv_std) {
  const auto n = static_cast<double>(x.cols());
  xhat.resize(x.rows(), x.cols());
  inv_std.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).sum() / n;
    const double var = (x.row(r).array() - mean).square().sum() / n;
    inv_std(r) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(r) = (x.row(r).array() - mean) * inv_std(r);
  }
  Matrix y = xhat.array().rowwise() * gain.transpose().array();
  y.rowwise() += bias.transpose();
  return y;
}

Matrix layer_norm_backward(const Matrix& dy, const Matrix& xhat, const Vector& inv_std,
                           const Vector& gain, Vector& dgain, Vector& dbias) {
  dgain += (dy.array() * xhat.array()).colwise().sum().transpose().matrix();
  dbias += dy.colwise().sum().transpose();
  const Matrix dxhat = dy.array().rowwise() * gain.transpose().array();
  const auto n = static_cast<double>(dy.cols());
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double mean_d = dxhat.row(r).sum() / n;
    const double mean_dx = dxhat.row(r).dot(xhat.row(r)) / n;
    dx.row(r) = inv_std(r) * (dxhat.row(r).array() - mean_d - xhat.row(r).array() * mean_dx);
  }
  return dx;
}

Matrix affine(const Matrix& x, const Matrix& w, const Vector& b) {
  Matrix y = x * w;
  y.rowwise() += b.transpose();
  return y;
}

void add_tensors(TensorList& out, const std::string& prefix, EncoderLayer& l) {
  out.push_back(tensor_ref(prefix + "query", l.query));
  out.push_back(tensor_ref(prefix + "query_bias", l.query_bias));
  out.push_back(tensor_ref(prefix + "key", l.key));
  out.push_back(tensor_ref(prefix + "key_bias", l.key_bias));
  out.push_back(tensor_ref(prefix + "value", l.value));
  out.push_back(tensor_ref(prefix + "value_bias", l.value_bias));
  out.push_back(tensor_ref(prefix + "output", l.output));
  out.push_back(tensor_ref(prefix + "output_bias", l.output_bias));
  out.push_back(tensor_ref(prefix + "ff_in", l.ff_in));
  out.push_back(tensor_ref(prefix + "ff_in_bias", l.ff_in_bias));
  out.push_back(tensor_ref(prefix + "ff_out", l.ff_out));
  out.push_back(tensor_ref(prefix + "ff_out_bias", l.ff_out_bias));
  out.push_back(tensor_ref(prefix + "attn_norm_gain", l.attn_norm_gain));
  out.push_back(tensor_ref(prefix + "attn_norm_bias", l.attn_norm_bias));
  out.push_back(tensor_ref(prefix + "ff_norm_gain", l.ff_norm_gain));
  out.push_back(tensor_ref(prefix + "ff_norm_bias", l.ff_norm_bias));
}

}  // namespace

void EncoderConfig::validate() const {
  const auto bad = [](const std::string& msg) { return usage_error("BadConfig", msg); };
  if (vocab_size == 0) throw bad("vocab_size must be positive");
  if (d_model == 0 || n_heads == 0 || n_layers == 0 || d_ff == 0)
    throw bad("d_model, n_heads, n_layers and d_ff must be positive");
  if (d_model % n_heads != 0)
    throw bad("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
              std::to_string(n_heads));
  if (max_len < 3) throw bad("max_len must be at least 3");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw bad("dropout_rate must lie in [0, 1)");
}

EncoderParams EncoderParams::zeros(const EncoderConfig& c) {
  const auto d = static_cast<Eigen::Index>(c.d_model);
  const auto ff = static_cast<Eigen::Index>(c.d_ff);
  EncoderParams p;
  p.token_embeddings = Matrix::Zero(static_cast<Eigen::Index>(c.vocab_size), d);
  p.position_embeddings = Matrix::Zero(static_cast<Eigen::Index>(c.max_len), d);
  p.layers.resize(c.n_layers);
  for (auto& l : p.layers) {
    l.query = l.key = l.value = l.output = Matrix::Zero(d, d);
    l.query_bias = l.key_bias = l.value_bias = l.output_bias = Vector::Zero(d);
    l.ff_in = Matrix::Zero(d, ff);
    l.ff_in_bias = Vector::Zero(ff);
    l.ff_out = Matrix::Zero(ff, d);
    l.ff_out_bias = Vector::Zero(d);
    l.attn_norm_gain = l.attn_norm_bias = Vector::Zero(d);
    l.ff_norm_gain = l.ff_norm_bias = Vector::Zero(d);
  }
  return p;
}

TensorList EncoderParams::tensors() {
  TensorList out;
  out.push_back(tensor_ref("encoder.tok_emb", token_embeddings));
  out.push_back(tensor_ref("encoder.pos_emb", position_embeddings));
  for (std::size_t i = 0; i < layers.size(); ++i)
    add_tensors(out, "encoder.L" + std::to_string(i) + ".", layers[i]);
  return out;
}

EncoderParams init_params(const EncoderConfig& config) {
  config.validate();
  Rng rng(config.seed);
  const std::size_t d = config.d_model;
  const double emb_scale = 1.0 / std::sqrt(static_cast<double>(d));
  const double ff_scale = 1.0 / std::sqrt(static_cast<double>(config.d_ff));

  EncoderParams p = EncoderParams::zeros(config);
  p.token_embeddings = normal_matrix(rng, config.vocab_size, d, emb_scale);
  p.position_embeddings = normal_matrix(rng, config.max_len, d, emb_scale);
  for (auto& l : p.layers) {
    l.query = normal_matrix(rng, d, d, emb_scale);
    l.key = normal_matrix(rng, d, d, emb_scale);
    l.value = normal_matrix(rng, d, d, emb_scale);
    l.output = normal_matrix(rng, d, d, emb_scale);
    l.ff_in = normal_matrix(rng, d, config.d_ff, emb_scale);
    l.ff_out = normal_matrix(rng, config.d_ff, d, ff_scale);
    l.attn_norm_gain.setOnes();
    l.ff_norm_gain.setOnes();
  }
  return p;
}

Activation forward(std::span<const SubwordId> ids, std::span<const std::uint8_t> attention_mask,
                   const EncoderParams& params, const EncoderConfig& config, bool train_mode,
                   std::uint64_t dropout_seed) {
  if (ids.size() > config.max_len)
    throw runtime_error("TooLong", "sequence of " + std::to_string(ids.size()) +
                                       " exceeds max_len " + std::to_string(config.max_len));
  if (attention_mask.size() != ids.size())
    throw runtime_error("MaskLengthMismatch", "mask has " + std::to_string(attention_mask.size()) +
                                                  " entries for " + std::to_string(ids.size()) + " ids");
  const auto T = static_cast<Eigen::Index>(ids.size());
  const auto d = static_cast<Eigen::Index>(config.d_model);
  const auto dk = static_cast<Eigen::Index>(config.head_dim());
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  const bool dropout = train_mode && config.dropout_rate > 0.0;
  Rng rng(dropout_seed);

  Activation act;
  act.ids.assign(ids.begin(), ids.end());
  act.mask.assign(attention_mask.begin(), attention_mask.end());
  act.train_mode = train_mode;

  Matrix x(T, d);
  for (Eigen::Index t = 0; t < T; ++t) {
    const auto id = ids[static_cast<std::size_t>(t)];
    if (id < 0 || id >= params.token_embeddings.rows())
      throw runtime_error("BadTokenId", "subword id " + std::to_string(id) + " outside vocabulary");
    x.row(t) = params.token_embeddings.row(id) + params.position_embeddings.row(t);
  }
  if (dropout) {
    act.embedding_dropout = dropout_mask(rng, T, d, config.dropout_rate);
    x.array() *= act.embedding_dropout.array();
  }

  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  act.layers.resize(params.layers.size());
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    const auto& L = params.layers[li];
    auto& c = act.layers[li];
    c.input = x;
    c.query = affine(x, L.query, L.query_bias);
    c.key = affine(x, L.key, L.key_bias);
    c.value = affine(x, L.value, L.value_bias);
    c.context.resize(T, d);
    c.attention.resize(config.n_heads);
    for (std::size_t h = 0; h < config.n_heads; ++h) {
      const auto col = static_cast<Eigen::Index>(h) * dk;
      Matrix s = c.query.middleCols(col, dk) * c.key.middleCols(col, dk).transpose() * scale;
      for (Eigen::Index j = 0; j < T; ++j)
        if (!attention_mask[static_cast<std::size_t>(j)]) s.col(j).setConstant(kNegInf);
      for (Eigen::Index r = 0; r < T; ++r) {
        const double m = s.row(r).maxCoeff();
        if (!std::isfinite(m)) {  // no live key
          s.row(r).setZero();
          continue;
        }
        s.row(r) = (s.row(r).array() - m).exp();
        // Eigen's vectorized exp maps -inf to a denormal, not 0.
        for (Eigen::Index j = 0; j < T; ++j)
          if (!attention_mask[static_cast<std::size_t>(j)]) s(r, j) = 0.0;
        s.row(r) /= s.row(r).sum();
      }
      c.context.middleCols(col, dk) = s * c.value.middleCols(col, dk);
      c.attention[h] = std::move(s);
    }
    Matrix attn = affine(c.context, L.output, L.output_bias);
    if (dropout) {
      c.attn_dropout = dropout_mask(rng, T, d, config.dropout_rate);
      attn.array() *= c.attn_dropout.array();
    }
    c.attn_out = layer_norm(x + attn, L.attn_norm_gain, L.attn_norm_bias, c.attn_normed,
                            c.attn_inv_std);

    c.ff_pre = affine(c.attn_out, L.ff_in, L.ff_in_bias);
    c.ff_act = c.ff_pre.unaryExpr(&gelu);
    Matrix ff = affine(c.ff_act, L.ff_out, L.ff_out_bias);
    if (dropout) {
      c.ff_dropout = dropout_mask(rng, T, d, config.dropout_rate);
      ff.array() *= c.ff_dropout.array();
    }
    x = layer_norm(c.attn_out + ff, L.ff_norm_gain, L.ff_norm_bias, c.ff_normed, c.ff_inv_std);
  }
  act.output = std::move(x);
  return act;
}

Matrix backward(const Activation& act, const Matrix& output_gradient, const EncoderParams& params,
                const EncoderConfig& config, EncoderParams& grads) {
  const auto T = static_cast<Eigen::Index>(act.length());
  const auto d = static_cast<Eigen::Index>(config.d_model);
  const auto dk = static_cast<Eigen::Index>(config.head_dim());
  if (output_gradient.rows() != T || output_gradient.cols() != d)
    throw runtime_error("ShapeMismatch", "output gradient is " +
                                             std::to_string(output_gradient.rows()) + "x" +
                                             std::to_string(output_gradient.cols()) + ", expected " +
                                             std::to_string(T) + "x" + std::to_string(d));
  if (act.layers.size() != params.layers.size() || grads.layers.size() != params.layers.size())
    throw runtime_error("ShapeMismatch", "layer count differs between activation and parameters");
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  Matrix dx = output_gradient;
  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const auto& L = params.layers[li];
    const auto& c = act.layers[li];
    auto& G = grads.layers[li];

    // Feed-forward block.
    Matrix dr2 = layer_norm_backward(dx, c.ff_normed, c.ff_inv_std, L.ff_norm_gain,
                                     G.ff_norm_gain, G.ff_norm_bias);
    Matrix dff = dr2;
    if (c.ff_dropout.size() > 0) dff.array() *= c.ff_dropout.array();
    G.ff_out.noalias() += c.ff_act.transpose() * dff;
    G.ff_out_bias += dff.colwise().sum().transpose();
    Matrix dpre = (dff * L.ff_out.transpose()).array() * c.ff_pre.unaryExpr(&gelu_grad).array();
    G.ff_in.noalias() += c.attn_out.transpose() * dpre;
    G.ff_in_bias += dpre.colwise().sum().transpose();
    Matrix dy1 = dr2;
    dy1.noalias() += dpre * L.ff_in.transpose();

    // Attention block.
    Matrix dr1 = layer_norm_backward(dy1, c.attn_normed, c.attn_inv_std, L.attn_norm_gain,
                                     G.attn_norm_gain, G.attn_norm_bias);
    Matrix dattn = dr1;
    if (c.attn_dropout.size() > 0) dattn.array() *= c.attn_dropout.array();
    G.output.noalias() += c.context.transpose() * dattn;
    G.output_bias += dattn.colwise().sum().transpose();
    const Matrix dcontext = dattn * L.output.transpose();

    Matrix dq(T, d), dkey(T, d), dv(T, d);
    for (std::size_t h = 0; h < config.n_heads; ++h) {
      const auto col = static_cast<Eigen::Index>(h) * dk;
      const Matrix& a = c.attention[h];
      const auto dctx = dcontext.middleCols(col, dk);
      dv.middleCols(col, dk) = a.transpose() * dctx;
      const Matrix da = dctx * c.value.middleCols(col, dk).transpose();
      Matrix ds = a.array() * (da.array().colwise() - (da.array() * a.array()).rowwise().sum());
      ds *= scale;
      dq.middleCols(col, dk) = ds * c.key.middleCols(col, dk);
      dkey.middleCols(col, dk) = ds.transpose() * c.query.middleCols(col, dk);
    }
    G.query.noalias() += c.input.transpose() * dq;
    G.key.noalias() += c.input.transpose() * dkey;
    G.value.noalias() += c.input.transpose() * dv;
    G.query_bias += dq.colwise().sum().transpose();
    G.key_bias += dkey.colwise().sum().transpose();
    G.value_bias += dv.colwise().sum().transpose();

    dx = dr1;
    dx.noalias() += dq * L.query.transpose();
    dx.noalias() += dkey * L.key.transpose();
    dx.noalias() += dv * L.value.transpose();
  }

  if (act.embedding_dropout.size() > 0) dx.array() *= act.embedding_dropout.array();
  for (Eigen::Index t = 0; t < T; ++t) {
    grads.token_embeddings.row(act.ids[static_cast<std::size_t>(t)]) += dx.row(t);
    grads.position_embeddings.row(t) += dx.row(t);
  }
  return dx;
}

EncoderGradients backward(const Activation& activation, const Matrix& output_gradient,
                          const EncoderParams& params, const EncoderConfig& config) {
  EncoderGradients g{EncoderParams::zeros(config), {}};
  g.input = backward(activation, output_gradient, params, config, g.params);
  return g;
}

}  // namespace seqtag
