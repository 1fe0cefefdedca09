#pragma once

// A small post-norm bidirectional self-attention encoder with an exact,
// hand-written backward pass.
//
// Per layer:
//   A  = MultiHeadAttention(X)            keys with mask=0 get -inf logits
//   Y1 = LayerNorm(X + Dropout(A))
//   Y2 = LayerNorm(Y1 + Dropout(GELU(Y1 W1 + b1) W2 + b2))
// Input is Dropout(token_embedding + position_embedding). Weight matrices
// are stored input-major (fan_in x fan_out) so that out = in * W + b.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "seqtag/tensor.hpp"
#include "seqtag/tokenizer.hpp"

namespace seqtag {

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t d_ff = 256;
  std::size_t max_len = kDefaultMaxLen;
  double dropout_rate = 0.1;
  std::uint64_t seed = 0;

  // Throws Error{BadConfig}.
  void validate() const;
  std::size_t head_dim() const { return d_model / n_heads; }
};

struct EncoderLayer {
  Matrix query, key, value, output;   // d_model x d_model
  Vector query_bias, key_bias, value_bias, output_bias;
  Matrix ff_in;                       // d_model x d_ff
  Vector ff_in_bias;
  Matrix ff_out;                      // d_ff x d_model
  Vector ff_out_bias;
  Vector attn_norm_gain, attn_norm_bias;
  Vector ff_norm_gain, ff_norm_bias;
};

struct EncoderParams {
  Matrix token_embeddings;     // vocab_size x d_model
  Matrix position_embeddings;  // max_len x d_model
  std::vector<EncoderLayer> layers;

  // All tensors zero, shaped by config.
  static EncoderParams zeros(const EncoderConfig& config);
  // Named views in a fixed order ("encoder.tok_emb", "encoder.L0.query", ...).
  TensorList tensors();
};

// Normal(0, 1/fan_in) weights from Rng(config.seed); embeddings use
// fan_in = d_model. Layer-norm gains start at 1, every bias at 0.
EncoderParams init_params(const EncoderConfig& config);

struct LayerCache {
  Matrix input;
  Matrix query, key, value;   // T x d_model, heads side by side
  std::vector<Matrix> attention;  // per head, T x T, rows sum to 1 over live keys
  Matrix context;             // T x d_model
  Matrix attn_dropout;        // mask scaled by 1/(1-p); empty when inactive
  Matrix attn_normed;         // xhat of the first layer norm
  Vector attn_inv_std;
  Matrix attn_out;            // Y1
  Matrix ff_pre;              // Y1 W1 + b1
  Matrix ff_act;              // GELU(ff_pre)
  Matrix ff_dropout;
  Matrix ff_normed;
  Vector ff_inv_std;
};

struct Activation {
  std::vector<SubwordId> ids;
  std::vector<std::uint8_t> mask;
  bool train_mode = false;
  Matrix embedding_dropout;
  std::vector<LayerCache> layers;
  Matrix output;  // T x d_model

  std::size_t length() const { return ids.size(); }
};

// Throws Error{TooLong, MaskLengthMismatch, BadTokenId}. Dropout masks are
// drawn from Rng(dropout_seed) only when train_mode is set.
Activation forward(std::span<const SubwordId> ids, std::span<const std::uint8_t> attention_mask,
                   const EncoderParams& params, const EncoderConfig& config, bool train_mode,
                   std::uint64_t dropout_seed = 0);

// Adds d(loss)/d(params) into `grads` given d(loss)/d(activation.output) and
// returns d(loss)/d(input embeddings) (T x d_model). Throws Error{ShapeMismatch}.
Matrix backward(const Activation& activation, const Matrix& output_gradient,
                const EncoderParams& params, const EncoderConfig& config, EncoderParams& grads);

struct EncoderGradients {
  EncoderParams params;
  Matrix input;
};
EncoderGradients backward(const Activation& activation, const Matrix& output_gradient,
                          const EncoderParams& params, const EncoderConfig& config);

}  // namespace seqtag
