#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "seqtag/encoder.hpp"

namespace seqtag {

inline constexpr std::uint64_t kDefaultSeed = 0;

// Training and model hyperparameters. Serialized as flat `key=value` text;
// key names match the field names.
struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  double grad_clip_norm = 1.0;  // <= 0 disables clipping
  std::uint64_t seed = kDefaultSeed;
  std::size_t patience = 5;     // 0 disables early stopping

  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t d_ff = 256;
  std::size_t max_len = kDefaultMaxLen;
  double dropout = 0.1;

  double dev_fraction = 0.1;
  std::size_t bpe_vocab_size = 1000;
  bool constrained_decoding = false;

  // Worker threads for per-sequence work. Not part of the serialized
  // snapshot: results are identical for every thread count.
  std::size_t threads = 1;

  // Throws Error{BadConfig}.
  void validate() const;
  EncoderConfig encoder_config(std::size_t vocab_size) const;

  // Throws Error{UnknownKey} or Error{BadNumber}.
  void set(std::string_view key, std::string_view value);
  std::string to_text() const;
  // Applies every key=value line of `text` on top of the current values.
  void merge_text(std::string_view text);
  static TrainConfig from_text(std::string_view text);

  static const std::vector<std::string>& keys();
};

}  // namespace seqtag
