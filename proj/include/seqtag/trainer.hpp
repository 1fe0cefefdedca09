#pragma once

// Mini-batch training of encoder + projection + CRF, prediction, and
// k-fold cross-validation.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "seqtag/config.hpp"
#include "seqtag/corpus.hpp"
#include "seqtag/crf.hpp"
#include "seqtag/encoder.hpp"
#include "seqtag/evaluator.hpp"
#include "seqtag/tokenizer.hpp"

namespace seqtag {

// Every trainable tensor. Also used as the gradient and moment buffers.
struct ModelParams {
  EncoderParams encoder;
  Projection projection;
  TransitionMatrix transitions;

  static ModelParams zeros(const EncoderConfig& config, std::size_t num_labels);
  TensorList tensors();
  void set_zero();
  ModelParams& operator+=(const ModelParams& other);
};

struct CrfModel {
  Tagset tagset;
  MergeTable merges;
  TrainConfig config;
  EncoderConfig encoder_config;
  ModelParams params;

  // Seeded initialization: encoder from derive_seed(seed, {1}), projection
  // from derive_seed(seed, {2}), zero transitions.
  static CrfModel initialize(const Tagset& tagset, const MergeTable& merges, const TrainConfig& config);
  std::size_t num_labels() const { return tagset.num_extended_labels(); }
};

struct Batch {
  std::vector<std::size_t> sentences;  // corpus indices
  std::size_t length = 0;              // padded subword length
  std::vector<std::vector<SubwordId>> ids;
  std::vector<std::vector<LabelId>> labels;
  std::vector<std::vector<std::uint8_t>> attention_mask;
  std::vector<std::vector<std::uint8_t>> label_mask;

  std::size_t size() const { return sentences.size(); }
};

// Aligns every sentence, shuffles with derive_seed(seed, {epoch}), groups
// into batches and pads each to its longest member (PAD id, X label, masks
// off). WordTooLong is rethrown naming the sentence index.
std::vector<Batch> make_batches(const Corpus& corpus, const MergeTable& merges, std::size_t batch_size,
                                std::size_t max_len, std::uint64_t seed, std::size_t epoch);

// CRF negative log-likelihood of one (padded) sequence. When `grads` is
// given, its gradient is added there.
double sequence_loss(const CrfModel& model, const std::vector<SubwordId>& ids,
                     const std::vector<LabelId>& labels, const std::vector<std::uint8_t>& attention_mask,
                     const std::vector<std::uint8_t>& label_mask, bool train_mode,
                     std::uint64_t dropout_seed, ModelParams* grads);

struct AdamState {
  std::uint64_t step = 0;
  ModelParams first_moment;
  ModelParams second_moment;
};

// Scales `grads` so their global L2 norm is at most max_norm; returns the
// norm before clipping. max_norm <= 0 leaves grads untouched.
double clip_global_norm(ModelParams& grads, double max_norm);
// One bias-corrected adaptive-moment step with decoupled weight decay.
void adam_step(ModelParams& params, ModelParams& grads, AdamState& state, const TrainConfig& config);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double dev_phrase_f1 = 0.0;
  double dev_word_f1 = 0.0;
};

struct Checkpoint {
  CrfModel model;
  AdamState optimizer;
  std::size_t epochs_completed = 0;
  std::vector<EpochRecord> history;
  double best_dev_f1 = -1.0;
  std::size_t best_epoch = 0;
  std::size_t stale_epochs = 0;
  // Present in mid-training snapshots: `model` then holds the live weights
  // and `best` the weights of best_epoch. Checkpoints returned by train()
  // hold the best weights in `model` and no `best`.
  std::optional<ModelParams> best;

  bool resumable() const { return best.has_value(); }
};

struct TrainOptions {
  // Continue from a mid-training snapshot instead of initializing.
  const Checkpoint* resume = nullptr;
  // Receives a resumable snapshot after every epoch.
  std::function<void(const Checkpoint&)> on_epoch_end;
  std::ostream* log = nullptr;
};

// Throws Error{EmptyDev, NonFiniteLoss, ShapeMismatch}.
Checkpoint train(const Corpus& train_corpus, const Corpus& dev_corpus, const MergeTable& merges,
                 const TrainConfig& config, const TrainOptions& options = {});

struct SentencePrediction {
  std::vector<LabelId> tags;
  std::size_t coerced_x = 0;
  std::size_t dropped_words = 0;
};

// Encode, align, Viterbi-decode and project back to words.
SentencePrediction predict_tokens(const CrfModel& model, const std::vector<std::string>& tokens);
TagSequences predict_corpus(const CrfModel& model, const Corpus& corpus);
// The single evaluation path shared by training, cv and the CLI.
EvalReport evaluate_model(const CrfModel& model, const Corpus& corpus);

struct DevSplit {
  std::vector<std::size_t> fit;
  std::vector<std::size_t> dev;
};

// Shuffles `pool` with Rng(seed) and holds out floor(dev_fraction * n)
// sentences, at least 1 and at most n - 1, as dev. A single-sentence pool
// serves as both fit and dev. Both lists come back ascending.
DevSplit carve_dev(std::vector<std::size_t> pool, double dev_fraction, std::uint64_t seed);

struct FoldPlan {
  std::vector<std::size_t> fit;   // sentences used for gradient steps
  std::vector<std::size_t> dev;   // held out from the training folds for early stopping
  std::vector<std::size_t> test;  // the held-out fold

  // Training-fold sentences (fit and dev are disjoint unless the pool holds
  // a single sentence).
  std::size_t train_size() const { return fit.size() + dev.size() - (fit == dev ? dev.size() : 0); }
};

// Fold f tests on fold f and trains on the other k-1 folds, from which
// carve_dev draws the dev sentences.
std::vector<FoldPlan> plan_folds(std::size_t sentence_count, std::size_t k, const TrainConfig& config);

struct FoldResult {
  std::size_t fold = 0;
  std::size_t train_size = 0;
  std::size_t dev_size = 0;
  std::size_t test_size = 0;
  std::size_t best_epoch = 0;
  std::vector<EpochRecord> history;
  EvalReport report;
};

struct CvResult {
  std::vector<FoldResult> folds;
  EvalReport pooled;  // counts summed over all folds
};

// When `merges` is null a tokenizer of config.bpe_vocab_size is trained on
// each fold's training portion.
CvResult cross_validate(const Corpus& corpus, std::size_t k, const TrainConfig& config,
                        const MergeTable* merges = nullptr, std::ostream* log = nullptr);

}  // namespace seqtag
