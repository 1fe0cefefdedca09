#include "seqtag/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <ostream>
#include <thread>

#include "seqtag/error.hpp"
#include "seqtag/rng.hpp"

namespace seqtag {

namespace {

// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is
// handled by exactly one worker; callers write results per index.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// Stream tags for dropout and data-order seeds.
constexpr std::uint64_t kDropoutStream = 0xD120;
constexpr std::uint64_t kDevStream = 0xDE7;

void copy_values(ModelParams& dst, ModelParams& src) {
  auto d = dst.tensors();
  auto s = src.tensors();
  for (std::size_t i = 0; i < d.size(); ++i) std::copy_n(s[i].data, s[i].size(), d[i].data);
}

}  // namespace

// ---------------------------------------------------------------------------
// Parameters

ModelParams ModelParams::zeros(const EncoderConfig& config, std::size_t num_labels) {
  return {EncoderParams::zeros(config), Projection::zeros(config.d_model, num_labels),
          TransitionMatrix::zeros(num_labels)};
}

TensorList ModelParams::tensors() {
  TensorList out = encoder.tensors();
  for (auto& t : projection.tensors()) out.push_back(t);
  for (auto& t : transitions.tensors()) out.push_back(t);
  return out;
}

void ModelParams::set_zero() {
  for (auto& t : tensors()) std::fill_n(t.data, t.size(), 0.0);
}

ModelParams& ModelParams::operator+=(const ModelParams& other) {
  auto dst = tensors();
  auto src = const_cast<ModelParams&>(other).tensors();
  if (dst.size() != src.size()) throw runtime_error("ShapeMismatch", "parameter sets differ");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].size() != src[i].size()) throw runtime_error("ShapeMismatch", "tensor " + dst[i].name);
    for (std::size_t j = 0; j < dst[i].size(); ++j) dst[i].data[j] += src[i].data[j];
  }
  return *this;
}

CrfModel CrfModel::initialize(const Tagset& tagset, const MergeTable& merges, const TrainConfig& config) {
  config.validate();
  CrfModel m{tagset, merges, config, config.encoder_config(merges.vocab_size()), {}};
  m.encoder_config.seed = derive_seed(config.seed, {1});
  const std::size_t L = tagset.num_extended_labels();
  m.params.encoder = init_params(m.encoder_config);
  m.params.projection = init_projection(config.d_model, L, derive_seed(config.seed, {2}));
  m.params.transitions = TransitionMatrix::zeros(L);
  return m;
}

// ---------------------------------------------------------------------------
// Batching

std::vector<Batch> make_batches(const Corpus& corpus, const MergeTable& merges, std::size_t batch_size,
                                std::size_t max_len, std::uint64_t seed, std::size_t epoch) {
  if (corpus.sentences.empty()) throw data_error("EmptyCorpus", "cannot batch an empty corpus");
  if (batch_size == 0) throw usage_error("BadConfig", "batch_size must be at least 1");
  std::vector<AlignedSequence> aligned;
  aligned.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    try {
      aligned.push_back(align(corpus.sentences[i], merges, corpus.tagset, max_len));
    } catch (const Error& e) {
      throw Error(e.kind(), e.code(), "sentence " + std::to_string(i) + ": " + e.what());
    }
  }
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, {epoch}));
  rng.shuffle(std::span<std::size_t>(order));

  const LabelId x = corpus.tagset.x_label();
  std::vector<Batch> batches;
  for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
    Batch b;
    const std::size_t end = std::min(order.size(), begin + batch_size);
    for (std::size_t p = begin; p < end; ++p) b.length = std::max(b.length, aligned[order[p]].size());
    for (std::size_t p = begin; p < end; ++p) {
      const auto& a = aligned[order[p]];
      const std::size_t pad = b.length - a.size();
      b.sentences.push_back(order[p]);
      auto& ids = b.ids.emplace_back(a.subword_ids);
      ids.insert(ids.end(), pad, MergeTable::kPad);
      auto& labels = b.labels.emplace_back(a.labels);
      labels.insert(labels.end(), pad, x);
      auto& am = b.attention_mask.emplace_back(a.attention_mask);
      am.insert(am.end(), pad, 0);
      auto& lm = b.label_mask.emplace_back(a.label_mask);
      lm.insert(lm.end(), pad, 0);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

// ---------------------------------------------------------------------------
// Loss and optimizer

double sequence_loss(const CrfModel& model, const std::vector<SubwordId>& ids,
                     const std::vector<LabelId>& labels, const std::vector<std::uint8_t>& attention_mask,
                     const std::vector<std::uint8_t>& label_mask, bool train_mode,
                     std::uint64_t dropout_seed, ModelParams* grads) {
  const auto& p = model.params;
  const Activation act = forward(ids, attention_mask, p.encoder, model.encoder_config, train_mode, dropout_seed);
  const EmissionMatrix em = emissions(act.output, p.projection, label_mask);
  std::vector<LabelId> gold;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (label_mask[i]) gold.push_back(labels[i]);
  if (grads == nullptr) return log_partition(em, p.transitions) - path_score(em, p.transitions, gold);

  CrfGradients crf = nll_and_grads(em, p.transitions, gold);
  grads->transitions.trans += crf.transitions.trans;
  grads->transitions.start += crf.transitions.start;
  grads->transitions.stop += crf.transitions.stop;
  const Matrix dreps = emissions_backward(act.output, p.projection, crf.emissions, grads->projection);
  backward(act, dreps, p.encoder, model.encoder_config, grads->encoder);
  return crf.loss;
}

double clip_global_norm(ModelParams& grads, double max_norm) {
  double sq = 0.0;
  auto tensors = grads.tensors();
  for (const auto& t : tensors)
    for (std::size_t i = 0; i < t.size(); ++i) sq += t.data[i] * t.data[i];
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& t : tensors)
      for (std::size_t i = 0; i < t.size(); ++i) t.data[i] *= scale;
  }
  return norm;
}

void adam_step(ModelParams& params, ModelParams& grads, AdamState& state, const TrainConfig& c) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  auto p = params.tensors();
  auto g = grads.tensors();
  auto m = state.first_moment.tensors();
  auto v = state.second_moment.tensors();
  for (std::size_t t = 0; t < p.size(); ++t) {
    for (std::size_t i = 0; i < p[t].size(); ++i) {
      const double gi = g[t].data[i];
      double& mi = m[t].data[i];
      double& vi = v[t].data[i];
      mi = c.beta1 * mi + (1.0 - c.beta1) * gi;
      vi = c.beta2 * vi + (1.0 - c.beta2) * gi * gi;
      const double update = (mi / bc1) / (std::sqrt(vi / bc2) + c.epsilon);
      p[t].data[i] -= c.learning_rate * (update + c.weight_decay * p[t].data[i]);
    }
  }
}

// ---------------------------------------------------------------------------
// Prediction

SentencePrediction predict_tokens(const CrfModel& model, const std::vector<std::string>& tokens) {
  const std::vector<LabelId> placeholder(tokens.size(), Tagset::outside());
  const AlignedSequence a = align(tokens, placeholder, model.merges, model.tagset, model.config.max_len);
  const Activation act = forward(a.subword_ids, a.attention_mask, model.params.encoder,
                                 model.encoder_config, false);
  const EmissionMatrix em = emissions(act.output, model.params.projection, a.label_mask);
  const ViterbiPath path =
      model.config.constrained_decoding
          ? viterbi(em, constrain_bio(model.params.transitions, model.tagset))
          : viterbi(em, model.params.transitions);
  const auto subword_tags = scatter_labels(em, path.labels, model.tagset.x_label());
  ProjectedTags projected = project(a, subword_tags, model.tagset);
  return {std::move(projected.tags), projected.coerced_x, projected.dropped_words};
}

TagSequences predict_corpus(const CrfModel& model, const Corpus& corpus) {
  TagSequences out(corpus.size());
  parallel_for(corpus.size(), model.config.threads, [&](std::size_t i) {
    out[i] = predict_tokens(model, corpus.sentences[i].tokens).tags;
  });
  return out;
}

EvalReport evaluate_model(const CrfModel& model, const Corpus& corpus) {
  return evaluate(tags_of(corpus), predict_corpus(model, corpus), corpus.tagset);
}

// ---------------------------------------------------------------------------
// Training

Checkpoint train(const Corpus& train_corpus, const Corpus& dev_corpus, const MergeTable& merges,
                 const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  if (dev_corpus.sentences.empty()) throw data_error("EmptyDev", "development corpus is empty");
  if (train_corpus.sentences.empty()) throw data_error("EmptyCorpus", "training corpus is empty");
  if (!(train_corpus.tagset == dev_corpus.tagset))
    throw usage_error("TagsetMismatch", "training and development corpora use different tagsets");

  Checkpoint state;
  if (options.resume != nullptr) {
    if (!options.resume->resumable())
      throw usage_error("NotResumable", "checkpoint holds final weights, not a training snapshot");
    state = *options.resume;
    if (!(state.model.tagset == train_corpus.tagset) || !(state.model.merges == merges))
      throw usage_error("ResumeMismatch", "snapshot tagset or tokenizer differs from the inputs");
    // Hyperparameters come from the caller; the architecture stays the snapshot's.
    const TrainConfig arch = state.model.config;
    state.model.config = config;
    state.model.config.d_model = arch.d_model;
    state.model.config.n_heads = arch.n_heads;
    state.model.config.n_layers = arch.n_layers;
    state.model.config.d_ff = arch.d_ff;
    state.model.config.max_len = arch.max_len;
  } else {
    state.model = CrfModel::initialize(train_corpus.tagset, merges, config);
    const std::size_t L = state.model.num_labels();
    state.optimizer.first_moment = ModelParams::zeros(state.model.encoder_config, L);
    state.optimizer.second_moment = ModelParams::zeros(state.model.encoder_config, L);
    state.best = state.model.params;
  }
  CrfModel& model = state.model;
  const TrainConfig& cfg = model.config;
  const std::size_t L = model.num_labels();

  ModelParams grads = ModelParams::zeros(model.encoder_config, L);
  std::vector<ModelParams> seq_grads;
  std::vector<double> seq_loss;

  for (std::size_t epoch = state.epochs_completed; epoch < cfg.epochs; ++epoch) {
    const auto batches = make_batches(train_corpus, merges, cfg.batch_size, cfg.max_len, cfg.seed, epoch);
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const Batch& b = batches[bi];
      while (seq_grads.size() < b.size()) seq_grads.push_back(ModelParams::zeros(model.encoder_config, L));
      seq_loss.assign(b.size(), 0.0);
      parallel_for(b.size(), cfg.threads, [&](std::size_t s) {
        seq_grads[s].set_zero();
        seq_loss[s] = sequence_loss(model, b.ids[s], b.labels[s], b.attention_mask[s], b.label_mask[s],
                                    true, derive_seed(cfg.seed, {kDropoutStream, epoch, bi, s}),
                                    &seq_grads[s]);
      });
      grads.set_zero();
      double batch_loss = 0.0;
      for (std::size_t s = 0; s < b.size(); ++s) {
        grads += seq_grads[s];
        batch_loss += seq_loss[s];
      }
      const double inv = 1.0 / static_cast<double>(b.size());
      batch_loss *= inv;
      if (!std::isfinite(batch_loss))
        throw runtime_error("NonFiniteLoss", "epoch " + std::to_string(epoch + 1) + ", batch " +
                                                 std::to_string(bi) + ": loss is " + std::to_string(batch_loss));
      for (auto& t : grads.tensors())
        for (std::size_t i = 0; i < t.size(); ++i) t.data[i] *= inv;
      clip_global_norm(grads, cfg.grad_clip_norm);
      adam_step(model.params, grads, state.optimizer, cfg);
      loss_sum += batch_loss;
      ++loss_count;
    }

    const EvalReport dev = evaluate_model(model, dev_corpus);
    EpochRecord rec{epoch + 1, loss_sum / static_cast<double>(loss_count), dev.phrase_total.f1(),
                    dev.word_total.f1()};
    state.history.push_back(rec);
    state.epochs_completed = epoch + 1;
    if (rec.dev_phrase_f1 > state.best_dev_f1) {
      state.best_dev_f1 = rec.dev_phrase_f1;
      state.best_epoch = rec.epoch;
      state.stale_epochs = 0;
      copy_values(*state.best, model.params);
    } else {
      ++state.stale_epochs;
    }
    if (options.log != nullptr)
      *options.log << "epoch " << rec.epoch << " loss " << rec.train_loss << " dev_phrase_f1 "
                   << rec.dev_phrase_f1 << " dev_word_f1 " << rec.dev_word_f1
                   << (state.best_epoch == rec.epoch ? " *" : "") << '\n';
    if (options.on_epoch_end) options.on_epoch_end(state);
    if (cfg.patience > 0 && state.stale_epochs >= cfg.patience) break;
  }

  Checkpoint result = std::move(state);
  result.model.params = std::move(*result.best);
  result.best.reset();
  return result;
}

// ---------------------------------------------------------------------------
// Cross-validation

DevSplit carve_dev(std::vector<std::size_t> pool, double dev_fraction, std::uint64_t seed) {
  DevSplit out;
  if (pool.empty()) throw data_error("EmptyDev", "no sentences to carve a dev set from");
  if (pool.size() == 1) {
    out.fit = pool;
    out.dev = pool;
    return out;
  }
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(pool));
  auto n_dev = static_cast<std::size_t>(std::floor(dev_fraction * static_cast<double>(pool.size())));
  n_dev = std::clamp<std::size_t>(n_dev, 1, pool.size() - 1);
  out.dev.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_dev));
  out.fit.assign(pool.begin() + static_cast<std::ptrdiff_t>(n_dev), pool.end());
  std::sort(out.dev.begin(), out.dev.end());
  std::sort(out.fit.begin(), out.fit.end());
  return out;
}

std::vector<FoldPlan> plan_folds(std::size_t sentence_count, std::size_t k, const TrainConfig& config) {
  const FoldSplit split = split_kfold(sentence_count, k, config.seed);
  std::vector<FoldPlan> plans;
  for (std::size_t f = 0; f < k; ++f) {
    FoldPlan plan;
    plan.test = split.members(f);
    DevSplit d = carve_dev(split.complement(f), config.dev_fraction, derive_seed(config.seed, {kDevStream, f}));
    plan.fit = std::move(d.fit);
    plan.dev = std::move(d.dev);
    plans.push_back(std::move(plan));
  }
  return plans;
}

CvResult cross_validate(const Corpus& corpus, std::size_t k, const TrainConfig& config,
                        const MergeTable* merges, std::ostream* log) {
  config.validate();
  const auto plans = plan_folds(corpus.size(), k, config);
  CvResult result{{}, EvalReport(corpus.tagset)};
  for (std::size_t f = 0; f < plans.size(); ++f) {
    const auto& plan = plans[f];
    const Corpus fit = subset(corpus, plan.fit);
    const Corpus dev = subset(corpus, plan.dev);
    const Corpus test = subset(corpus, plan.test);
    MergeTable fold_merges;
    if (merges != nullptr) {
      fold_merges = *merges;
    } else {
      auto counts = word_counts(fit);
      for (const auto& [w, n] : word_counts(dev)) counts[w] += n;
      fold_merges = train_bpe(counts, config.bpe_vocab_size);
    }
    if (log != nullptr)
      *log << "fold " << f + 1 << "/" << k << ": train " << plan.train_size() << " (dev " << dev.size()
           << "), test " << test.size() << '\n';
    TrainOptions opts;
    opts.log = log;
    const Checkpoint ck = train(fit, dev, fold_merges, config, opts);
    FoldResult fr{f, plan.train_size(), dev.size(), test.size(), ck.best_epoch, ck.history,
                  evaluate_model(ck.model, test)};
    result.pooled += fr.report;
    result.folds.push_back(std::move(fr));
  }
  return result;
}

}  // namespace seqtag
