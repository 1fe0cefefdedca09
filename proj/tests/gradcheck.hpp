#pragma once

// Finite-difference gradient checks shared by the unit and acceptance tests.

#include <algorithm>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "seqtag/crf.hpp"
#include "seqtag/encoder.hpp"

namespace gradcheck {

struct Result {
  double max_relative_error = 0.0;
  std::string worst;  // tensor name and flat index of the worst entry
  std::size_t checked = 0;
};

inline void record(Result& r, double analytic, double numeric, double floor, const std::string& where) {
  const double e = oracle::relative_error(analytic, numeric, floor);
  ++r.checked;
  if (e > r.max_relative_error) {
    r.max_relative_error = e;
    r.worst = where;
  }
}

// Small encoder instance: 4 tokens (the last one masked when `masked`),
// d_model 16, one layer. The scalar loss is <output, G> for a random G.
// Dropout is active with a fixed seed when `train_mode`, so the masks are
// part of the function being differentiated.
inline Result encoder_check(std::uint64_t seed, bool train_mode, bool masked = true) {
  using namespace seqtag;
  EncoderConfig cfg;
  cfg.vocab_size = 7;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.d_ff = 24;
  cfg.max_len = 6;
  cfg.dropout_rate = train_mode ? 0.2 : 0.0;
  cfg.seed = seed;
  EncoderParams params = init_params(cfg);
  Rng rng(derive_seed(seed, {77}));
  // Non-trivial norm parameters so their gradients are exercised.
  for (auto& layer : params.layers) {
    for (long i = 0; i < layer.attn_norm_gain.size(); ++i) {
      layer.attn_norm_gain(i) += 0.3 * rng.normal();
      layer.attn_norm_bias(i) = 0.3 * rng.normal();
      layer.ff_norm_gain(i) += 0.3 * rng.normal();
      layer.ff_norm_bias(i) = 0.3 * rng.normal();
      layer.query_bias(i) = 0.2 * rng.normal();
      layer.key_bias(i) = 0.2 * rng.normal();
    }
  }
  const std::vector<SubwordId> ids{2, static_cast<SubwordId>(4 + rng.below(3)), static_cast<SubwordId>(4 + rng.below(3)), 3};
  std::vector<std::uint8_t> mask{1, 1, 1, static_cast<std::uint8_t>(masked ? 0 : 1)};
  Matrix G(4, static_cast<long>(cfg.d_model));
  for (long i = 0; i < G.size(); ++i) G.data()[i] = rng.normal();
  const std::uint64_t dropout_seed = derive_seed(seed, {5});

  auto loss = [&] {
    const Activation a = forward(ids, mask, params, cfg, train_mode, dropout_seed);
    return (a.output.array() * G.array()).sum();
  };
  const Activation act = forward(ids, mask, params, cfg, train_mode, dropout_seed);
  EncoderGradients grads = backward(act, G, params, cfg);

  Result r;
  TensorList p = params.tensors();
  TensorList g = grads.params.tensors();
  for (std::size_t t = 0; t < p.size(); ++t)
    for (std::size_t i = 0; i < p[t].size(); ++i) {
      const double numeric = oracle::central_difference(loss, p[t].data + i, 1e-4);
      record(r, g[t].data[i], numeric, 1e-9, p[t].name + "[" + std::to_string(i) + "]");
    }
  return r;
}

// 4 positions x 3 labels, all live unless `masked`; gold path random.
inline Result crf_check(std::uint64_t seed, bool masked = false) {
  using namespace seqtag;
  Rng rng(seed);
  auto [em, tr] = oracle::random_instance(rng, 4, 3, 1.0, !masked);
  const std::size_t live = em.live_positions().size();
  std::vector<LabelId> gold(live);
  for (auto& g : gold) g = static_cast<LabelId>(rng.below(3));
  const CrfGradients grads = nll_and_grads(em, tr, gold);
  auto loss = [&] { return log_partition(em, tr) - path_score(em, tr, gold); };
  Result r;
  const double h = 1e-5;
  for (long i = 0; i < em.scores.size(); ++i)
    record(r, grads.emissions.data()[i], oracle::central_difference(loss, em.scores.data() + i, h), 1e-12,
           "emissions[" + std::to_string(i) + "]");
  for (long i = 0; i < tr.trans.size(); ++i)
    record(r, grads.transitions.trans.data()[i], oracle::central_difference(loss, tr.trans.data() + i, h), 1e-12,
           "trans[" + std::to_string(i) + "]");
  for (long i = 0; i < tr.start.size(); ++i) {
    record(r, grads.transitions.start(i), oracle::central_difference(loss, &tr.start(i), h), 1e-12,
           "start[" + std::to_string(i) + "]");
    record(r, grads.transitions.stop(i), oracle::central_difference(loss, &tr.stop(i), h), 1e-12,
           "stop[" + std::to_string(i) + "]");
  }
  return r;
}

}  // namespace gradcheck
