#pragma once

// Linear-chain CRF over a masked emission sequence.
//
// Only positions whose label_mask entry is set take part in the chain; the
// others (BOS/EOS, continuation subwords, padding) are skipped entirely, so
// a transition links consecutive *live* positions. All recursions run in log
// space with max subtraction.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "seqtag/corpus.hpp"
#include "seqtag/tensor.hpp"

namespace seqtag {

// Fully connected layer from encoder width to label scores.
struct Projection {
  Matrix weight;  // d_model x L
  Vector bias;    // L

  static Projection zeros(std::size_t d_model, std::size_t num_labels);
  TensorList tensors();
};

// Normal(0, 1/d_model) weights from Rng(seed), zero bias.
Projection init_projection(std::size_t d_model, std::size_t num_labels, std::uint64_t seed);

struct EmissionMatrix {
  Matrix scores;  // seq_len x L
  std::vector<std::uint8_t> label_mask;

  std::size_t length() const { return static_cast<std::size_t>(scores.rows()); }
  std::size_t num_labels() const { return static_cast<std::size_t>(scores.cols()); }
  // Indices of positions with label_mask set, ascending.
  std::vector<std::size_t> live_positions() const;
};

struct TransitionMatrix {
  Matrix trans;  // trans(i, j): score of label i followed by label j
  Vector start;
  Vector stop;

  static TransitionMatrix zeros(std::size_t num_labels);
  std::size_t num_labels() const { return static_cast<std::size_t>(trans.rows()); }
  TensorList tensors();
};

// Copy of `t` with -inf on transitions that break BIO: start->I-c, O->I-c,
// X->I-c, and B-c/I-c -> I-c' for c != c'. Meant for decoding only.
TransitionMatrix constrain_bio(const TransitionMatrix& t, const Tagset& tagset);

// scores = representations * weight + bias. Throws Error{ShapeMismatch}.
EmissionMatrix emissions(const Matrix& representations, const Projection& projection,
                         std::vector<std::uint8_t> label_mask);
// Accumulates projection gradients and returns d(loss)/d(representations).
Matrix emissions_backward(const Matrix& representations, const Projection& projection,
                          const Matrix& score_gradient, Projection& grads);

// `labels` holds one label per live position. Throws Error{EmptyChain,
// LengthMismatch}.
double path_score(const EmissionMatrix& em, const TransitionMatrix& tr,
                  std::span<const LabelId> labels);

double log_partition(const EmissionMatrix& em, const TransitionMatrix& tr);

struct ViterbiPath {
  std::vector<LabelId> labels;  // one per live position
  double score = 0.0;
};
// Ties resolve to the lower label id at every backtracking step.
ViterbiPath viterbi(const EmissionMatrix& em, const TransitionMatrix& tr);

// Posterior label probabilities, seq_len x L; rows of masked positions are 0.
Matrix marginals(const EmissionMatrix& em, const TransitionMatrix& tr);

struct CrfGradients {
  double loss = 0.0;          // log_partition - path_score(gold)
  Matrix emissions;           // marginals - one_hot(gold), zero on masked rows
  TransitionMatrix transitions;  // expected minus observed counts
};
CrfGradients nll_and_grads(const EmissionMatrix& em, const TransitionMatrix& tr,
                           std::span<const LabelId> gold);

// Places per-live-position labels back at their subword positions; masked
// positions receive `fill`.
std::vector<LabelId> scatter_labels(const EmissionMatrix& em, std::span<const LabelId> live_labels,
                                    LabelId fill);

}  // namespace seqtag
