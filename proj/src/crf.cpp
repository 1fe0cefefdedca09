#include "seqtag/crf.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "seqtag/error.hpp"
#include "seqtag/rng.hpp"

namespace seqtag {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double m = v.maxCoeff();
  if (m == kNegInf) return kNegInf;
  return m + std::log((v.array() - m).exp().sum());
}

std::vector<std::size_t> require_chain(const EmissionMatrix& em, const TransitionMatrix& tr) {
  if (em.label_mask.size() != em.length())
    throw runtime_error("ShapeMismatch", "label mask length differs from emission rows");
  if (tr.num_labels() != em.num_labels() || tr.trans.cols() != tr.trans.rows() ||
      static_cast<std::size_t>(tr.start.size()) != em.num_labels() ||
      static_cast<std::size_t>(tr.stop.size()) != em.num_labels())
    throw runtime_error("ShapeMismatch", "transition and emission label counts differ");
  auto live = em.live_positions();
  if (live.empty()) throw runtime_error("EmptyChain", "no unmasked position");
  return live;
}

// alpha(k, j): log-sum of all prefixes over live positions 0..k ending in j.
Matrix forward_scores(const EmissionMatrix& em, const TransitionMatrix& tr,
                      const std::vector<std::size_t>& live) {
  const auto L = static_cast<Eigen::Index>(em.num_labels());
  Matrix alpha(static_cast<Eigen::Index>(live.size()), L);
  alpha.row(0) = tr.start.transpose() + em.scores.row(static_cast<Eigen::Index>(live[0]));
  Eigen::VectorXd tmp(L);
  for (std::size_t k = 1; k < live.size(); ++k) {
    const auto t = static_cast<Eigen::Index>(live[k]);
    for (Eigen::Index j = 0; j < L; ++j) {
      for (Eigen::Index i = 0; i < L; ++i) tmp(i) = alpha(k - 1, i) + tr.trans(i, j);
      alpha(k, j) = log_sum_exp(tmp) + em.scores(t, j);
    }
  }
  return alpha;
}

// beta(k, i): log-sum of all suffixes after live position k given label i there.
Matrix backward_scores(const EmissionMatrix& em, const TransitionMatrix& tr,
                       const std::vector<std::size_t>& live) {
  const auto L = static_cast<Eigen::Index>(em.num_labels());
  const auto K = static_cast<Eigen::Index>(live.size());
  Matrix beta(K, L);
  beta.row(K - 1) = tr.stop.transpose();
  Eigen::VectorXd tmp(L);
  for (Eigen::Index k = K - 1; k-- > 0;) {
    const auto t = static_cast<Eigen::Index>(live[static_cast<std::size_t>(k + 1)]);
    for (Eigen::Index i = 0; i < L; ++i) {
      for (Eigen::Index j = 0; j < L; ++j)
        tmp(j) = tr.trans(i, j) + em.scores(t, j) + beta(k + 1, j);
      beta(k, i) = log_sum_exp(tmp);
    }
  }
  return beta;
}

double finish(const Matrix& alpha, const TransitionMatrix& tr) {
  const Eigen::VectorXd last = alpha.row(alpha.rows() - 1).transpose() + tr.stop;
  return log_sum_exp(last);
}

}  // namespace

Projection Projection::zeros(std::size_t d_model, std::size_t num_labels) {
  return {Matrix::Zero(static_cast<Eigen::Index>(d_model), static_cast<Eigen::Index>(num_labels)),
          Vector::Zero(static_cast<Eigen::Index>(num_labels))};
}

TensorList Projection::tensors() {
  return {tensor_ref("projection.weight", weight), tensor_ref("projection.bias", bias)};
}

Projection init_projection(std::size_t d_model, std::size_t num_labels, std::uint64_t seed) {
  Projection p = Projection::zeros(d_model, num_labels);
  Rng rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_model));
  for (Eigen::Index i = 0; i < p.weight.size(); ++i) p.weight.data()[i] = rng.normal() * scale;
  return p;
}

std::vector<std::size_t> EmissionMatrix::live_positions() const {
  std::vector<std::size_t> live;
  for (std::size_t i = 0; i < label_mask.size(); ++i)
    if (label_mask[i]) live.push_back(i);
  return live;
}

TransitionMatrix TransitionMatrix::zeros(std::size_t num_labels) {
  const auto L = static_cast<Eigen::Index>(num_labels);
  return {Matrix::Zero(L, L), Vector::Zero(L), Vector::Zero(L)};
}

TensorList TransitionMatrix::tensors() {
  return {tensor_ref("crf.trans", trans), tensor_ref("crf.start", start),
          tensor_ref("crf.stop", stop)};
}

TransitionMatrix constrain_bio(const TransitionMatrix& t, const Tagset& tagset) {
  TransitionMatrix out = t;
  const auto L = static_cast<LabelId>(t.num_labels());
  for (LabelId j = 0; j < L; ++j) {
    if (!tagset.is_inside(j)) continue;
    const auto cls = Tagset::class_of(j);
    out.start(j) = kNegInf;
    for (LabelId i = 0; i < L; ++i) {
      const bool same_class = (tagset.is_begin(i) || tagset.is_inside(i)) && Tagset::class_of(i) == cls;
      if (!same_class) out.trans(i, j) = kNegInf;
    }
  }
  return out;
}

EmissionMatrix emissions(const Matrix& representations, const Projection& projection,
                         std::vector<std::uint8_t> label_mask) {
  if (representations.cols() != projection.weight.rows() ||
      projection.bias.size() != projection.weight.cols())
    throw runtime_error("ShapeMismatch", "representation width " +
                                             std::to_string(representations.cols()) +
                                             " does not match projection input " +
                                             std::to_string(projection.weight.rows()));
  if (label_mask.size() != static_cast<std::size_t>(representations.rows()))
    throw runtime_error("ShapeMismatch", "label mask length differs from sequence length");
  EmissionMatrix em;
  em.scores = representations * projection.weight;
  em.scores.rowwise() += projection.bias.transpose();
  em.label_mask = std::move(label_mask);
  return em;
}

Matrix emissions_backward(const Matrix& representations, const Projection& projection,
                          const Matrix& score_gradient, Projection& grads) {
  grads.weight.noalias() += representations.transpose() * score_gradient;
  grads.bias += score_gradient.colwise().sum().transpose();
  return score_gradient * projection.weight.transpose();
}

double path_score(const EmissionMatrix& em, const TransitionMatrix& tr,
                  std::span<const LabelId> labels) {
  const auto live = require_chain(em, tr);
  if (labels.size() != live.size())
    throw runtime_error("LengthMismatch", std::to_string(labels.size()) + " labels for " +
                                              std::to_string(live.size()) + " live positions");
  // Same association order as the forward recursion.
  double s = tr.start(labels[0]) + em.scores(static_cast<Eigen::Index>(live[0]), labels[0]);
  for (std::size_t k = 1; k < live.size(); ++k) {
    s = s + tr.trans(labels[k - 1], labels[k]);
    s = s + em.scores(static_cast<Eigen::Index>(live[k]), labels[k]);
  }
  return s + tr.stop(labels.back());
}

double log_partition(const EmissionMatrix& em, const TransitionMatrix& tr) {
  const auto live = require_chain(em, tr);
  return finish(forward_scores(em, tr, live), tr);
}

ViterbiPath viterbi(const EmissionMatrix& em, const TransitionMatrix& tr) {
  const auto live = require_chain(em, tr);
  const auto L = static_cast<Eigen::Index>(em.num_labels());
  const std::size_t K = live.size();
  Matrix best(static_cast<Eigen::Index>(K), L);
  std::vector<std::vector<LabelId>> back(K, std::vector<LabelId>(static_cast<std::size_t>(L), 0));
  best.row(0) = tr.start.transpose() + em.scores.row(static_cast<Eigen::Index>(live[0]));
  for (std::size_t k = 1; k < K; ++k) {
    const auto t = static_cast<Eigen::Index>(live[k]);
    const auto kk = static_cast<Eigen::Index>(k);
    for (Eigen::Index j = 0; j < L; ++j) {
      Eigen::Index arg = 0;
      double m = best(kk - 1, 0) + tr.trans(0, j);
      for (Eigen::Index i = 1; i < L; ++i) {
        const double v = best(kk - 1, i) + tr.trans(i, j);
        if (v > m) {
          m = v;
          arg = i;
        }
      }
      best(kk, j) = m + em.scores(t, j);
      back[k][static_cast<std::size_t>(j)] = static_cast<LabelId>(arg);
    }
  }
  const auto last = static_cast<Eigen::Index>(K - 1);
  Eigen::Index arg = 0;
  double m = best(last, 0) + tr.stop(0);
  for (Eigen::Index j = 1; j < L; ++j) {
    const double v = best(last, j) + tr.stop(j);
    if (v > m) {
      m = v;
      arg = j;
    }
  }
  ViterbiPath path;
  path.labels.resize(K);
  path.labels[K - 1] = static_cast<LabelId>(arg);
  for (std::size_t k = K - 1; k > 0; --k)
    path.labels[k - 1] = back[k][static_cast<std::size_t>(path.labels[k])];
  path.score = path_score(em, tr, path.labels);
  return path;
}

Matrix marginals(const EmissionMatrix& em, const TransitionMatrix& tr) {
  const auto live = require_chain(em, tr);
  const Matrix alpha = forward_scores(em, tr, live);
  const Matrix beta = backward_scores(em, tr, live);
  const double log_z = finish(alpha, tr);
  Matrix out = Matrix::Zero(em.scores.rows(), em.scores.cols());
  for (std::size_t k = 0; k < live.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    out.row(static_cast<Eigen::Index>(live[k])) =
        (alpha.row(kk) + beta.row(kk)).array().unaryExpr([&](double v) { return std::exp(v - log_z); });
  }
  return out;
}

CrfGradients nll_and_grads(const EmissionMatrix& em, const TransitionMatrix& tr,
                           std::span<const LabelId> gold) {
  const auto live = require_chain(em, tr);
  if (gold.size() != live.size())
    throw runtime_error("LengthMismatch", std::to_string(gold.size()) + " gold labels for " +
                                              std::to_string(live.size()) + " live positions");
  const auto L = static_cast<Eigen::Index>(em.num_labels());
  for (LabelId g : gold)
    if (g < 0 || g >= L) throw runtime_error("BadLabel", "gold label " + std::to_string(g) + " out of range");

  const Matrix alpha = forward_scores(em, tr, live);
  const Matrix beta = backward_scores(em, tr, live);
  const double log_z = finish(alpha, tr);

  CrfGradients g;
  g.loss = log_z - path_score(em, tr, gold);
  g.emissions = Matrix::Zero(em.scores.rows(), em.scores.cols());
  g.transitions = TransitionMatrix::zeros(em.num_labels());

  const auto K = live.size();
  for (std::size_t k = 0; k < K; ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    const auto t = static_cast<Eigen::Index>(live[k]);
    for (Eigen::Index j = 0; j < L; ++j) g.emissions(t, j) = std::exp(alpha(kk, j) + beta(kk, j) - log_z);
    g.emissions(t, gold[k]) -= 1.0;
    if (k == 0) continue;
    for (Eigen::Index i = 0; i < L; ++i)
      for (Eigen::Index j = 0; j < L; ++j)
        g.transitions.trans(i, j) +=
            std::exp(alpha(kk - 1, i) + tr.trans(i, j) + em.scores(t, j) + beta(kk, j) - log_z);
    g.transitions.trans(gold[k - 1], gold[k]) -= 1.0;
  }
  const auto first = static_cast<Eigen::Index>(live.front());
  const auto last = static_cast<Eigen::Index>(live.back());
  g.transitions.start = g.emissions.row(first).transpose();
  g.transitions.stop = g.emissions.row(last).transpose();
  return g;
}

std::vector<LabelId> scatter_labels(const EmissionMatrix& em, std::span<const LabelId> live_labels,
                                    LabelId fill) {
  std::vector<LabelId> out(em.length(), fill);
  std::size_t k = 0;
  for (std::size_t i = 0; i < em.length(); ++i)
    if (em.label_mask[i]) out[i] = live_labels[k++];
  return out;
}

}  // namespace seqtag
