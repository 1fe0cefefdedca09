#include <doctest.h>

#include <cmath>
#include <limits>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "seqtag/corpus.hpp"
#include "seqtag/crf.hpp"
#include "seqtag/error.hpp"

using namespace seqtag;

namespace {

EmissionMatrix make_em(std::initializer_list<std::initializer_list<double>> rows) {
  EmissionMatrix em;
  em.scores = Matrix(static_cast<long>(rows.size()), static_cast<long>(rows.begin()->size()));
  long r = 0;
  for (const auto& row : rows) {
    long c = 0;
    for (double v : row) em.scores(r, c++) = v;
    ++r;
  }
  em.label_mask.assign(rows.size(), 1);
  return em;
}

}  // namespace

TEST_CASE("emissions examples") {
  Projection p = Projection::zeros(3, 2);
  p.bias << 0.5, -1.0;
  Matrix reps = Matrix::Random(4, 3);
  EmissionMatrix em = emissions(reps, p, {1, 0, 1, 1});
  for (long i = 0; i < 4; ++i) {
    CHECK(em.scores(i, 0) == 0.5);
    CHECK(em.scores(i, 1) == -1.0);
  }
  CHECK(em.label_mask == std::vector<std::uint8_t>{1, 0, 1, 1});
  CHECK(em.live_positions() == std::vector<std::size_t>{0, 2, 3});

  Projection id = Projection::zeros(1, 1);
  id.weight(0, 0) = 1.0;
  Matrix x(3, 1);
  x << 1.5, -2.0, 7.0;
  CHECK(emissions(x, id, {1, 1, 1}).scores == x);

  Rng rng(4);
  Projection q = Projection::zeros(4, 3);
  Matrix r(3, 4);
  for (long i = 0; i < q.weight.size(); ++i) q.weight.data()[i] = rng.normal();
  for (long i = 0; i < 3; ++i) q.bias(i) = rng.normal();
  for (long i = 0; i < r.size(); ++i) r.data()[i] = rng.normal();
  const EmissionMatrix e = emissions(r, q, {1, 1, 1});
  for (long i = 0; i < 3; ++i)
    for (long j = 0; j < 3; ++j) {
      double s = q.bias(j);
      for (long k = 0; k < 4; ++k) s += r(i, k) * q.weight(k, j);
      CHECK(e.scores(i, j) == doctest::Approx(s).epsilon(1e-14));
    }
  CHECK_THROWS_AS(emissions(Matrix::Zero(2, 5), q, {1, 1}), Error);
  CHECK_THROWS_AS(emissions(Matrix::Zero(2, 4), q, {1}), Error);
}

TEST_CASE("emissions_backward matches the product rule") {
  Rng rng(8);
  Projection p = Projection::zeros(3, 4);
  for (long i = 0; i < p.weight.size(); ++i) p.weight.data()[i] = rng.normal();
  Matrix reps(2, 3), dS(2, 4);
  for (long i = 0; i < reps.size(); ++i) reps.data()[i] = rng.normal();
  for (long i = 0; i < dS.size(); ++i) dS.data()[i] = rng.normal();
  Projection g = Projection::zeros(3, 4);
  const Matrix dR = emissions_backward(reps, p, dS, g);
  CHECK((dR - dS * p.weight.transpose()).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((g.weight - reps.transpose() * dS).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((g.bias - dS.colwise().sum().transpose()).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("path_score examples") {
  EmissionMatrix one = make_em({{0.25, 3.0}});
  TransitionMatrix tr = TransitionMatrix::zeros(2);
  CHECK(path_score(one, tr, std::vector<LabelId>{1}) == 3.0);

  EmissionMatrix zero = make_em({{0, 0}, {0, 0}});
  CHECK(path_score(zero, tr, std::vector<LabelId>{0, 1}) == 0.0);
  CHECK(path_score(zero, tr, std::vector<LabelId>{1, 1}) == 0.0);

  EmissionMatrix em = make_em({{1, 2, 3}, {4, 5, 6}, {7, 8, 9}});
  TransitionMatrix t = TransitionMatrix::zeros(3);
  t.trans << 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9;
  t.start << 10, 20, 30;
  t.stop << 100, 200, 300;
  // start[2] + e0[2] + t[2][0] + e1[0] + t[0][1] + e2[1] + stop[1]
  CHECK(path_score(em, t, std::vector<LabelId>{2, 0, 1}) ==
        doctest::Approx(30 + 3 + 0.7 + 4 + 0.2 + 8 + 200).epsilon(1e-15));

  em.label_mask = {1, 0, 1};
  CHECK(path_score(em, t, std::vector<LabelId>{2, 1}) == doctest::Approx(30 + 3 + 0.8 + 8 + 200).epsilon(1e-15));
  CHECK_THROWS_AS(path_score(em, t, std::vector<LabelId>{2, 1, 0}), Error);
  em.label_mask = {0, 0, 0};
  CHECK_THROWS_AS(path_score(em, t, std::vector<LabelId>{}), Error);
  CHECK_THROWS_AS(log_partition(em, t), Error);
  CHECK_THROWS_AS(viterbi(em, t), Error);
  CHECK_THROWS_AS(marginals(em, t), Error);
}

TEST_CASE("log_partition examples") {
  CHECK(log_partition(make_em({{0, 0}}), TransitionMatrix::zeros(2)) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  EmissionMatrix single = make_em({{1.5}, {-2.0}, {0.25}});
  TransitionMatrix t = TransitionMatrix::zeros(1);
  t.trans(0, 0) = 0.5;
  t.start(0) = 1;
  t.stop(0) = -1;
  CHECK(log_partition(single, t) == doctest::Approx(path_score(single, t, std::vector<LabelId>{0, 0, 0})).epsilon(1e-15));

  Rng rng(12);
  auto [em, tr] = oracle::random_instance(rng, 4, 3, 2.0, true);
  CHECK(oracle::all_paths(4, 3).size() == 81);
  CHECK(std::abs(log_partition(em, tr) - oracle::enumerate(em, tr).log_z) < 1e-8);
}

TEST_CASE("log-space forward agrees with a naive-space forward") {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t T = 1 + rng.below(6), L = 1 + rng.below(5);
    auto [em, tr] = oracle::random_instance(rng, T, L, 0.5, true);
    std::vector<double> alpha(L);
    for (std::size_t j = 0; j < L; ++j) alpha[j] = std::exp(tr.start(j) + em.scores(0, j));
    for (std::size_t t = 1; t < T; ++t) {
      std::vector<double> next(L, 0.0);
      for (std::size_t j = 0; j < L; ++j) {
        for (std::size_t i = 0; i < L; ++i) next[j] += alpha[i] * std::exp(tr.trans(i, j));
        next[j] *= std::exp(em.scores(t, j));
      }
      alpha = next;
    }
    double z = 0.0;
    for (std::size_t j = 0; j < L; ++j) z += alpha[j] * std::exp(tr.stop(j));
    CHECK(std::abs(std::exp(log_partition(em, tr)) - z) <= 1e-10 * std::max(1.0, z));
  }
}

TEST_CASE("viterbi examples") {
  EmissionMatrix em = make_em({{0.1, 0.9, 0.3}, {2.0, -1.0, 0.0}, {0.0, 0.0, 5.0}});
  const ViterbiPath v = viterbi(em, TransitionMatrix::zeros(3));
  CHECK(v.labels == std::vector<LabelId>{1, 0, 2});
  CHECK(v.score == doctest::Approx(0.9 + 2.0 + 5.0).epsilon(1e-15));

  const ViterbiPath tie = viterbi(make_em({{1, 1, 1}, {1, 1, 1}, {1, 1, 1}, {1, 1, 1}}), TransitionMatrix::zeros(3));
  CHECK(tie.labels == std::vector<LabelId>{0, 0, 0, 0});

  Rng rng(5);
  auto [e5, t5] = oracle::random_instance(rng, 5, 4, 2.0, true);
  CHECK(oracle::all_paths(5, 4).size() == 1024);
  const auto ref = oracle::enumerate(e5, t5);
  const ViterbiPath best = viterbi(e5, t5);
  CHECK(std::abs(best.score - ref.best_score) <= 1e-10);
  CHECK(best.labels == ref.best_path);
}

TEST_CASE("viterbi ties on integer-valued instances follow the lower-id rule") {
  // Small integer scores create many exact ties; the lexicographically first
  // maximal path is the lower-id path at every position.
  Rng rng(71);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t T = 1 + rng.below(5), L = 1 + rng.below(4);
    EmissionMatrix em;
    em.scores = Matrix(static_cast<long>(T), static_cast<long>(L));
    for (long i = 0; i < em.scores.size(); ++i) em.scores.data()[i] = static_cast<double>(rng.below(3));
    em.label_mask.assign(T, 1);
    TransitionMatrix tr = TransitionMatrix::zeros(L);
    for (long i = 0; i < tr.trans.size(); ++i) tr.trans.data()[i] = static_cast<double>(rng.below(2));
    const auto ref = oracle::enumerate(em, tr);
    const ViterbiPath v = viterbi(em, tr);
    CHECK(v.score == ref.best_score);
    CHECK(v.labels == ref.best_path);
  }
}

TEST_CASE("marginals examples") {
  const Matrix m = marginals(make_em({{0, 0}}), TransitionMatrix::zeros(2));
  CHECK(m(0, 0) == doctest::Approx(0.5));
  CHECK(m(0, 1) == doctest::Approx(0.5));
  const Matrix sat = marginals(make_em({{-1000, 1000, -1000}}), TransitionMatrix::zeros(3));
  CHECK(std::abs(sat(0, 1) - 1.0) < 1e-12);
  CHECK(sat(0, 0) < 1e-12);

  Rng rng(9);
  auto [em, tr] = oracle::random_instance(rng, 3, 3, 2.0, true);
  CHECK((marginals(em, tr) - oracle::enumerate(em, tr).posteriors).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("oracle equivalence over random instances") {
  Rng rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t T = 1 + rng.below(6), L = 1 + rng.below(5);
    auto [em, tr] = oracle::random_instance(rng, T, L);
    const auto ref = oracle::enumerate(em, tr);
    CHECK(std::abs(log_partition(em, tr) - ref.log_z) < 1e-8);
    const ViterbiPath v = viterbi(em, tr);
    CHECK(std::abs(v.score - ref.best_score) < 1e-10);
    CHECK(v.labels == ref.best_path);
    const Matrix m = marginals(em, tr);
    CHECK((m - ref.posteriors).cwiseAbs().maxCoeff() < 1e-8);
    for (std::size_t t = 0; t < T; ++t) {
      const double s = m.row(static_cast<long>(t)).sum();
      if (em.label_mask[t]) CHECK(std::abs(s - 1.0) < 1e-9);
      else CHECK(s == 0.0);
    }
  }
}

TEST_CASE("log_partition bounds every path score") {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t T = 1 + rng.below(4), L = 1 + rng.below(4);
    auto [em, tr] = oracle::random_instance(rng, T, L);
    const double z = log_partition(em, tr);
    for (const auto& p : oracle::all_paths(em.live_positions().size(), L)) CHECK(path_score(em, tr, p) <= z + 1e-12);
    if (L == 1) CHECK(z == doctest::Approx(path_score(em, tr, std::vector<LabelId>(em.live_positions().size(), 0))));
  }
}

TEST_CASE("a constant added at one position shifts scores by that constant") {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t T = 2 + rng.below(4), L = 2 + rng.below(3);
    auto [em, tr] = oracle::random_instance(rng, T, L, 2.0, true);
    const double c = 10.0 * rng.normal();
    const std::size_t pos = rng.below(T);
    EmissionMatrix shifted = em;
    shifted.scores.row(static_cast<long>(pos)).array() += c;
    CHECK(std::abs(log_partition(shifted, tr) - log_partition(em, tr) - c) < 1e-9);
    const ViterbiPath a = viterbi(em, tr), b = viterbi(shifted, tr);
    CHECK(a.labels == b.labels);
    CHECK(std::abs(path_score(shifted, tr, a.labels) - path_score(em, tr, a.labels) - c) < 1e-9);
  }
}

TEST_CASE("nll_and_grads examples and identities") {
  EmissionMatrix em = make_em({{0.3}, {-1.2}});
  TransitionMatrix t = TransitionMatrix::zeros(1);
  t.trans(0, 0) = 0.7;
  const CrfGradients g = nll_and_grads(em, t, std::vector<LabelId>{0, 0});
  CHECK(std::abs(g.loss) < 1e-12);
  CHECK(g.emissions.cwiseAbs().maxCoeff() < 1e-12);
  CHECK(g.transitions.trans.cwiseAbs().maxCoeff() < 1e-12);

  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    auto [e, tr] = oracle::random_instance(rng, 2 + rng.below(5), 2 + rng.below(4));
    std::vector<LabelId> gold(e.live_positions().size());
    for (auto& l : gold) l = static_cast<LabelId>(rng.below(e.num_labels()));
    const CrfGradients r = nll_and_grads(e, tr, gold);
    CHECK(r.loss >= 0.0);
    CHECK(std::abs(r.loss - (log_partition(e, tr) - path_score(e, tr, gold))) < 1e-10);
    for (std::size_t i = 0; i < e.length(); ++i) {
      const double s = r.emissions.row(static_cast<long>(i)).sum();
      CHECK(std::abs(s) < 1e-10);
      if (!e.label_mask[i]) CHECK(r.emissions.row(static_cast<long>(i)).cwiseAbs().maxCoeff() == 0.0);
    }
    // Expected start/stop counts sum to one, observed to one.
    CHECK(std::abs(r.transitions.start.sum()) < 1e-10);
    CHECK(std::abs(r.transitions.stop.sum()) < 1e-10);
  }
  std::vector<LabelId> bad{0, 9};
  auto [e, tr] = oracle::random_instance(rng, 2, 3, 1.0, true);
  CHECK_THROWS_AS(nll_and_grads(e, tr, bad), Error);
}

TEST_CASE("nll_and_grads matches central finite differences") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto r = gradcheck::crf_check(seed, seed % 2 == 0);
    CAPTURE(seed);
    CAPTURE(r.worst);
    CHECK(r.max_relative_error < 1e-4);
  }
}

TEST_CASE("constrain_bio forbids invalid continuations") {
  const Tagset ts("toy", {"A", "B"});
  const TransitionMatrix t = constrain_bio(TransitionMatrix::zeros(ts.num_extended_labels()), ts);
  const double ninf = -std::numeric_limits<double>::infinity();
  const LabelId O = 0, BA = 1, IA = 2, BB = 3, IB = 4, X = ts.x_label();
  CHECK(t.trans(O, IA) == ninf);
  CHECK(t.trans(BA, IB) == ninf);
  CHECK(t.trans(IB, IA) == ninf);
  CHECK(t.trans(X, IA) == ninf);
  CHECK(t.start(IB) == ninf);
  CHECK(t.trans(BA, IA) == 0.0);
  CHECK(t.trans(IA, IA) == 0.0);
  CHECK(t.trans(IA, BB) == 0.0);
  CHECK(t.trans(O, BB) == 0.0);
  // Decoding under the constraints never yields a BIO violation.
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    auto [em, free] = oracle::random_instance(rng, 6, ts.num_extended_labels(), 3.0, true);
    const auto path = viterbi(em, constrain_bio(free, ts)).labels;
    std::vector<LabelId> word(path.begin(), path.end());
    for (auto& l : word)
      if (l == X) l = O;
    bool ok = true;
    for (std::size_t i = 0; i < path.size(); ++i)
      if (ts.is_inside(path[i]) && (i == 0 || ts.class_of(path[i - 1]) != ts.class_of(path[i]) || path[i - 1] == O || path[i - 1] == X))
        ok = false;
    CHECK(ok);
  }
}

TEST_CASE("scatter_labels") {
  EmissionMatrix em = make_em({{0, 0}, {0, 0}, {0, 0}, {0, 0}});
  em.label_mask = {0, 1, 0, 1};
  CHECK(scatter_labels(em, std::vector<LabelId>{5, 6}, 9) == std::vector<LabelId>{9, 5, 9, 6});
}
