#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numeric>

#include "gradcheck.hpp"
#include "seqtag/encoder.hpp"
#include "seqtag/error.hpp"

using namespace seqtag;

namespace {

EncoderConfig small_config(std::size_t d_model = 32, std::size_t layers = 2) {
  EncoderConfig c;
  c.vocab_size = 20;
  c.d_model = d_model;
  c.n_heads = 4;
  c.n_layers = layers;
  c.d_ff = 2 * d_model;
  c.max_len = 16;
  c.dropout_rate = 0.1;
  c.seed = 42;
  return c;
}

bool same_bytes(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace

TEST_CASE("config validation") {
  EncoderConfig c = small_config();
  CHECK_NOTHROW(c.validate());
  c.n_heads = 5;
  CHECK_THROWS_AS(c.validate(), Error);
  c = small_config();
  c.max_len = 2;
  CHECK_THROWS_AS(c.validate(), Error);
  c = small_config();
  c.dropout_rate = 1.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = small_config();
  c.vocab_size = 0;
  CHECK_THROWS_AS(init_params(c), Error);
}

TEST_CASE("init_params is deterministic and follows the declared scales") {
  const EncoderConfig c = small_config();
  EncoderParams a = init_params(c), b = init_params(c);
  TensorList ta = a.tensors(), tb = b.tensors();
  REQUIRE(ta.size() == tb.size());
  for (std::size_t i = 0; i < ta.size(); ++i) {
    CHECK(ta[i].name == tb[i].name);
    CHECK(std::memcmp(ta[i].data, tb[i].data, sizeof(double) * ta[i].size()) == 0);
  }
  for (const auto& layer : a.layers) {
    CHECK((layer.attn_norm_gain.array() == 1.0).all());
    CHECK((layer.ff_norm_gain.array() == 1.0).all());
    CHECK((layer.ff_out_bias.array() == 0.0).all());
  }

  EncoderConfig big = small_config(64);
  big.vocab_size = 1000;
  const EncoderParams p = init_params(big);
  const double mean = p.token_embeddings.mean();
  const double var = (p.token_embeddings.array() - mean).square().mean();
  CHECK(std::abs(std::sqrt(var) - 1.0 / 8.0) < 0.1 / 8.0);
  // d_ff x d_model output projection uses fan_in = d_ff.
  const Matrix& w2 = p.layers[0].ff_out;
  CHECK(std::abs(std::sqrt(w2.array().square().mean()) - 1.0 / std::sqrt(double(big.d_ff))) < 0.1 / std::sqrt(double(big.d_ff)));
}

TEST_CASE("forward examples") {
  const EncoderConfig c = small_config();
  const EncoderParams p = init_params(c);
  std::vector<SubwordId> one{5};
  std::vector<std::uint8_t> m1{1};
  const Activation a = forward(one, m1, p, c, false);
  for (const auto& layer : a.layers)
    for (const auto& head : layer.attention) CHECK(head(0, 0) == doctest::Approx(1.0).epsilon(1e-12));

  // Output at the live position ignores ids at masked positions.
  std::vector<std::uint8_t> mask{0, 1, 0, 0};
  const Activation x = forward(std::vector<SubwordId>{7, 5, 9, 11}, mask, p, c, false);
  const Activation y = forward(std::vector<SubwordId>{1, 5, 3, 19}, mask, p, c, false);
  CHECK((x.output.row(1) - y.output.row(1)).cwiseAbs().maxCoeff() < 1e-12);

  Rng rng(3);
  std::vector<SubwordId> ids(8);
  std::vector<std::uint8_t> rm(8);
  for (std::size_t i = 0; i < 8; ++i) {
    ids[i] = static_cast<SubwordId>(rng.below(20));
    rm[i] = rng.uniform() < 0.7 ? 1 : 0;
  }
  rm[0] = 1;
  const Activation r = forward(ids, rm, p, c, true, 9);
  for (const auto& layer : r.layers)
    for (const auto& head : layer.attention)
      for (long q = 0; q < head.rows(); ++q) {
        double live = 0.0;
        for (long k = 0; k < head.cols(); ++k) {
          if (rm[static_cast<std::size_t>(k)]) live += head(q, k);
          else CHECK(head(q, k) == 0.0);
        }
        CHECK(std::abs(live - 1.0) < 1e-6);
      }
}

TEST_CASE("forward errors") {
  const EncoderConfig c = small_config();
  const EncoderParams p = init_params(c);
  CHECK_THROWS_AS(forward(std::vector<SubwordId>(17, 4), std::vector<std::uint8_t>(17, 1), p, c, false), Error);
  CHECK_THROWS_AS(forward(std::vector<SubwordId>(3, 4), std::vector<std::uint8_t>(2, 1), p, c, false), Error);
  CHECK_THROWS_AS(forward(std::vector<SubwordId>{20}, std::vector<std::uint8_t>{1}, p, c, false), Error);
}

TEST_CASE("eval-mode forward is deterministic and dropout is seeded") {
  const EncoderConfig c = small_config();
  const EncoderParams p = init_params(c);
  const std::vector<SubwordId> ids{2, 5, 6, 7, 3};
  const std::vector<std::uint8_t> m(5, 1);
  CHECK(same_bytes(forward(ids, m, p, c, false).output, forward(ids, m, p, c, false).output));
  CHECK(same_bytes(forward(ids, m, p, c, false, 1).output, forward(ids, m, p, c, false, 2).output));
  CHECK(same_bytes(forward(ids, m, p, c, true, 4).output, forward(ids, m, p, c, true, 4).output));
  CHECK_FALSE(same_bytes(forward(ids, m, p, c, true, 4).output, forward(ids, m, p, c, true, 5).output));
}

TEST_CASE("zeroed position embeddings make forward permutation equivariant") {
  const EncoderConfig c = small_config();
  EncoderParams p = init_params(c);
  p.position_embeddings.setZero();
  const std::vector<SubwordId> ids{4, 9, 12, 6, 15};
  const std::vector<std::uint8_t> m{1, 1, 0, 1, 1};
  const std::vector<std::size_t> perm{3, 0, 4, 2, 1};
  std::vector<SubwordId> pids;
  std::vector<std::uint8_t> pm;
  for (auto i : perm) {
    pids.push_back(ids[i]);
    pm.push_back(m[i]);
  }
  const Activation a = forward(ids, m, p, c, false);
  const Activation b = forward(pids, pm, p, c, false);
  for (std::size_t j = 0; j < perm.size(); ++j)
    CHECK((a.output.row(static_cast<long>(perm[j])) - b.output.row(static_cast<long>(j))).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("backward examples") {
  const EncoderConfig c = small_config();
  const EncoderParams p = init_params(c);
  const std::vector<SubwordId> ids{2, 5, 6, 3};
  const Activation a = forward(ids, std::vector<std::uint8_t>(4, 1), p, c, true, 11);
  EncoderGradients zero = backward(a, Matrix::Zero(4, 32), p, c);
  for (const auto& t : zero.params.tensors())
    for (std::size_t i = 0; i < t.size(); ++i) REQUIRE(t.data[i] == 0.0);

  Matrix G = Matrix::Ones(4, 32);
  EncoderGradients g = backward(a, G, p, c);
  CHECK(g.params.position_embeddings.bottomRows(12).cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.params.position_embeddings.topRows(4).cwiseAbs().maxCoeff() > 0.0);
  CHECK(all_finite(g.input));
  CHECK_THROWS_AS(backward(a, Matrix::Ones(3, 32), p, c), Error);
}

TEST_CASE("backward matches central finite differences") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto eval = gradcheck::encoder_check(seed, false);
    CAPTURE(seed);
    CAPTURE(eval.worst);
    CHECK(eval.max_relative_error < 1e-3);
    const auto train = gradcheck::encoder_check(seed, true);
    CAPTURE(train.worst);
    CHECK(train.max_relative_error < 1e-3);
  }
  CHECK(gradcheck::encoder_check(99, false, false).max_relative_error < 1e-3);
}

TEST_CASE("large inputs stay finite") {
  EncoderConfig c = small_config();
  EncoderParams p = init_params(c);
  for (auto& layer : p.layers) {
    layer.query *= 200.0;
    layer.key *= 200.0;
  }
  const std::vector<SubwordId> ids{2, 5, 6, 7, 3};
  const Activation a = forward(ids, std::vector<std::uint8_t>(5, 1), p, c, true, 1);
  CHECK(all_finite(a.output));
  EncoderGradients g = backward(a, Matrix::Ones(5, 32), p, c);
  for (const auto& t : g.params.tensors())
    for (std::size_t i = 0; i < t.size(); ++i) REQUIRE(std::isfinite(t.data[i]));
}
