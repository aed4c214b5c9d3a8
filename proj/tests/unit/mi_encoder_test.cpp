#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "sparsectl/diff/grad_check.hpp"
#include "sparsectl/model/mi_encoder.hpp"
#include "test_util.hpp"

using namespace sparsectl;
using namespace sparsectl::model;
using diff::Graph;
using diff::Matrix;
using diff::Mode;
using diff::ParamStore;

namespace {

MiEncoderConfig small_config(bool per_dim = false) {
  MiEncoderConfig c;
  c.hidden = 6;
  c.value_dim = 4;
  c.gate_dim = 5;
  c.feature_dim = 3;
  c.position_dim = 4;
  c.latent_dim = 3;
  c.per_dimension = per_dim;
  return c;
}

DrivingSet random_bag(int T, std::size_t k, std::mt19937_64& rng) {
  Matrix<double> paf = sparsectl::testing::random_matrix(T, 3, rng);
  return random_driving_set(paf, k, rng);
}

// Plain-loop evaluation of the encoder equations, used as an oracle.
struct Reference {
  std::vector<double> mu, logvar, weights;
};

Reference reference_encode(const MiEncoder<double>& enc, const DrivingSet& ds) {
  const auto& cfg = enc.config();
  const auto& E = enc.E->value;
  const auto& Q = enc.Q->value;
  const auto& Km = enc.K->value;
  const auto& V = enc.V->value;
  const auto& w = enc.w->value;
  const auto& f = enc.features->value;
  const auto sorted = ds.canonical();
  const auto n = sorted.size();
  const auto D = static_cast<std::size_t>(cfg.value_dim);
  const auto nb = static_cast<std::size_t>(w.rows());

  std::vector<std::vector<double>> b(n, std::vector<double>(nb)), v(n, std::vector<double>(D));
  for (std::size_t k = 0; k < n; ++k) {
    const auto& dv = sorted[k];
    std::vector<double> in{dv.value};
    const auto pe = positional_encoding(dv.position, cfg.position_dim);
    in.insert(in.end(), pe.begin(), pe.end());
    for (Index j = 0; j < cfg.feature_dim; ++j) in.push_back(f(stream_index(dv.stream), j));
    std::vector<double> h(static_cast<std::size_t>(cfg.hidden));
    for (Index r = 0; r < cfg.hidden; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < in.size(); ++j) s += E(r, static_cast<Index>(j)) * in[j];
      h[static_cast<std::size_t>(r)] = std::max(0.0, s);
    }
    std::vector<double> gate(static_cast<std::size_t>(cfg.gate_dim));
    for (Index l = 0; l < cfg.gate_dim; ++l) {
      double q = 0, kk = 0;
      for (Index j = 0; j < cfg.hidden; ++j) {
        q += Q(l, j) * h[static_cast<std::size_t>(j)];
        kk += Km(l, j) * h[static_cast<std::size_t>(j)];
      }
      gate[static_cast<std::size_t>(l)] = std::tanh(q) / (1.0 + std::exp(-kk));
    }
    for (std::size_t d = 0; d < nb; ++d) {
      double s = 0;
      for (Index l = 0; l < cfg.gate_dim; ++l) s += w(static_cast<Index>(d), l) * gate[static_cast<std::size_t>(l)];
      b[k][d] = s;
    }
    for (std::size_t d = 0; d < D; ++d) {
      double s = 0;
      for (Index j = 0; j < cfg.hidden; ++j) s += V(static_cast<Index>(d), j) * h[static_cast<std::size_t>(j)];
      v[k][d] = std::tanh(s);
    }
  }
  std::vector<double> z(D, 0.0);
  Reference ref;
  if (n == 0) {
    for (std::size_t d = 0; d < D; ++d) z[d] = enc.empty->value(0, static_cast<Index>(d));
  } else {
    for (std::size_t d = 0; d < D; ++d) {
      const std::size_t col = nb == 1 ? 0 : d;
      double m = -1e300, denom = 0;
      for (std::size_t k = 0; k < n; ++k) m = std::max(m, b[k][col]);
      for (std::size_t k = 0; k < n; ++k) denom += std::exp(b[k][col] - m);
      for (std::size_t k = 0; k < n; ++k) z[d] += std::exp(b[k][col] - m) / denom * v[k][d];
    }
    for (std::size_t k = 0; k < n; ++k) {
      double m = -1e300, denom = 0;
      for (std::size_t j = 0; j < n; ++j) m = std::max(m, b[j][0]);
      for (std::size_t j = 0; j < n; ++j) denom += std::exp(b[j][0] - m);
      ref.weights.push_back(std::exp(b[k][0] - m) / denom);
    }
  }
  for (Index r = 0; r < cfg.latent_dim; ++r) {
    double a = 0, s = 0;
    for (std::size_t d = 0; d < D; ++d) {
      a += enc.U->value(r, static_cast<Index>(d)) * z[d];
      s += enc.S->value(r, static_cast<Index>(d)) * z[d];
    }
    ref.mu.push_back(a);
    ref.logvar.push_back(s);
  }
  return ref;
}

}  // namespace

TEST(PositionalEncoding, ZeroPosition) {
  const auto p = positional_encoding(0, 8);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_DOUBLE_EQ(p[i], i % 2 == 0 ? 0.0 : 1.0);
}

TEST(PositionalEncoding, HandEvaluatedValues) {
  const auto p = positional_encoding(1, 8);
  EXPECT_NEAR(p[0], 0.8414709848078965, 1e-15);  // sin(1)
  EXPECT_NEAR(p[1], 0.5403023058681398, 1e-15);  // cos(1)
  EXPECT_NEAR(p[2], 0.09983341664682815, 1e-15); // sin(1/10000^(2/8)) = sin(0.1)
  EXPECT_NEAR(p[7], std::cos(0.001), 1e-15);     // i=3: 10000^(6/8) = 1000
}

TEST(PositionalEncoding, Bounded) {
  for (int t = 0; t < 300; t += 7) {
    for (double x : positional_encoding(t, 8)) {
      EXPECT_GE(x, -1.0);
      EXPECT_LE(x, 1.0);
    }
  }
}

TEST(PositionalEncoding, OddWidthRejected) {
  EXPECT_THROW(positional_encoding(1, 7), InvalidInput);
  auto cfg = small_config();
  cfg.position_dim = 5;
  ParamStore<double> store;
  diff::Rng rng(1);
  EXPECT_THROW(MiEncoder<double>(store, "enc", cfg, rng), InvalidInput);
}

TEST(MiEncoder, PaperDimensionsAndParameterCount) {
  ParamStore<double> store;
  diff::Rng rng(1);
  MiEncoder<double> enc(store, "enc", MiEncoderConfig{}, rng);
  EXPECT_EQ(enc.E->value.rows(), 64);
  EXPECT_EQ(enc.E->value.cols(), 1 + 8 + 8);
  EXPECT_EQ(enc.Q->value.rows(), 64);
  EXPECT_EQ(enc.V->value.rows(), 32);
  EXPECT_EQ(enc.U->value.rows(), 32);
  // 64*17 + 2*64*64 + 32*64 + 64 + 2*32*32 + 3*8 + 32
  EXPECT_EQ(store.count(), 13496u);
}

TEST(MiEncoder, FeatureEncodings) {
  ParamStore<double> store;
  diff::Rng rng(3);
  MiEncoder<double> enc(store, "enc", small_config(), rng);
  const auto& f = enc.features->value;
  EXPECT_NE(f.row(0), f.row(1));
  EXPECT_NE(f.row(1), f.row(2));
  EXPECT_NE(f.row(0), f.row(2));

  Graph<double> g(Mode::train);
  DrivingSet ds;
  ds.add(0, Stream::f0, 0.3);
  ds.add(1, Stream::f0, -0.3);
  auto in = enc.instance_inputs(g, ds.values());
  EXPECT_EQ(in.value().row(0).tail(3), in.value().row(1).tail(3));

  // Only the F0 row receives gradient when only F0 values drive the encoder.
  std::mt19937_64 r(5);
  sparsectl::testing::randomize(store, r);
  Graph<double> g2(Mode::train);
  auto out = enc.encode(g2, ds, 4);
  g2.backward(diff::add(diff::sum(out.mu), diff::sum(out.logvar)));
  const auto& grad = enc.features->grad;
  EXPECT_GT(grad.row(0).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(grad.row(1).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(grad.row(2).cwiseAbs().maxCoeff(), 0.0);
}

TEST(MiEncoder, EmbedIsNonNegativeAndStreamSensitive) {
  ParamStore<double> store;
  diff::Rng rng(4);
  MiEncoder<double> enc(store, "enc", small_config(), rng);
  Graph<double> g;
  std::vector<DrivingValue> vals{{2, Stream::f0, 0.7}, {2, Stream::energy, 0.7}};
  auto h = enc.embed(g, enc.instance_inputs(g, vals));
  EXPECT_GE(h.value().minCoeff(), 0.0);
  EXPECT_NE(h.value().row(0), h.value().row(1));

  enc.E->value.setZero();
  Graph<double> g2;
  auto h0 = enc.embed(g2, enc.instance_inputs(g2, vals));
  EXPECT_EQ(h0.value().cwiseAbs().maxCoeff(), 0.0);
}

TEST(MiEncoder, ScoreOfZeroEmbeddingIsZero) {
  ParamStore<double> store;
  diff::Rng rng(4);
  MiEncoder<double> enc(store, "enc", small_config(), rng);
  Graph<double> g;
  auto b = enc.score(g, g.constant(Matrix<double>::Zero(3, 6)));
  EXPECT_EQ(b.value().cwiseAbs().maxCoeff(), 0.0);
}

TEST(MiEncoder, GateComponentsBounded) {
  ParamStore<double> store;
  diff::Rng rng(4);
  MiEncoder<double> enc(store, "enc", small_config(), rng);
  std::mt19937_64 r(8);
  sparsectl::testing::randomize(store, r, 1.0);
  Graph<double> g;
  auto h = g.constant(sparsectl::testing::random_matrix(20, 6, r, 1.0));
  auto gate = diff::mul(diff::tanh(diff::matmul_nt(h, g.param(*enc.Q))),
                        diff::sigmoid(diff::matmul_nt(h, g.param(*enc.K))));
  EXPECT_LT(gate.value().cwiseAbs().maxCoeff(), 1.0);
}

TEST(MiEncoder, ScoreGradientCheck) {
  for (int seed = 0; seed < 20; ++seed) {
    ParamStore<double> store;
    diff::Rng rng(static_cast<std::uint64_t>(seed));
    MiEncoder<double> enc(store, "enc", small_config(), rng);
    std::mt19937_64 r(static_cast<std::uint64_t>(seed) + 100);
    sparsectl::testing::randomize(store, r);
    const auto point = sparsectl::testing::random_matrix(1, 6, r);
    auto by_h = diff::grad_check(
        [&](Graph<double>& g, diff::Var<double> h) { return diff::sum(enc.score(g, h)); }, point);
    EXPECT_LT(by_h.max_rel_error, 1e-5) << "seed " << seed;
    auto by_params = diff::grad_check_params(
        [&](Graph<double>& g) { return diff::sum(enc.score(g, g.constant(point))); }, store);
    EXPECT_LT(by_params.max_rel_error, 1e-5) << "seed " << seed;
  }
}

TEST(MiEncoder, AggregateClosedForms) {
  ParamStore<double> store;
  diff::Rng rng(4);
  MiEncoder<double> enc(store, "enc", small_config(), rng);
  std::mt19937_64 r(2);
  Graph<double> g;

  auto v1 = g.constant(sparsectl::testing::random_matrix(1, 4, r));
  auto [z1, a1] = enc.aggregate(g.constant(Matrix<double>::Constant(1, 1, 0.3)), v1);
  EXPECT_DOUBLE_EQ(a1.value()(0, 0), 1.0);
  EXPECT_LT((z1.value() - v1.value()).cwiseAbs().maxCoeff(), 1e-15);

  auto v4 = g.constant(sparsectl::testing::random_matrix(4, 4, r));
  auto [z4, a4] = enc.aggregate(g.constant(Matrix<double>::Constant(4, 1, -1.2)), v4);
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(a4.value()(k, 0), 0.25, 1e-15);
  EXPECT_LT((z4.value() - v4.value().colwise().mean()).cwiseAbs().maxCoeff(), 1e-15);

  Matrix<double> s(2, 1);
  s << 0.0, std::log(3.0);
  auto [z2, a2] = enc.aggregate(g.constant(s), g.constant(sparsectl::testing::random_matrix(2, 4, r)));
  EXPECT_NEAR(a2.value()(0, 0), 0.25, 1e-15);
  EXPECT_NEAR(a2.value()(1, 0), 0.75, 1e-15);
}

class MiEncoderModes : public ::testing::TestWithParam<bool> {};

TEST_P(MiEncoderModes, MatchesLoopReference) {
  for (int seed = 0; seed < 10; ++seed) {
    ParamStore<double> store;
    diff::Rng rng(static_cast<std::uint64_t>(seed));
    MiEncoder<double> enc(store, "enc", small_config(GetParam()), rng);
    std::mt19937_64 r(static_cast<std::uint64_t>(seed) * 7 + 1);
    for (std::size_t k : {0u, 1u, 5u, 18u}) {
      const auto ds = random_bag(6, k, r);
      Graph<double> g;
      auto out = enc.encode(g, ds, 6);
      const auto ref = reference_encode(enc, ds);
      for (Index d = 0; d < 3; ++d) {
        EXPECT_NEAR(out.mu.value()(0, d), ref.mu[static_cast<std::size_t>(d)], 1e-12);
        EXPECT_NEAR(out.logvar.value()(0, d), ref.logvar[static_cast<std::size_t>(d)], 1e-12);
      }
      if (!GetParam() && k > 0) {
        for (std::size_t i = 0; i < k; ++i) EXPECT_NEAR(out.attention[0].value()(static_cast<Index>(i), 0), ref.weights[i], 1e-12);
      }
    }
  }
}

TEST_P(MiEncoderModes, PermutationInvariant) {
  ParamStore<double> store;
  diff::Rng rng(11);
  MiEncoder<double> enc(store, "enc", small_config(GetParam()), rng);
  std::mt19937_64 r(12);
  for (int trial = 0; trial < 20; ++trial) {
    auto vals = random_bag(8, 1 + static_cast<std::size_t>(trial), r).values();
    Graph<double> g;
    auto base = enc.encode(g, DrivingSet(vals), 8);
    std::shuffle(vals.begin(), vals.end(), r);
    Graph<double> g2;
    auto perm = enc.encode(g2, DrivingSet(vals), 8);
    EXPECT_LT((base.mu.value() - perm.mu.value()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((base.logvar.value() - perm.logvar.value()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST_P(MiEncoderModes, AttentionNormalised) {
  ParamStore<double> store;
  diff::Rng rng(13);
  MiEncoder<double> enc(store, "enc", small_config(GetParam()), rng);
  std::mt19937_64 r(14);
  sparsectl::testing::randomize(store, r, 2.0);
  for (std::size_t k = 1; k <= 24; ++k) {
    Graph<double> g;
    auto out = enc.encode(g, random_bag(8, k, r), 8);
    const auto& a = out.attention[0].value();
    EXPECT_EQ(a.cols(), GetParam() ? 4 : 1);
    for (Index c = 0; c < a.cols(); ++c) EXPECT_NEAR(a.col(c).sum(), 1.0, 1e-9);
    EXPECT_GE(a.minCoeff(), 0.0);
  }
}

TEST_P(MiEncoderModes, EndToEndGradientCheck) {
  for (int seed = 0; seed < 20; ++seed) {
    ParamStore<double> store;
    diff::Rng rng(static_cast<std::uint64_t>(seed));
    MiEncoder<double> enc(store, "enc", small_config(GetParam()), rng);
    std::mt19937_64 r(static_cast<std::uint64_t>(seed) + 50);
    const auto ds = random_bag(5, 1 + static_cast<std::size_t>(seed % 7), r);
    const auto res = diff::grad_check_params(
        [&](Graph<double>& g) {
          auto out = enc.encode(g, ds, 5);
          return diff::add(diff::sum(diff::square(out.mu)), diff::sum(diff::exp(out.logvar)));
        },
        store);
    EXPECT_LT(res.max_rel_error, 1e-5) << "seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(ScoreShape, MiEncoderModes, ::testing::Values(false, true),
                         [](const auto& info) { return info.param ? "PerDimension" : "Scalar"; });

TEST(MiEncoder, EmptyBagGivesSharedLearnedLatent) {
  ParamStore<double> store;
  diff::Rng rng(21);
  MiEncoder<double> enc(store, "enc", small_config(), rng);
  Graph<double> g;
  auto a = enc.encode(g, DrivingSet{}, 3);
  auto b = enc.encode(g, DrivingSet{}, 17);
  EXPECT_EQ(a.mu.value(), b.mu.value());
  EXPECT_EQ(a.summary.value(), enc.empty->value);
  EXPECT_TRUE(a.order[0].empty());
}

TEST(MiEncoder, AddingOneValueChangesLatent) {
  ParamStore<double> store;
  diff::Rng rng(22);
  MiEncoder<double> enc(store, "enc", small_config(), rng);
  std::mt19937_64 r(23);
  const Matrix<double> paf = sparsectl::testing::random_matrix(6, 3, r);
  const auto full = full_driving_set(paf).values();
  for (std::size_t k = 0; k + 1 <= full.size(); ++k) {
    Graph<double> g;
    auto a = enc.encode(g, DrivingSet({full.begin(), full.begin() + static_cast<long>(k)}), 6);
    auto b = enc.encode(g, DrivingSet({full.begin(), full.begin() + static_cast<long>(k + 1)}), 6);
    EXPECT_GT((a.mu.value() - b.mu.value()).cwiseAbs().maxCoeff(), 1e-9) << "K=" << k;
  }
}

TEST(MiEncoder, AnyCardinalityUpToThreeT) {
  ParamStore<double> store;
  diff::Rng rng(24);
  MiEncoder<double> enc(store, "enc", small_config(), rng);
  const auto before = store.count();
  std::mt19937_64 r(25);
  for (std::size_t k = 0; k <= 30; ++k) {
    Graph<double> g;
    auto out = enc.encode(g, random_bag(10, k, r), 10);
    EXPECT_TRUE(out.mu.value().allFinite());
    EXPECT_TRUE(out.logvar.value().array().exp().allFinite());
    EXPECT_GT((0.5 * out.logvar.value().array()).exp().minCoeff(), 0.0);
  }
  EXPECT_EQ(store.count(), before);
}

TEST(MiEncoder, InvalidBagsRejected) {
  ParamStore<double> store;
  diff::Rng rng(26);
  MiEncoder<double> enc(store, "enc", small_config(), rng);
  Graph<double> g;
  DrivingSet dup;
  dup.add(1, Stream::energy, 0.1);
  dup.add(0, Stream::f0, 0.2);
  dup.add(1, Stream::energy, 0.3);
  EXPECT_THROW(enc.encode(g, dup, 4), InvalidInput);
  DrivingSet past_end;
  past_end.add(4, Stream::f0, 0.0);
  EXPECT_THROW(enc.encode(g, past_end, 4), InvalidInput);
  DrivingSet non_finite;
  non_finite.add(0, Stream::f0, std::nan(""));
  EXPECT_THROW(enc.encode(g, non_finite, 4), InvalidInput);
  std::mt19937_64 r(1);
  Matrix<double> paf = sparsectl::testing::random_matrix(2, 3, r);
  auto too_many = full_driving_set(paf);
  too_many.add(0, Stream::f0, 1.0);
  EXPECT_THROW(too_many.validate(2), InvalidInput);
}

TEST(MiEncoder, BatchedEncodingMatchesSingleBags) {
  ParamStore<double> store;
  diff::Rng rng(27);
  MiEncoder<double> enc(store, "enc", small_config(), rng);
  std::mt19937_64 r(28);
  const auto a = random_bag(5, 4, r), b = DrivingSet{}, c = random_bag(9, 11, r);
  Graph<double> g;
  auto batch = enc.encode(g, {&a, &b, &c}, {5, 3, 9});
  const std::vector<std::pair<const DrivingSet*, int>> singles{{&a, 5}, {&b, 3}, {&c, 9}};
  for (std::size_t i = 0; i < singles.size(); ++i) {
    auto one = enc.encode(g, *singles[i].first, singles[i].second);
    EXPECT_LT((batch.mu.value().row(static_cast<Index>(i)) - one.mu.value()).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(MiEncoder, RequestOrderWeights) {
  ParamStore<double> store;
  diff::Rng rng(29);
  MiEncoder<double> enc(store, "enc", small_config(), rng);
  std::mt19937_64 r(30);
  sparsectl::testing::randomize(store, r, 2.0);
  DrivingSet ds;
  ds.add(3, Stream::duration, 1.5);
  ds.add(0, Stream::f0, -0.5);
  ds.add(3, Stream::f0, 0.8);
  Graph<double> g;
  auto out = enc.encode(g, ds, 5);
  const auto w = MiEncoder<double>::request_order_weights(out, 0);
  const auto& a = out.attention[0].value();  // canonical: (0,f0), (3,f0), (3,dur)
  EXPECT_DOUBLE_EQ(w[0], a(2, 0));
  EXPECT_DOUBLE_EQ(w[1], a(0, 0));
  EXPECT_DOUBLE_EQ(w[2], a(1, 0));
}
