#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "sparsectl/diff/grad_check.hpp"
#include "sparsectl/diff/layers.hpp"
#include "sparsectl/diff/ops.hpp"
#include "sparsectl/diff/optimizer.hpp"
#include "test_util.hpp"

namespace sparsectl {
namespace {

using diff::Graph;
using diff::Index;
using diff::Matrix;
using diff::Var;
using M = Matrix<double>;
using testing::random_matrix;

M row(std::initializer_list<double> v) {
  M m(1, static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

TEST(Primitives, SoftmaxClosedForm) {
  Graph<double> g;
  auto y = diff::softmax(g.constant(row({0.0, std::log(3.0)})), 1);
  EXPECT_NEAR(y.value()(0, 0), 0.25, 1e-12);
  EXPECT_NEAR(y.value()(0, 1), 0.75, 1e-12);
}

TEST(Primitives, SoftmaxIsDistributionPerSlice) {
  std::mt19937_64 rng(3);
  for (int axis : {0, 1}) {
    Graph<double> g;
    auto y = diff::softmax(g.constant(random_matrix(7, 5, rng, 30.0)), axis);
    EXPECT_GE(y.value().minCoeff(), 0.0);
    if (axis == 0) {
      for (Index c = 0; c < 5; ++c) EXPECT_NEAR(y.value().col(c).sum(), 1.0, 1e-9);
    } else {
      for (Index r = 0; r < 7; ++r) EXPECT_NEAR(y.value().row(r).sum(), 1.0, 1e-9);
    }
  }
}

TEST(Primitives, TanhSigmoidAtZero) {
  Graph<double> g;
  auto z = g.constant(M::Zero(1, 1));
  EXPECT_EQ(diff::tanh(z).scalar(), 0.0);
  EXPECT_EQ(diff::sigmoid(z).scalar(), 0.5);
}

TEST(Primitives, IdentityMatmul) {
  std::mt19937_64 rng(1);
  Graph<double> g;
  M x = random_matrix(3, 1, rng);
  auto y = diff::matmul(g.constant(M::Identity(3, 3)), g.constant(x));
  EXPECT_EQ(y.value(), x);
}

TEST(Primitives, ShapeMismatchNamesBothShapes) {
  Graph<double> g;
  try {
    diff::add(g.constant(M::Zero(2, 3)), g.constant(M::Zero(3, 2)));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("[2 x 3]"), std::string::npos);
    EXPECT_NE(what.find("[3 x 2]"), std::string::npos);
  }
  EXPECT_THROW(diff::matmul(g.constant(M::Zero(2, 3)), g.constant(M::Zero(2, 3))), ShapeError);
}

TEST(Backward, SumGivesOnes) {
  Graph<double> g;
  auto x = g.variable(row({1, -2, 3, 0.5, 7}));
  g.backward(diff::sum(x));
  EXPECT_EQ(x.grad(), M::Ones(1, 5));
}

TEST(Backward, MseAgainstZero) {
  Graph<double> g;
  auto x = g.variable(row({2.0}));
  g.backward(diff::mse(x, g.constant(row({0.0}))));
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 4.0);
}

TEST(Backward, TanhSlopeAtZero) {
  Graph<double> g;
  auto x = g.variable(row({0.0}));
  const double w = 1.75;
  g.backward(diff::scale(diff::tanh(x), w));
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), w);
}

TEST(Backward, RejectsNonScalarLoss) {
  Graph<double> g;
  auto x = g.variable(M::Ones(2, 2));
  EXPECT_THROW(g.backward(diff::tanh(x)), ShapeError);
}

TEST(Backward, GradsAreZeroUntilBackwardAndRunOnce) {
  diff::ParamStore<double> store;
  auto& p = store.add("w", 2, 2);
  p.value.setOnes();
  Graph<double> g(diff::Mode::train);
  auto y = diff::sum(diff::square(g.param(p)));
  EXPECT_EQ(p.grad, M::Zero(2, 2));
  g.backward(y);
  EXPECT_EQ(p.grad, M::Constant(2, 2, 2.0));
  EXPECT_THROW(g.backward(y), std::logic_error);
}

// Every primitive, checked against central differences over 20 seeds.
TEST(GradCheck, PrimitivesAcrossSeeds) {
  using Fn = std::function<Var<double>(Graph<double>&, Var<double>)>;
  std::vector<std::pair<const char*, Fn>> cases;
  std::mt19937_64 crng(99);
  const M c34 = random_matrix(3, 4, crng);
  const M c43 = random_matrix(4, 3, crng);
  const M c14 = random_matrix(1, 4, crng);
  cases.emplace_back("matmul", [&](auto& g, auto x) { return diff::sum(diff::tanh(diff::matmul(x, g.constant(c43)))); });
  cases.emplace_back("matmul_nt", [&](auto& g, auto x) { return diff::sum(diff::tanh(diff::matmul_nt(x, g.constant(c34)))); });
  cases.emplace_back("matmul_tn", [&](auto& g, auto x) { return diff::sum(diff::tanh(diff::matmul_tn(x, g.constant(c34)))); });
  cases.emplace_back("affine", [&](auto& g, auto x) {
    return diff::sum(diff::sigmoid(diff::affine(x, g.constant(c34), g.constant(row({0.1, -0.2, 0.3})))));
  });
  cases.emplace_back("add_sub_mul", [&](auto& g, auto x) {
    auto c = g.constant(c34);
    return diff::sum(diff::mul(diff::sub(x, c), diff::add(x, x)));
  });
  cases.emplace_back("add_row", [&](auto& g, auto x) { return diff::sum(diff::tanh(diff::add_row(x, g.constant(c14)))); });
  cases.emplace_back("relu", [&](auto&, auto x) { return diff::sum(diff::square(diff::relu(x))); });
  cases.emplace_back("exp", [&](auto&, auto x) { return diff::mean(diff::exp(diff::scale(x, 0.3))); });
  cases.emplace_back("softmax_rows", [&](auto& g, auto x) {
    return diff::sum(diff::mul(diff::softmax(x, 1), g.constant(c34)));
  });
  cases.emplace_back("softmax_cols", [&](auto& g, auto x) {
    return diff::sum(diff::mul(diff::softmax(x, 0), g.constant(c34)));
  });
  cases.emplace_back("concat_slice", [&](auto& g, auto x) {
    auto c = diff::concat_cols<double>({x, g.constant(c34), x});
    auto r = diff::concat_rows<double>({diff::slice_cols(c, 2, 5), g.constant(M::Ones(1, 5))});
    return diff::sum(diff::tanh(diff::slice_rows(r, 0, 3)));
  });
  cases.emplace_back("gather_repeat", [&](auto&, auto x) {
    auto gth = diff::gather_rows(x, {2, 0, 2, 1});
    auto rep = diff::repeat_segments(gth, {1, 3, 2, 1});
    return diff::sum(diff::tanh(diff::sum_rows(rep)));
  });
  cases.emplace_back("mse", [&](auto& g, auto x) { return diff::mse(diff::tanh(x), g.constant(c34)); });

  for (const auto& [name, fn] : cases) {
    for (int seed = 0; seed < 20; ++seed) {
      std::mt19937_64 rng(static_cast<std::uint64_t>(seed) + 1000);
      const auto r = diff::grad_check(fn, random_matrix(3, 4, rng), 1e-6);
      EXPECT_LT(r.max_rel_error, 1e-5) << name << " seed " << seed;
    }
  }
}

TEST(GradCheck, MseOfLinearMap) {
  std::mt19937_64 rng(5);
  const M w = random_matrix(4, 6, rng);
  const M y = random_matrix(4, 1, rng);
  auto f = [&](Graph<double>& g, Var<double> x) {
    return diff::mse(diff::matmul(g.constant(w), x), g.constant(y));
  };
  EXPECT_LT(diff::grad_check(f, random_matrix(6, 1, rng), 1e-6).max_rel_error, 1e-6);
}

TEST(GradCheck, GatedAttentionScore) {
  std::mt19937_64 rng(6);
  const M q = random_matrix(5, 4, rng);
  const M k = random_matrix(5, 4, rng);
  const M w = random_matrix(1, 5, rng);
  auto f = [&](Graph<double>& g, Var<double> h) {
    auto gate = diff::mul(diff::tanh(diff::matmul_nt(h, g.constant(q))),
                          diff::sigmoid(diff::matmul_nt(h, g.constant(k))));
    return diff::matmul_nt(gate, g.constant(w));
  };
  EXPECT_LT(diff::grad_check(f, random_matrix(1, 4, rng), 1e-6).max_rel_error, 1e-5);
}

// A tanh whose backward uses 1 - y instead of 1 - y^2.
Var<double> broken_tanh(Var<double> a) {
  auto& g = a.graph();
  M out = a.value().array().tanh();
  return g.emit(std::move(out), "broken_tanh", {a}, [a](Graph<double>& g, std::size_t self) {
    g.grad(a.id()).array() += g.grad(self).array() * (1.0 - g.value(self).array());
  });
}

TEST(GradCheck, DetectsWrongGradient) {
  std::mt19937_64 rng(7);
  auto f = [](Graph<double>&, Var<double> x) { return diff::sum(broken_tanh(x)); };
  EXPECT_GT(diff::grad_check(f, random_matrix(2, 3, rng), 1e-6).max_rel_error, 1e-2);
}

TEST(GradCheck, RejectsBadEpsAndNonFinite) {
  auto f = [](Graph<double>&, Var<double> x) { return diff::sum(diff::exp(x)); };
  EXPECT_THROW(diff::grad_check(f, M::Zero(1, 2), 1e-1), InvalidInput);
  try {
    diff::grad_check(f, row({0.0, 1000.0}), 1e-6);
    FAIL() << "expected non-finite report";
  } catch (const InvalidInput& e) {
    EXPECT_NE(std::string(e.what()).find("coordinate"), std::string::npos);
  }
}

// ---------------------------------------------------------------------------
// Layers

struct LayerFixture {
  diff::ParamStore<double> store;
  diff::Rng rng{11};
};

TEST(Layers, ConvBatchNormGradCheckAcrossSeeds) {
  for (int seed = 0; seed < 20; ++seed) {
    LayerFixture fx;
    fx.rng.seed(static_cast<std::uint64_t>(seed));
    diff::ConvBnRelu<double> conv(fx.store, "conv", 3, 5, fx.rng);
    testing::randomize(fx.store, fx.rng);
    const std::vector<Index> lengths{4, 2, 5};
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    const M proj = random_matrix(11, 3, rng);
    auto f = [&](Graph<double>& g, Var<double> x) {
      auto y = conv(g, x, lengths);
      return diff::sum(diff::mul(y, g.constant(proj)));
    };
    EXPECT_LT(diff::grad_check(f, random_matrix(11, 3, rng), 1e-6).max_rel_error, 1e-5) << seed;
    auto fp = [&](Graph<double>& g) {
      Graph<double>& gg = g;
      auto x = gg.constant(proj);
      return diff::sum(diff::mul(conv(gg, x, lengths), gg.constant(proj)));
    };
    EXPECT_LT(diff::grad_check_params(fp, fx.store, 1e-6).max_rel_error, 1e-5) << seed;
  }
}

TEST(Layers, BatchNormEvalUsesRunningStats) {
  LayerFixture fx;
  diff::ConvBnRelu<double> conv(fx.store, "conv", 2, 3, fx.rng);
  fx.store.at("conv/bn_running_mean").value = row({0.5, -0.5});
  fx.store.at("conv/bn_running_var").value = row({4.0, 0.25});
  Graph<double> g(diff::Mode::eval);
  auto x = g.constant(M::Ones(1, 2));
  // Batch of one row: running statistics only, so the output is finite and
  // does not collapse to beta as batch statistics would.
  auto y = diff::batch_norm(x, g.constant(M::Ones(1, 2)), g.constant(M::Zero(1, 2)),
                            fx.store.at("conv/bn_running_mean"), fx.store.at("conv/bn_running_var"));
  EXPECT_NEAR(y.value()(0, 0), 0.5 / std::sqrt(4.0 + 1e-5), 1e-12);
  EXPECT_NEAR(y.value()(0, 1), 1.5 / std::sqrt(0.25 + 1e-5), 1e-12);
}

TEST(Layers, BatchNormRunningStatsMoveWithMomentum) {
  diff::ParamStore<double> store;
  auto& rm = store.add("rm", 1, 1, false);
  auto& rv = store.add("rv", 1, 1, false);
  rv.value.setOnes();
  Graph<double> g(diff::Mode::train);
  M x(2, 1);
  x << 1.0, 3.0;
  diff::batch_norm(g.constant(x), g.constant(M::Ones(1, 1)), g.constant(M::Zero(1, 1)), rm, rv);
  EXPECT_NEAR(rm.value(0, 0), 0.1 * 2.0, 1e-12);
  EXPECT_NEAR(rv.value(0, 0), 0.9 + 0.1 * 2.0, 1e-12);  // unbiased batch variance = 2
}

class RecurrentTest : public ::testing::TestWithParam<diff::CellKind> {};

TEST_P(RecurrentTest, GradCheckAcrossSeeds) {
  for (int seed = 0; seed < 20; ++seed) {
    LayerFixture fx;
    fx.rng.seed(static_cast<std::uint64_t>(seed) + 50);
    diff::Recurrent<double> rnn(fx.store, "rnn", GetParam(), diff::Direction::bidirectional, 3, 4, fx.rng);
    testing::randomize(fx.store, fx.rng);
    const std::vector<Index> lengths{3, 1, 4};
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    const M x0 = random_matrix(8, 3, rng);
    auto f = [&](Graph<double>& g, Var<double> x) { return diff::sum(rnn(g, x, lengths)); };
    EXPECT_LT(diff::grad_check(f, x0, 1e-6).max_rel_error, 1e-5) << seed;
    auto fp = [&](Graph<double>& g) { return diff::sum(rnn(g, g.constant(x0), lengths)); };
    EXPECT_LT(diff::grad_check_params(fp, fx.store, 1e-6).max_rel_error, 1e-5) << seed;
  }
}

TEST_P(RecurrentTest, SingleStepDirectionsAgree) {
  LayerFixture fx;
  diff::Recurrent<double> rnn(fx.store, "rnn", GetParam(), diff::Direction::bidirectional, 3, 4, fx.rng);
  for (const char* w : {"w_ih", "w_hh", "b_ih"}) {
    fx.store.at(std::string("rnn/bwd/") + w).value = fx.store.at(std::string("rnn/fwd/") + w).value;
  }
  if (GetParam() == diff::CellKind::gru) fx.store.at("rnn/bwd/b_hh").value = fx.store.at("rnn/fwd/b_hh").value;
  std::mt19937_64 rng(2);
  Graph<double> g;
  auto y = rnn(g, g.constant(random_matrix(1, 3, rng)), {1});
  EXPECT_EQ(y.value().leftCols(4), y.value().rightCols(4));
}

TEST_P(RecurrentTest, ReversedSequenceMatchesOppositeDirection) {
  LayerFixture fx;
  diff::Recurrent<double> rnn(fx.store, "rnn", GetParam(), diff::Direction::bidirectional, 3, 4, fx.rng);
  std::mt19937_64 rng(4);
  const M x = random_matrix(6, 3, rng);
  const M xr = x.colwise().reverse();
  Graph<double> g;
  const M y = rnn(g, g.constant(x), {6}).value();
  // Reversed input through the backward weights, run forwards.
  diff::Recurrent<double> flipped = rnn;
  std::swap(flipped.fwd, flipped.bwd);
  const M yr = flipped(g, g.constant(xr), {6}).value();
  for (Index t = 0; t < 6; ++t) {
    EXPECT_EQ(y.row(t).rightCols(4), yr.row(5 - t).leftCols(4));
    EXPECT_EQ(y.row(t).leftCols(4), yr.row(5 - t).rightCols(4));
  }
}

TEST_P(RecurrentTest, RejectsEmptySequence) {
  LayerFixture fx;
  diff::Recurrent<double> rnn(fx.store, "rnn", GetParam(), diff::Direction::forward, 3, 4, fx.rng);
  Graph<double> g;
  EXPECT_THROW(rnn(g, g.constant(M::Zero(0, 3)), {0}), InvalidInput);
}

INSTANTIATE_TEST_SUITE_P(Cells, RecurrentTest,
                         ::testing::Values(diff::CellKind::lstm, diff::CellKind::gru),
                         [](const auto& info) {
                           return info.param == diff::CellKind::lstm ? "Lstm" : "Gru";
                         });

TEST(Layers, ZeroGruGivesZeros) {
  LayerFixture fx;
  diff::Recurrent<double> rnn(fx.store, "rnn", diff::CellKind::gru, diff::Direction::bidirectional, 3, 4, fx.rng);
  for (std::size_t i = 0; i < fx.store.size(); ++i) fx.store[i].value.setZero();
  std::mt19937_64 rng(8);
  Graph<double> g;
  auto y = rnn(g, g.constant(random_matrix(5, 3, rng)), {5});
  EXPECT_EQ(y.value(), M::Zero(5, 8));
}

// ---------------------------------------------------------------------------
// Shared subexpressions: compare against a path-enumeration oracle on random
// scalar DAGs. d out / d leaf = sum over all paths of the product of local
// partial derivatives.

struct ScalarNode {
  int op;  // 0 leaf, 1 add, 2 mul, 3 tanh, 4 sigmoid
  int a = -1, b = -1;
  double value = 0.0;
};

double local_partial(const std::vector<ScalarNode>& nodes, const ScalarNode& n, int input_slot) {
  switch (n.op) {
    case 1:
      return 1.0;
    case 2:
      return input_slot == 0 ? nodes[static_cast<std::size_t>(n.b)].value
                             : nodes[static_cast<std::size_t>(n.a)].value;
    case 3:
      return 1.0 - n.value * n.value;
    case 4:
      return n.value * (1.0 - n.value);
    default:
      return 0.0;
  }
}

double paths(const std::vector<ScalarNode>& nodes, int from, int to) {
  if (from == to) return 1.0;
  const auto& n = nodes[static_cast<std::size_t>(to)];
  double total = 0.0;
  if (n.a >= 0) total += local_partial(nodes, n, 0) * paths(nodes, from, n.a);
  if (n.b >= 0) {
    // mul(x, x): both slots reach the same input, each path counts once.
    total += local_partial(nodes, n, 1) * paths(nodes, from, n.b);
  }
  return total;
}

TEST(Backward, SharedSubexpressionsMatchPathEnumeration) {
  for (int seed = 0; seed < 25; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    std::uniform_int_distribution<int> n_nodes(8, 30);
    const int total = n_nodes(rng);
    const int leaves = 3;
    std::vector<ScalarNode> nodes;
    Graph<double> g;
    std::vector<Var<double>> vars;
    std::normal_distribution<double> val(0.0, 0.8);
    for (int i = 0; i < leaves; ++i) {
      ScalarNode n{0};
      n.value = val(rng);
      nodes.push_back(n);
      vars.push_back(g.variable(M::Constant(1, 1, n.value)));
    }
    for (int i = leaves; i < total; ++i) {
      std::uniform_int_distribution<int> pick(0, i - 1), opd(1, 4);
      ScalarNode n{opd(rng)};
      n.a = pick(rng);
      Var<double> v;
      const auto& va = vars[static_cast<std::size_t>(n.a)];
      if (n.op <= 2) {
        n.b = pick(rng);
        const auto& vb = vars[static_cast<std::size_t>(n.b)];
        v = n.op == 1 ? diff::add(va, vb) : diff::mul(va, vb);
      } else {
        v = n.op == 3 ? diff::tanh(va) : diff::sigmoid(va);
      }
      n.value = v.scalar();
      nodes.push_back(n);
      vars.push_back(v);
    }
    g.backward(vars.back());
    for (int leaf = 0; leaf < leaves; ++leaf) {
      const double oracle = paths(nodes, leaf, total - 1);
      EXPECT_NEAR(vars[static_cast<std::size_t>(leaf)].grad()(0, 0), oracle,
                  1e-10 * std::max(1.0, std::abs(oracle)))
          << "seed " << seed << " leaf " << leaf;
    }
  }
}

// ---------------------------------------------------------------------------
// Optimizer

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  diff::ParamStore<double> store;
  auto& p = store.add("w", 2, 3);
  p.value.setConstant(0.7);
  diff::Adam<double> opt(store);
  EXPECT_TRUE(opt.step());
  EXPECT_EQ(p.value, M::Constant(2, 3, 0.7));
}

TEST(Adam, FirstStepIsLearningRateTimesSign) {
  // m1 = (1-b1) g, v1 = (1-b2) g^2; bias-corrected m/sqrt(v) = g/|g|.
  for (double grad : {3.0, -0.02}) {
    diff::ParamStore<double> store;
    auto& p = store.add("w", 1, 1);
    p.value(0, 0) = 1.0;
    diff::Adam<double> opt(store, {.lr = 1e-3});
    p.grad(0, 0) = grad;
    opt.step();
    const double expected = 1.0 - 1e-3 * grad / (std::abs(grad) + 1e-8);
    EXPECT_NEAR(p.value(0, 0), expected, 1e-12);
  }
}

TEST(Adam, StepDecreasesQuadratic) {
  diff::ParamStore<double> store;
  auto& p = store.add("w", 1, 1);
  p.value(0, 0) = 1.0;
  diff::Adam<double> opt(store);
  auto loss = [&] {
    Graph<double> g(diff::Mode::train);
    auto y = diff::sum(diff::square(g.param(p)));
    g.backward(y);
    return y.scalar();
  };
  const double before = loss();
  opt.step();
  store.zero_grad();
  EXPECT_LT(loss(), before);
}

TEST(Adam, NonFiniteGradientSkipsStep) {
  diff::ParamStore<double> store;
  auto& p = store.add("w", 1, 2);
  p.value.setOnes();
  diff::Adam<double> opt(store);
  p.grad(0, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(opt.step());
  EXPECT_EQ(opt.skipped(), 1u);
  EXPECT_EQ(p.value, M::Ones(1, 2));
  EXPECT_EQ(p.grad, M::Zero(1, 2));
}

TEST(Adam, ClipsGlobalNorm) {
  diff::ParamStore<double> store;
  auto& p = store.add("w", 1, 1);
  diff::Adam<double> opt(store, {.clip_norm = 5.0});
  p.grad(0, 0) = 100.0;
  opt.step();
  EXPECT_DOUBLE_EQ(opt.last_grad_norm(), 100.0);
}

}  // namespace
}  // namespace sparsectl
