#include "g2p/layers.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace g2p;
namespace gt = g2p::testing;

using Tf = Tensor<float>;
using Td = Tensor<double>;

namespace {

LstmCellParams<double> cell_from(const std::vector<double>& wx,
                                 const std::vector<double>& wh,
                                 const std::vector<double>& bias, int in_dim,
                                 int u) {
  LstmCellParams<double> p;
  p.w_x = Td::leaf({4 * u, in_dim}, wx, true);
  p.w_h = Td::leaf({4 * u, u}, wh, true);
  p.bias = Td::leaf({4 * u}, bias, true);
  return p;
}

}  // namespace

TEST(Embed, SingleLookup) {
  Tape<float> tp;
  RngStream rng(1);
  auto emb = init_embedding<float>(10, 4, rng);
  auto out = embed(tp, {0}, emb);
  ASSERT_EQ(out.shape(), (std::vector<int>{1, 4}));
  for (int i = 0; i < 4; ++i)
    EXPECT_FLOAT_EQ(out.data()[i], emb.table.data()[i]);
}

// A row selected twice receives the sum of both positions' upstream grads.
TEST(Embed, RepeatedIdAccumulatesGradient) {
  Tape<float> tp;
  RngStream rng(2);
  auto emb = init_embedding<float>(5, 3, rng);
  auto out = embed(tp, {2, 2}, emb);
  auto w = Tf::leaf({2, 3}, {1, 1, 1, 2, 2, 2});
  tp.backward(tp.sum(tp.mul(out, w)));
  for (int i = 0; i < 3; ++i)
    EXPECT_FLOAT_EQ(emb.table.grad()[2 * 3 + i], 3.0f);
}

// one-hot(i) x table == embed([i], table)
TEST(Embed, OneHotMatmulOracle) {
  Tape<double> tp;
  RngStream rng(3);
  auto emb = init_embedding<double>(7, 5, rng);
  for (int i : {0, 3, 6}) {
    std::vector<double> onehot(7, 0.0);
    onehot[static_cast<std::size_t>(i)] = 1.0;
    auto via_matmul = tp.matmul(Td::leaf({1, 7}, onehot), emb.table);
    auto via_embed = embed(tp, {i}, emb);
    EXPECT_EQ(via_matmul.data(), via_embed.data());
  }
}

TEST(Embed, OutOfRangeIdIsVocabularyError) {
  Tape<float> tp;
  RngStream rng(4);
  auto emb = init_embedding<float>(5, 3, rng);
  try {
    embed(tp, {5}, emb);
    FAIL() << "expected vocabulary error";
  } catch (const G2pError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::vocabulary);
  }
}

TEST(LstmStep, ZeroParamsGiveZeroState) {
  Tape<float> tp;
  LstmCellParams<float> p{Tf::zeros({8, 3}), Tf::zeros({8, 2}), Tf::zeros({8})};
  auto out = lstm_step(tp, Tf::leaf({3}, {1, -2, 3}), zero_state<float>(2), p);
  EXPECT_EQ(out.h.data(), (std::vector<float>{0, 0}));
  EXPECT_EQ(out.c.data(), (std::vector<float>{0, 0}));
}

// Forget gate saturated at 1, input gate at 0: the cell is pure memory.
TEST(LstmStep, SaturatedForgetKeepsCell) {
  Tape<float> tp;
  int u = 3;
  std::vector<float> bias(4 * u, 0.0f);
  for (int j = 0; j < u; ++j) {
    bias[static_cast<std::size_t>(j)] = -40.0f;      // input gate -> 0
    bias[static_cast<std::size_t>(u + j)] = 40.0f;   // forget gate -> 1
  }
  LstmCellParams<float> p{Tf::zeros({4 * u, 2}), Tf::zeros({4 * u, u}),
                          Tf::leaf({4 * u}, bias)};
  LstmState<float> prev{Tf::zeros({u}), Tf::leaf({u}, {0.5f, -0.25f, 0.125f})};
  auto out = lstm_step(tp, Tf::leaf({2}, {1, 1}), prev, p);
  EXPECT_EQ(out.c.data(), prev.c.data());
}

TEST(LstmStep, MatchesScalarOracle) {
  RngStream rng(5);
  int u = 4, in_dim = 3;
  auto rnd = [&](int n) {
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = rng.uniform(-0.8, 0.8);
    return v;
  };
  auto wx = rnd(4 * u * in_dim), wh = rnd(4 * u * u), bias = rnd(4 * u);
  auto x = rnd(in_dim), h0 = rnd(u), c0 = rnd(u);

  Tape<double> tp;
  auto p = cell_from(wx, wh, bias, in_dim, u);
  LstmState<double> prev{Td::leaf({u}, h0), Td::leaf({u}, c0)};
  auto out = lstm_step(tp, Td::leaf({in_dim}, x), prev, p);

  auto oracle = gt::scalar_lstm_step(wx, wh, bias, x, h0, c0, in_dim, u);
  for (int j = 0; j < u; ++j) {
    EXPECT_NEAR(out.h.data()[j], oracle.h[j], 1e-12);
    EXPECT_NEAR(out.c.data()[j], oracle.c[j], 1e-12);
  }
}

TEST(LstmStep, ShapeMismatchIsDimensionError) {
  Tape<float> tp;
  RngStream rng(6);
  auto p = init_lstm_cell<float>(3, 2, rng);
  EXPECT_THROW(lstm_step(tp, Tf::zeros({5}), zero_state<float>(2), p), G2pError);
}

TEST(LstmStep, OutputsBoundedByOne) {
  Tape<float> tp;
  RngStream rng(7);
  auto p = init_lstm_cell<float>(4, 6, rng);
  // push with large inputs over several steps
  auto st = zero_state<float>(6);
  for (int t = 0; t < 10; ++t) {
    std::vector<float> x(4);
    for (auto& v : x) v = static_cast<float>(rng.uniform(-50, 50));
    st = lstm_step(tp, Tf::leaf({4}, x), st, p);
    for (float h : st.h.data()) EXPECT_LT(std::abs(h), 1.0f);
  }
}

TEST(RunStack, DropoutFlagIrrelevantAtZeroProbability) {
  RngStream rng(8);
  auto stack = init_stacked_lstm<float>(2, 3, 4, 0.0, rng);
  std::vector<float> in(5 * 3);
  for (auto& v : in) v = static_cast<float>(rng.uniform(-1, 1));
  auto inputs = Tf::leaf({5, 3}, in);
  RngStream drop_rng(9);
  Tape<float> tp1, tp2;
  auto a = run_stack(tp1, inputs, stack,
                     {zero_state<float>(4), zero_state<float>(4)}, false, nullptr);
  auto b = run_stack(tp2, inputs, stack,
                     {zero_state<float>(4), zero_state<float>(4)}, true, &drop_rng);
  EXPECT_EQ(a.outputs.data(), b.outputs.data());
}

TEST(RunStack, OneLayerEqualsRepeatedSteps) {
  RngStream rng(10);
  auto stack = init_stacked_lstm<float>(1, 3, 4, 0.0, rng);
  std::vector<float> in(6 * 3);
  for (auto& v : in) v = static_cast<float>(rng.uniform(-1, 1));
  auto inputs = Tf::leaf({6, 3}, in);

  Tape<float> tp;
  auto run = run_stack(tp, inputs, stack, {zero_state<float>(4)}, false, nullptr);

  auto st = zero_state<float>(4);
  for (int t = 0; t < 6; ++t) {
    st = lstm_step(tp, tp.row(inputs, t), st, stack.layers[0]);
    for (int j = 0; j < 4; ++j)
      EXPECT_FLOAT_EQ(run.outputs.data()[static_cast<std::size_t>(t) * 4 + j],
                      st.h.data()[j]);
  }
  EXPECT_EQ(run.finals[0].h.data(), st.h.data());
  EXPECT_EQ(run.finals[0].c.data(), st.c.data());
}

// Two stacked layers with p_drop = 0 equal two independent single-layer runs
// composed by hand.
TEST(RunStack, TwoLayerCompositionOracle) {
  RngStream rng(11);
  auto stack = init_stacked_lstm<double>(2, 3, 4, 0.0, rng);
  std::vector<double> in(5 * 3);
  for (auto& v : in) v = rng.uniform(-1, 1);
  auto inputs = Td::leaf({5, 3}, in);

  Tape<double> tp;
  auto run = run_stack(tp, inputs, stack,
                       {zero_state<double>(4), zero_state<double>(4)}, false,
                       nullptr);

  StackedLstm<double> first{{stack.layers[0]}, 0.0};
  StackedLstm<double> second{{stack.layers[1]}, 0.0};
  auto mid = run_stack(tp, inputs, first, {zero_state<double>(4)}, false, nullptr);
  auto top =
      run_stack(tp, mid.outputs, second, {zero_state<double>(4)}, false, nullptr);
  EXPECT_EQ(run.outputs.data(), top.outputs.data());
}

TEST(RunStack, OutputLengthEqualsInputLength) {
  RngStream rng(12);
  auto stack = init_stacked_lstm<float>(2, 2, 3, 0.0, rng);
  for (int steps : {1, 4, 9}) {
    Tape<float> tp;
    auto inputs = Tf::zeros({steps, 2});
    auto run = run_stack(tp, inputs, stack,
                         {zero_state<float>(3), zero_state<float>(3)}, false,
                         nullptr);
    EXPECT_EQ(run.outputs.extent(0), steps);
  }
}

TEST(RunStack, InitLengthMismatchIsContractError) {
  RngStream rng(13);
  auto stack = init_stacked_lstm<float>(2, 2, 3, 0.0, rng);
  Tape<float> tp;
  try {
    run_stack(tp, Tf::zeros({2, 2}), stack, {zero_state<float>(3)}, false,
              nullptr);
    FAIL() << "expected contract error";
  } catch (const G2pError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::contract);
  }
}

TEST(Linear, IdentityAndZero) {
  Tape<float> tp;
  auto eye = Tf::leaf({2, 2}, {1, 0, 0, 1});
  auto zero_b = Tf::zeros({2});
  auto x = Tf::leaf({2}, {3, 4});
  EXPECT_EQ(linear(tp, x, eye, zero_b).data(), x.data());

  auto w = Tf::leaf({2, 2}, {1, 2, 3, 4});
  auto b = Tf::leaf({2}, {5, 6});
  EXPECT_EQ(linear(tp, Tf::zeros({2}), w, b).data(), b.data());
}

// W=[[1,1],[2,0]], b=[1,0], x=[3,4] -> [8,6]
TEST(Linear, HandComputed) {
  Tape<float> tp;
  auto w = Tf::leaf({2, 2}, {1, 1, 2, 0});
  auto b = Tf::leaf({2}, {1, 0});
  auto y = linear(tp, Tf::leaf({2}, {3, 4}), w, b);
  EXPECT_EQ(y.data(), (std::vector<float>{8, 6}));
}

TEST(Dropout, ZeroProbabilityIsIdentity) {
  Tape<float> tp;
  RngStream rng(14);
  auto x = Tf::leaf({4}, {1, 2, 3, 4});
  auto y = dropout(tp, x, 0.0, rng);
  EXPECT_EQ(y.data(), x.data());
}

// Monte-Carlo: E[dropout(x)] ~= x over many seeded draws.
TEST(Dropout, ExpectationPreserved) {
  RngStream rng(15);
  const int draws = 10000;
  auto x = Tf::leaf({3}, {2.0f, -4.0f, 8.0f});
  std::vector<double> acc(3, 0.0);
  for (int d = 0; d < draws; ++d) {
    Tape<float> tp(false);
    auto y = dropout(tp, x, 0.3, rng);
    for (int i = 0; i < 3; ++i) acc[static_cast<std::size_t>(i)] += y.data()[i];
  }
  for (int i = 0; i < 3; ++i) {
    double mean = acc[static_cast<std::size_t>(i)] / draws;
    EXPECT_NEAR(mean, x.data()[i], std::abs(x.data()[i]) * 0.05);
  }
}

TEST(Dropout, FixedSeedReplaysIdentically) {
  auto x = Tf::leaf({16}, std::vector<float>(16, 1.0f));
  auto draw = [&]() {
    RngStream rng(99);
    Tape<float> tp(false);
    return dropout(tp, x, 0.5, rng).data();
  };
  EXPECT_EQ(draw(), draw());
}

TEST(Dropout, InvalidProbabilityIsConfigError) {
  Tape<float> tp;
  RngStream rng(16);
  auto x = Tf::zeros({2});
  try {
    dropout(tp, x, 1.0, rng);
    FAIL() << "expected config error";
  } catch (const G2pError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
  }
}

// Gradcheck through each layer type in isolation.
TEST(Layers, GradcheckEmbedding) {
  RngStream rng(17);
  auto table = gt::random_leaf({6, 3}, rng);
  EmbeddingTable<double> emb{table};
  auto res = gt::gradcheck(
      [&](Tape<double>& tp) { return tp.sum(tp.tanh(embed(tp, {1, 4, 1}, emb))); },
      {table});
  EXPECT_TRUE(res.ok) << res.max_rel_err;
}

TEST(Layers, GradcheckLstmStep) {
  RngStream rng(18);
  int u = 4, in_dim = 3;
  auto wx = gt::random_leaf({4 * u, in_dim}, rng);
  auto wh = gt::random_leaf({4 * u, u}, rng);
  auto bias = gt::random_leaf({4 * u}, rng);
  auto x = gt::random_leaf({in_dim}, rng);
  auto h0 = gt::random_leaf({u}, rng);
  auto c0 = gt::random_leaf({u}, rng);
  auto res = gt::gradcheck(
      [&](Tape<double>& tp) {
        LstmCellParams<double> p{wx, wh, bias};
        auto out = lstm_step(tp, x, {h0, c0}, p);
        return tp.sum(tp.add(out.h, out.c));
      },
      {wx, wh, bias, x, h0, c0});
  EXPECT_TRUE(res.ok) << res.max_rel_err;
}

TEST(Layers, GradcheckStackedRun) {
  RngStream rng(19);
  auto stack = init_stacked_lstm<double>(2, 3, 4, 0.0, rng);
  auto inputs = gt::random_leaf({4, 3}, rng);
  std::vector<Td> leaves = {inputs};
  for (auto& l : stack.layers) {
    leaves.push_back(l.w_x);
    leaves.push_back(l.w_h);
    leaves.push_back(l.bias);
  }
  auto res = gt::gradcheck(
      [&](Tape<double>& tp) {
        auto run = run_stack(tp, inputs, stack,
                             {zero_state<double>(4), zero_state<double>(4)}, false,
                             nullptr);
        return tp.sum(run.outputs);
      },
      leaves);
  EXPECT_TRUE(res.ok) << res.max_rel_err;
}

TEST(Layers, GradcheckLinear) {
  RngStream rng(20);
  auto w = gt::random_leaf({3, 4}, rng);
  auto b = gt::random_leaf({3}, rng);
  auto x = gt::random_leaf({4}, rng);
  auto res = gt::gradcheck(
      [&](Tape<double>& tp) { return tp.sum(tp.tanh(linear(tp, x, w, b))); },
      {w, b, x});
  EXPECT_TRUE(res.ok) << res.max_rel_err;
}
