#include "g2p/model.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace g2p;
namespace gt = g2p::testing;

using Td = Tensor<double>;
using Tf = Tensor<float>;

namespace {

ModelConfig toy_config(AttentionKind attn, int layers = 1, int units = 4,
                       int embed = 3) {
  ModelConfig cfg;
  cfg.attention = attn;
  cfg.layers = layers;
  cfg.units = units;
  cfg.embed_dim = embed;
  return cfg;
}

template <typename S>
ParameterSet<S> toy_params(const ModelConfig& cfg, int vg, int vp,
                           std::uint64_t seed) {
  RngStream rng = derive_stream(seed, "init");
  return init_parameters<S>(cfg, vg, vp, rng);
}

}  // namespace

TEST(Encode, SingleStepShapes) {
  auto cfg = toy_config(AttentionKind::global);
  auto params = toy_params<float>(cfg, 6, 7, 1);
  Tape<float> tp;
  auto enc = encode(tp, {3}, params);
  EXPECT_EQ(enc.enc_states.shape(), (std::vector<int>{1, 2 * cfg.units}));
  EXPECT_EQ(enc.dec_init.size(), 1u);
}

TEST(Encode, EmptyWordIsInputError) {
  auto cfg = toy_config(AttentionKind::global);
  auto params = toy_params<float>(cfg, 6, 7, 1);
  Tape<float> tp;
  try {
    encode(tp, {}, params);
    FAIL() << "expected data error";
  } catch (const G2pError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::data);
  }
}

TEST(Encode, RowCountEqualsInputLengthBothModes) {
  for (auto mode : {EncoderMode::bidirectional, EncoderMode::reverse_unidirectional}) {
    auto cfg = toy_config(AttentionKind::global);
    cfg.encoder_mode = mode;
    auto params = toy_params<float>(cfg, 6, 7, 2);
    for (int len : {1, 3, 8}) {
      Tape<float> tp;
      std::vector<int> ids(len, 3);
      auto enc = encode(tp, ids, params);
      EXPECT_EQ(enc.enc_states.extent(0), len);
    }
  }
}

// The reverse encoder consumes ids back to front: its states over "abc"
// equal a manual single-layer run over c, b, a.
TEST(Encode, ReverseModeProcessesReversedInput) {
  auto cfg = toy_config(AttentionKind::global);
  cfg.encoder_mode = EncoderMode::reverse_unidirectional;
  auto params = toy_params<double>(cfg, 6, 7, 3);
  std::vector<int> ids = {3, 4, 5};

  Tape<double> tp;
  auto enc = encode(tp, ids, params);

  auto st = zero_state<double>(cfg.units);
  for (int t = 2; t >= 0; --t) {
    auto x = embed_one(tp, ids[t], params.graphemes);
    st = lstm_step(tp, x, st, params.enc_fwd[0]);
    int out_row = 2 - t;  // processing order
    for (int j = 0; j < cfg.units; ++j)
      EXPECT_DOUBLE_EQ(enc.enc_states.data()[out_row * cfg.units + j],
                       st.h.data()[j]);
  }
}

// Bidirectional top-layer state i equals the concatenation of two
// independently composed unidirectional runs.
TEST(Encode, BidirectionalMatchesIndependentRuns) {
  auto cfg = toy_config(AttentionKind::global, 2, 3);
  auto params = toy_params<double>(cfg, 6, 7, 4);
  std::vector<int> ids = {3, 5, 4, 3};
  int t_g = static_cast<int>(ids.size());

  Tape<double> tp;
  auto enc = encode(tp, ids, params);

  auto inputs = embed(tp, ids, params.graphemes);
  StackedLstm<double> fwd{params.enc_fwd, 0.0};
  StackedLstm<double> bwd{params.enc_bwd, 0.0};
  auto zeros = std::vector<LstmState<double>>{zero_state<double>(3),
                                              zero_state<double>(3)};
  auto f = run_stack(tp, inputs, fwd, zeros, false, nullptr);
  std::vector<int> rev = {3, 2, 1, 0};
  auto b = run_stack(tp, tp.gather_rows(inputs, rev), bwd, zeros, false, nullptr);

  for (int i = 0; i < t_g; ++i) {
    for (int j = 0; j < 3; ++j) {
      EXPECT_DOUBLE_EQ(enc.enc_states.data()[i * 6 + j],
                       f.outputs.data()[i * 3 + j]);
      EXPECT_DOUBLE_EQ(enc.enc_states.data()[i * 6 + 3 + j],
                       b.outputs.data()[(t_g - 1 - i) * 3 + j]);
    }
  }
}

TEST(Bridge, IdentityAndZeroWeights) {
  Tape<double> tp;
  int u = 3;
  std::vector<double> eye = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  BridgeParams<double> identity{Td::leaf({u, u}, eye), Td::zeros({u, u}),
                                Td::zeros({u}),        Td::leaf({u, u}, eye),
                                Td::zeros({u, u}),     Td::zeros({u})};
  std::vector<LstmState<double>> fwd = {
      {Td::leaf({u}, {1, 2, 3}), Td::leaf({u}, {4, 5, 6})}};
  std::vector<LstmState<double>> bwd = {
      {Td::leaf({u}, {7, 8, 9}), Td::leaf({u}, {10, 11, 12})}};
  auto init = bridge_states(tp, fwd, bwd, {identity});
  EXPECT_EQ(init[0].h.data(), fwd[0].h.data());
  EXPECT_EQ(init[0].c.data(), fwd[0].c.data());

  auto bias = Td::leaf({u}, {-1, 0, 1});
  BridgeParams<double> zeros{Td::zeros({u, u}), Td::zeros({u, u}), bias,
                             Td::zeros({u, u}), Td::zeros({u, u}), bias};
  auto init2 = bridge_states(tp, fwd, bwd, {zeros});
  EXPECT_EQ(init2[0].h.data(), bias.data());
  EXPECT_EQ(init2[0].c.data(), bias.data());
}

TEST(Bridge, MatchesScalarOracle) {
  Tape<double> tp;
  RngStream rng(5);
  int u = 4;
  BridgeParams<double> bp{gt::random_leaf({u, u}, rng), gt::random_leaf({u, u}, rng),
                          gt::random_leaf({u}, rng),    gt::random_leaf({u, u}, rng),
                          gt::random_leaf({u, u}, rng), gt::random_leaf({u}, rng)};
  std::vector<LstmState<double>> fwd = {
      {gt::random_leaf({u}, rng), gt::random_leaf({u}, rng)}};
  std::vector<LstmState<double>> bwd = {
      {gt::random_leaf({u}, rng), gt::random_leaf({u}, rng)}};
  auto init = bridge_states(tp, fwd, bwd, {bp});

  auto part_f = gt::scalar_affine(bp.w_fwd_h.data(), bp.b_h.data(), fwd[0].h.data(), u, u);
  auto part_b = gt::scalar_affine(bp.w_bwd_h.data(), std::vector<double>(u, 0.0),
                                  bwd[0].h.data(), u, u);
  for (int j = 0; j < u; ++j)
    EXPECT_NEAR(init[0].h.data()[j], part_f[j] + part_b[j], 1e-12);
}

TEST(DecodeStep, FirstStepConsumesBosAndZeroContext) {
  auto cfg = toy_config(AttentionKind::global);
  cfg.input_feeding = true;
  auto params = toy_params<double>(cfg, 6, 7, 6);
  Tape<double> tp;
  auto enc = encode(tp, {3, 4}, params);
  auto state = initial_decoder_state(tp, enc, params);
  ASSERT_TRUE(state.prev_context.defined());
  for (double v : state.prev_context.data()) EXPECT_EQ(v, 0.0);

  auto out = decode_step(tp, kBosId, state, enc, params);
  EXPECT_EQ(state.step, 1);

  // replay by hand from the same encoder result
  auto manual_state = enc.dec_init;
  auto y = embed_one(tp, kBosId, params.phonemes);
  auto x = tp.concat(y, Td::zeros({cfg.enc_state_dim()}));
  StackedLstm<double> stack{params.decoder.layers, 0.0};
  auto d = step_stack(tp, x, manual_state, stack, false, nullptr);
  auto attn = global_attend(tp, enc.enc_states, enc.attn_proj, d, params.attention);
  auto logits = combine_output(tp, attn.context, d, params.out_w, params.out_b);
  EXPECT_EQ(out.logits.data(), logits.data());
}

// With attention off, the encoder states influence the decoder only through
// the bridged initial state.
TEST(DecodeStep, NoAttentionIgnoresEncoderStates) {
  auto cfg = toy_config(AttentionKind::none);
  auto params = toy_params<double>(cfg, 6, 7, 7);
  Tape<double> tp;
  auto enc = encode(tp, {3, 4, 5}, params);

  EncodeResult<double> tampered = enc;
  tampered.enc_states = Td::leaf({3, 8}, std::vector<double>(24, 123.0));

  auto s1 = initial_decoder_state(tp, enc, params);
  auto s2 = initial_decoder_state(tp, tampered, params);
  auto o1 = decode_step(tp, kBosId, s1, enc, params);
  auto o2 = decode_step(tp, kBosId, s2, tampered, params);
  EXPECT_EQ(o1.logits.data(), o2.logits.data());
  EXPECT_FALSE(o1.attention.has_value());
}

TEST(DecodeStep, InvalidPhonemeIdIsVocabularyError) {
  auto cfg = toy_config(AttentionKind::global);
  auto params = toy_params<double>(cfg, 6, 7, 8);
  Tape<double> tp;
  auto enc = encode(tp, {3}, params);
  auto state = initial_decoder_state(tp, enc, params);
  try {
    decode_step(tp, 7, state, enc, params);
    FAIL() << "expected vocabulary error";
  } catch (const G2pError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::vocabulary);
  }
}

// One full decode step on a 4-unit toy model against the scalar oracle
// composition: embed -> LSTM -> attention -> output projection.
TEST(DecodeStep, MatchesScalarOracle) {
  auto cfg = toy_config(AttentionKind::global, 1, 4, 3);
  auto params = toy_params<double>(cfg, 6, 7, 9);
  Tape<double> tp;
  std::vector<int> word = {3, 4};
  auto enc = encode(tp, word, params);
  auto state = initial_decoder_state(tp, enc, params);
  auto out = decode_step(tp, kBosId, state, enc, params);

  int u = 4, e = 3, h_dim = 8;
  // embed BOS
  std::vector<double> y(params.phonemes.table.data().begin() + kBosId * e,
                        params.phonemes.table.data().begin() + (kBosId + 1) * e);
  // decoder LSTM step from the bridged init
  auto d = gt::scalar_lstm_step(params.decoder.layers[0].w_x.data(),
                                params.decoder.layers[0].w_h.data(),
                                params.decoder.layers[0].bias.data(), y,
                                enc.dec_init[0].h.data(), enc.dec_init[0].c.data(),
                                e, u);
  auto attn = gt::scalar_global_attention(
      enc.enc_states.data(), 2, h_dim, d.h, u, params.attention.w_enc.data(),
      params.attention.w_dec.data(), params.attention.bias.data(),
      params.attention.v.data(), u);
  std::vector<double> cat = attn.context;
  cat.insert(cat.end(), d.h.begin(), d.h.end());
  auto logits = gt::scalar_affine(params.out_w.data(), params.out_b.data(), cat, 7,
                                  h_dim + u);
  ASSERT_EQ(out.logits.numel(), logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    EXPECT_NEAR(out.logits.data()[i], logits[i], 1e-12);
}

// Zero parameters make every step's logits uniform: loss is ln V per step.
TEST(SequenceLoss, UniformLogitsGiveLogV) {
  auto cfg = toy_config(AttentionKind::global);
  auto params = make_parameters<double>(cfg, 6, 7);
  Tape<double> tp;
  RngStream rng(10);
  auto loss = sequence_loss(tp, {3, 4}, {3, 5, 4}, params, 1.0, rng);
  EXPECT_NEAR(loss.item(), std::log(7.0), 1e-12);
}

TEST(SequenceLoss, EmptyPronunciationIsInputError) {
  auto cfg = toy_config(AttentionKind::global);
  auto params = toy_params<double>(cfg, 6, 7, 11);
  Tape<double> tp;
  RngStream rng(11);
  try {
    sequence_loss(tp, {3}, {}, params, 1.0, rng);
    FAIL() << "expected data error";
  } catch (const G2pError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::data);
  }
}

// sampling_prob = 1 is pure teacher forcing: the loss equals a manual
// teacher-forced replay regardless of the sampling stream.
TEST(SequenceLoss, FullSamplingProbIsTeacherForcing) {
  auto cfg = toy_config(AttentionKind::global);
  auto params = toy_params<double>(cfg, 6, 7, 12);
  std::vector<int> word = {3, 4, 5};
  std::vector<int> pron = {4, 6, 3};

  Tape<double> tp;
  RngStream rng(99);
  auto loss = sequence_loss(tp, word, pron, params, 1.0, rng);

  auto enc = encode(tp, word, params);
  auto state = initial_decoder_state(tp, enc, params);
  std::vector<int> targets = pron;
  targets.push_back(kEosId);
  double total = 0;
  int prev = kBosId;
  for (int gold : targets) {
    auto out = decode_step(tp, prev, state, enc, params);
    total += -tp.log_softmax(out.logits).data()[gold];
    prev = gold;
  }
  EXPECT_NEAR(loss.item(), total / targets.size(), 1e-12);
}

// Rigged output bias makes the per-step distribution a known constant, so
// the loss is hand-computable: -(log p1 + log p2 + log pEOS) / 3.
TEST(SequenceLoss, HandComputedTwoStepLoss) {
  auto cfg = toy_config(AttentionKind::none);
  auto params = make_parameters<double>(cfg, 6, 5);
  params.out_b = Td::leaf({5}, {0.0, 0.0, 1.0, 2.0, -1.0}, true);
  Tape<double> tp;
  RngStream rng(13);
  // target [3, 4]; steps score ids 3, 4, EOS(2)
  auto loss = sequence_loss(tp, {3, 4}, {3, 4}, params, 1.0, rng);

  std::vector<double> b = {0.0, 0.0, 1.0, 2.0, -1.0};
  double lse = 0;
  for (double x : b) lse += std::exp(x);
  lse = std::log(lse);
  double expect = -((b[3] - lse) + (b[4] - lse) + (b[2] - lse)) / 3.0;
  EXPECT_NEAR(loss.item(), expect, 1e-12);
}

TEST(SequenceLoss, NonNegativeAndDeterministic) {
  auto cfg = toy_config(AttentionKind::local_m);
  auto params = toy_params<double>(cfg, 6, 7, 14);
  auto run = [&]() {
    Tape<double> tp;
    RngStream rng(7);
    return sequence_loss(tp, {3, 4, 5, 3}, {4, 5}, params, 0.5, rng).item();
  };
  double a = run(), b = run();
  EXPECT_GE(a, 0.0);
  EXPECT_EQ(a, b);
}

// On one repeated example with a small step size, plain gradient descent
// decreases the loss monotonically over the first 20 steps.
TEST(SequenceLoss, DecreasesUnderGradientDescent) {
  auto cfg = toy_config(AttentionKind::global, 1, 6, 4);
  auto params = toy_params<float>(cfg, 6, 7, 15);
  std::vector<int> word = {3, 4, 5};
  std::vector<int> pron = {4, 6};
  double prev_loss = 1e30;
  for (int step = 0; step < 20; ++step) {
    Tape<float> tp;
    RngStream rng(1);
    auto loss = sequence_loss(tp, word, pron, params, 1.0, rng);
    EXPECT_LT(loss.item(), prev_loss);
    prev_loss = loss.item();
    params.zero_grad();
    tp.backward(loss);
    for (auto& [name, t] : params.named())
      for (std::size_t i = 0; i < t.numel(); ++i)
        t.data()[i] -= 0.05f * t.grad()[i];
  }
}

// Full-model gradcheck on a toy config for each attention kind.
TEST(Model, FullGradcheckAllAttentionKinds) {
  for (auto kind : {AttentionKind::none, AttentionKind::global,
                    AttentionKind::local_m, AttentionKind::local_p}) {
    auto cfg = toy_config(kind, 1, 2, 2);
    auto params = toy_params<double>(cfg, 5, 5, 16);
    std::vector<int> word = {3, 4, 3};
    std::vector<int> pron = {4, 3};
    std::vector<Td> leaves;
    for (auto& [name, t] : params.named()) leaves.push_back(t);
    auto res = gt::gradcheck(
        [&](Tape<double>& tp) {
          RngStream rng(5);
          return sequence_loss(tp, word, pron, params, 1.0, rng);
        },
        leaves);
    EXPECT_TRUE(res.ok) << to_string(kind) << ": " << res.max_rel_err;
  }
}

TEST(ModelConfig, Validation) {
  ModelConfig cfg;
  cfg.layers = 0;
  EXPECT_THROW(cfg.validate(), G2pError);
  cfg = ModelConfig{};
  cfg.p_drop = 1.0;
  EXPECT_THROW(cfg.validate(), G2pError);
  cfg = ModelConfig{};
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.layers, 3);
  EXPECT_EQ(cfg.units, 512);
  EXPECT_EQ(cfg.embed_dim, 512);
  EXPECT_EQ(cfg.window, 3);
}

TEST(ParameterSet, NamesAreUniqueAndStable) {
  auto cfg = toy_config(AttentionKind::local_p, 2);
  auto params = toy_params<float>(cfg, 6, 7, 17);
  auto named = params.named();
  std::vector<std::string> names;
  for (auto& [n, t] : named) names.push_back(n);
  auto sorted = names;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(std::unique(sorted.begin(), sorted.end()), sorted.end());
  auto again = toy_params<float>(cfg, 6, 7, 18);
  auto named2 = again.named();
  ASSERT_EQ(named.size(), named2.size());
  for (std::size_t i = 0; i < named.size(); ++i)
    EXPECT_EQ(named[i].first, named2[i].first);
}

TEST(ParameterSet, SeededInitIsReproducible) {
  auto cfg = toy_config(AttentionKind::global);
  auto a = toy_params<float>(cfg, 6, 7, 42);
  auto b = toy_params<float>(cfg, 6, 7, 42);
  auto na = a.named(), nb = b.named();
  for (std::size_t i = 0; i < na.size(); ++i)
    EXPECT_EQ(na[i].second.data(), nb[i].second.data());
}
