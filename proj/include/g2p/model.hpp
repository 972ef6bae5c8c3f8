#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "g2p/attention.hpp"
#include "g2p/layers.hpp"
#include "g2p/rng.hpp"
#include "g2p/tensor.hpp"

namespace g2p {

// Reserved token ids, shared by both vocabularies.
inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;

enum class EncoderMode { bidirectional, reverse_unidirectional };
enum class AttentionKind { none, global, local_m, local_p };

inline std::string to_string(EncoderMode m) {
  return m == EncoderMode::bidirectional ? "bidirectional" : "reverse_unidirectional";
}
inline std::string to_string(AttentionKind k) {
  switch (k) {
    case AttentionKind::none: return "none";
    case AttentionKind::global: return "global";
    case AttentionKind::local_m: return "local_m";
    default: return "local_p";
  }
}
inline EncoderMode encoder_mode_from(const std::string& s) {
  if (s == "bidirectional") return EncoderMode::bidirectional;
  if (s == "reverse_unidirectional") return EncoderMode::reverse_unidirectional;
  fail(ErrorKind::config, "unknown encoder mode '" + s + "'");
}
inline AttentionKind attention_from(const std::string& s) {
  if (s == "none") return AttentionKind::none;
  if (s == "global") return AttentionKind::global;
  if (s == "local_m") return AttentionKind::local_m;
  if (s == "local_p") return AttentionKind::local_p;
  fail(ErrorKind::config, "unknown attention kind '" + s + "'");
}

struct ModelConfig {
  EncoderMode encoder_mode = EncoderMode::bidirectional;
  AttentionKind attention = AttentionKind::global;
  int layers = 3;
  int units = 512;
  int embed_dim = 512;
  int window = kDefaultWindow;  // local attention half-width D
  bool input_feeding = false;
  double p_drop = 0.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (layers < 1) fail(ErrorKind::config, "layers must be >= 1");
    if (units < 1) fail(ErrorKind::config, "units must be >= 1");
    if (embed_dim < 1) fail(ErrorKind::config, "embed_dim must be >= 1");
    if (window < 1) fail(ErrorKind::config, "window must be >= 1");
    if (p_drop < 0.0 || p_drop >= 1.0)
      fail(ErrorKind::config, "dropout probability must be in [0, 1)");
  }

  int enc_state_dim() const {
    return encoder_mode == EncoderMode::bidirectional ? 2 * units : units;
  }
  bool feeds_input() const {
    return input_feeding && attention != AttentionKind::none;
  }
  int decoder_input_dim() const {
    return embed_dim + (feeds_input() ? enc_state_dim() : 0);
  }
};

// Per-layer linear combination of the forward and backward encoder finals,
// applied separately to the hidden and the cell state.
template <typename S>
struct BridgeParams {
  Tensor<S> w_fwd_h, w_bwd_h, b_h;
  Tensor<S> w_fwd_c, w_bwd_c, b_c;
};

template <typename S>
struct ParameterSet {
  ModelConfig config;
  int grapheme_vocab = 0;
  int phoneme_vocab = 0;

  EmbeddingTable<S> graphemes;
  EmbeddingTable<S> phonemes;
  std::vector<LstmCellParams<S>> enc_fwd;  // reverse mode: the single stack
  std::vector<LstmCellParams<S>> enc_bwd;  // bidirectional only
  std::vector<BridgeParams<S>> bridge;     // bidirectional only
  StackedLstm<S> decoder;
  AttentionParams<S> attention;  // undefined tensors when attention == none
  Tensor<S> out_w, out_b;

  bool has_attention() const { return config.attention != AttentionKind::none; }

  // Stable (name, tensor) listing; the checkpoint format, Adam moment order
  // and gradient clipping all iterate it.
  std::vector<std::pair<std::string, Tensor<S>>> named() const {
    std::vector<std::pair<std::string, Tensor<S>>> out;
    out.emplace_back("grapheme_embedding", graphemes.table);
    out.emplace_back("phoneme_embedding", phonemes.table);
    auto add_stack = [&](const std::string& prefix,
                         const std::vector<LstmCellParams<S>>& layers) {
      for (std::size_t l = 0; l < layers.size(); ++l) {
        std::string base = prefix + ".l" + std::to_string(l);
        out.emplace_back(base + ".w_x", layers[l].w_x);
        out.emplace_back(base + ".w_h", layers[l].w_h);
        out.emplace_back(base + ".bias", layers[l].bias);
      }
    };
    add_stack(config.encoder_mode == EncoderMode::bidirectional ? "enc_fwd"
                                                                : "enc_rev",
              enc_fwd);
    if (config.encoder_mode == EncoderMode::bidirectional) {
      add_stack("enc_bwd", enc_bwd);
      for (std::size_t l = 0; l < bridge.size(); ++l) {
        std::string base = "bridge.l" + std::to_string(l);
        out.emplace_back(base + ".h.w_fwd", bridge[l].w_fwd_h);
        out.emplace_back(base + ".h.w_bwd", bridge[l].w_bwd_h);
        out.emplace_back(base + ".h.bias", bridge[l].b_h);
        out.emplace_back(base + ".c.w_fwd", bridge[l].w_fwd_c);
        out.emplace_back(base + ".c.w_bwd", bridge[l].w_bwd_c);
        out.emplace_back(base + ".c.bias", bridge[l].b_c);
      }
    }
    add_stack("dec", decoder.layers);
    if (has_attention()) {
      out.emplace_back("attn.w_enc", attention.w_enc);
      out.emplace_back("attn.w_dec", attention.w_dec);
      out.emplace_back("attn.bias", attention.bias);
      out.emplace_back("attn.v", attention.v);
      if (config.attention == AttentionKind::local_p) {
        out.emplace_back("attn.w_pos", attention.w_pos);
        out.emplace_back("attn.v_pos", attention.v_pos);
      }
    }
    out.emplace_back("out.weight", out_w);
    out.emplace_back("out.bias", out_b);
    return out;
  }

  void zero_grad() {
    for (auto& [name, t] : named()) t.zero_grad();
  }
};

// Zero-valued parameter tensors of the right shapes (checkpoint loading
// fills them in by name).
template <typename S>
ParameterSet<S> make_parameters(const ModelConfig& config, int grapheme_vocab,
                                int phoneme_vocab) {
  config.validate();
  if (grapheme_vocab < 4 || phoneme_vocab < 4)
    fail(ErrorKind::config, "vocabularies must contain at least one real symbol");
  ParameterSet<S> p;
  p.config = config;
  p.grapheme_vocab = grapheme_vocab;
  p.phoneme_vocab = phoneme_vocab;
  int u = config.units;

  auto grad_zeros = [](std::vector<int> shape) {
    return Tensor<S>::zeros(std::move(shape), true);
  };

  p.graphemes.table = grad_zeros({grapheme_vocab, config.embed_dim});
  p.phonemes.table = grad_zeros({phoneme_vocab, config.embed_dim});
  auto make_stack = [&](int input_dim) {
    std::vector<LstmCellParams<S>> layers;
    for (int l = 0; l < config.layers; ++l)
      layers.push_back({grad_zeros({4 * u, l == 0 ? input_dim : u}),
                        grad_zeros({4 * u, u}), grad_zeros({4 * u})});
    return layers;
  };
  p.enc_fwd = make_stack(config.embed_dim);
  if (config.encoder_mode == EncoderMode::bidirectional) {
    p.enc_bwd = make_stack(config.embed_dim);
    for (int l = 0; l < config.layers; ++l)
      p.bridge.push_back({grad_zeros({u, u}), grad_zeros({u, u}), grad_zeros({u}),
                          grad_zeros({u, u}), grad_zeros({u, u}), grad_zeros({u})});
  }
  p.decoder.layers = make_stack(config.decoder_input_dim());
  p.decoder.p_drop = config.p_drop;
  if (config.attention != AttentionKind::none) {
    // attention hidden size defaults to the decoder hidden size
    p.attention.w_enc = grad_zeros({u, config.enc_state_dim()});
    p.attention.w_dec = grad_zeros({u, u});
    p.attention.bias = grad_zeros({u});
    p.attention.v = grad_zeros({u});
    if (config.attention == AttentionKind::local_p) {
      p.attention.w_pos = grad_zeros({u, u});
      p.attention.v_pos = grad_zeros({u});
    }
    p.attention.window = config.window;
    p.out_w = grad_zeros({phoneme_vocab, config.enc_state_dim() + u});
  } else {
    p.out_w = grad_zeros({phoneme_vocab, u});
  }
  p.out_b = grad_zeros({phoneme_vocab});
  return p;
}

// Fresh parameters from the seeded init stream: uniform [-0.05, 0.05]
// everywhere except forget-gate biases at 1.0.
template <typename S>
ParameterSet<S> init_parameters(const ModelConfig& config, int grapheme_vocab,
                                int phoneme_vocab, RngStream& rng) {
  ParameterSet<S> p = make_parameters<S>(config, grapheme_vocab, phoneme_vocab);
  for (auto& [name, t] : p.named())
    for (auto& v : t.data()) v = static_cast<S>(rng.uniform(-kInitRange, kInitRange));
  auto set_forget = [&](std::vector<LstmCellParams<S>>& layers) {
    for (auto& l : layers)
      for (int j = 0; j < l.units(); ++j)
        l.bias.data()[static_cast<std::size_t>(l.units() + j)] =
            static_cast<S>(kForgetBias);
  };
  set_forget(p.enc_fwd);
  set_forget(p.enc_bwd);
  set_forget(p.decoder.layers);
  return p;
}

template <typename S>
struct EncodeResult {
  Tensor<S> enc_states;                // [T_g x enc_state_dim]
  std::vector<LstmState<S>> dec_init;  // one per decoder layer
  Tensor<S> attn_proj;                 // [T_g x a] cache (attention only)
};

// enc_finals_fwd[l], enc_finals_bwd[l] -> decoder init state for layer l.
// Both the hidden and the cell state are bridged.
template <typename S>
std::vector<LstmState<S>> bridge_states(Tape<S>& tape,
                                        const std::vector<LstmState<S>>& fwd,
                                        const std::vector<LstmState<S>>& bwd,
                                        const std::vector<BridgeParams<S>>& bp) {
  std::vector<LstmState<S>> init;
  for (std::size_t l = 0; l < bp.size(); ++l) {
    auto h = tape.add(tape.add(tape.matvec(bp[l].w_fwd_h, fwd[l].h),
                               tape.matvec(bp[l].w_bwd_h, bwd[l].h)),
                      bp[l].b_h);
    auto c = tape.add(tape.add(tape.matvec(bp[l].w_fwd_c, fwd[l].c),
                               tape.matvec(bp[l].w_bwd_c, bwd[l].c)),
                      bp[l].b_c);
    init.push_back({h, c});
  }
  return init;
}

// Runs the encoder over one grapheme sequence.
//
// bidirectional: independent forward and backward stacks; enc_states row i
// is the concatenation of the two top-layer states at position i, and the
// decoder init is the learned per-layer bridge of the final states.
//
// reverse_unidirectional: a single stack over the reversed input;
// enc_states rows stay in processing (reversed-time) order, so row 0
// corresponds to the last grapheme, and the stack finals seed the decoder
// directly.
template <typename S>
EncodeResult<S> encode(Tape<S>& tape, const std::vector<int>& grapheme_ids,
                       const ParameterSet<S>& params, bool dropout_active = false,
                       RngStream* dropout_rng = nullptr) {
  if (grapheme_ids.empty()) fail(ErrorKind::data, "cannot encode an empty word");
  const ModelConfig& cfg = params.config;
  int steps = static_cast<int>(grapheme_ids.size());
  auto inputs = embed(tape, grapheme_ids, params.graphemes);

  std::vector<int> reversed(grapheme_ids.size());
  for (int i = 0; i < steps; ++i) reversed[static_cast<std::size_t>(i)] = steps - 1 - i;

  EncodeResult<S> out;
  StackedLstm<S> fwd_stack{params.enc_fwd, cfg.p_drop};
  std::vector<LstmState<S>> zeros_init;
  for (int l = 0; l < cfg.layers; ++l) zeros_init.push_back(zero_state<S>(cfg.units));

  if (cfg.encoder_mode == EncoderMode::bidirectional) {
    auto fwd = run_stack(tape, inputs, fwd_stack, zeros_init, dropout_active,
                         dropout_rng);
    StackedLstm<S> bwd_stack{params.enc_bwd, cfg.p_drop};
    auto rev_inputs = tape.gather_rows(inputs, reversed);
    auto bwd = run_stack(tape, rev_inputs, bwd_stack, zeros_init, dropout_active,
                         dropout_rng);
    // bwd outputs are in processing order; map row j back to position T-1-j
    auto bwd_orig = tape.gather_rows(bwd.outputs, reversed);
    std::vector<Tensor<S>> rows;
    rows.reserve(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i)
      rows.push_back(tape.concat(tape.row(fwd.outputs, i), tape.row(bwd_orig, i)));
    out.enc_states = tape.stack_rows(rows);
    out.dec_init = bridge_states(tape, fwd.finals, bwd.finals, params.bridge);
  } else {
    auto rev_inputs = tape.gather_rows(inputs, reversed);
    auto run = run_stack(tape, rev_inputs, fwd_stack, zeros_init, dropout_active,
                         dropout_rng);
    out.enc_states = run.outputs;
    out.dec_init = std::move(run.finals);
  }
  if (params.has_attention())
    out.attn_proj = project_encoder(tape, out.enc_states, params.attention);
  return out;
}

template <typename S>
struct DecoderState {
  std::vector<LstmState<S>> layers;
  Tensor<S> prev_context;  // zero before the first step
  int step = 0;            // 1-based after the first decode_step call
};

template <typename S>
DecoderState<S> initial_decoder_state(Tape<S>&, const EncodeResult<S>& enc,
                                      const ParameterSet<S>& params) {
  DecoderState<S> st;
  st.layers = enc.dec_init;
  if (params.config.feeds_input())
    st.prev_context = Tensor<S>::zeros({params.config.enc_state_dim()});
  return st;
}

template <typename S>
struct StepOutput {
  Tensor<S> logits;  // [phoneme_vocab], pre-softmax
  std::optional<AttentionStep<S>> attention;
};

// Embeds the previous phoneme, optionally feeds the previous context, runs
// the decoder stack one step, applies the configured attention over the
// encoder states, and projects to phoneme logits.
template <typename S>
StepOutput<S> decode_step(Tape<S>& tape, int prev_phoneme_id,
                          DecoderState<S>& state, const EncodeResult<S>& enc,
                          const ParameterSet<S>& params,
                          bool dropout_active = false,
                          RngStream* dropout_rng = nullptr) {
  const ModelConfig& cfg = params.config;
  auto y = embed_one(tape, prev_phoneme_id, params.phonemes);
  Tensor<S> x = cfg.feeds_input() ? input_feed(tape, y, state.prev_context) : y;
  StackedLstm<S> stack{params.decoder.layers, cfg.p_drop};
  auto d_t = step_stack(tape, x, state.layers, stack, dropout_active, dropout_rng);
  state.step += 1;

  StepOutput<S> out;
  switch (cfg.attention) {
    case AttentionKind::none:
      out.logits = linear(tape, d_t, params.out_w, params.out_b);
      return out;
    case AttentionKind::global:
      out.attention =
          global_attend(tape, enc.enc_states, enc.attn_proj, d_t, params.attention);
      break;
    case AttentionKind::local_m:
      out.attention = local_m_attend(tape, enc.enc_states, enc.attn_proj, d_t,
                                     state.step, params.attention);
      break;
    case AttentionKind::local_p:
      out.attention =
          local_p_attend(tape, enc.enc_states, enc.attn_proj, d_t, params.attention);
      break;
  }
  out.logits = combine_output(tape, out.attention->context, d_t, params.out_w,
                              params.out_b);
  if (cfg.feeds_input()) state.prev_context = out.attention->context;
  return out;
}

inline int argmax_index(const std::vector<float>& v) {
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}
inline int argmax_index(const std::vector<double>& v) {
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

// Mean negative log-likelihood of the pronunciation (EOS appended), one
// term per target step. At each step after the first, the decoder input is
// the gold previous phoneme with probability sampling_prob, otherwise the
// model's own argmax from the previous step (scheduled sampling); one draw
// per consumed input, taken from the given stream.
template <typename S>
Tensor<S> sequence_loss(Tape<S>& tape, const std::vector<int>& grapheme_ids,
                        const std::vector<int>& pronunciation_ids,
                        const ParameterSet<S>& params, double sampling_prob,
                        RngStream& sampling_rng, bool dropout_active = false,
                        RngStream* dropout_rng = nullptr) {
  if (pronunciation_ids.empty())
    fail(ErrorKind::data, "cannot score an empty pronunciation");
  auto enc = encode(tape, grapheme_ids, params, dropout_active, dropout_rng);
  auto state = initial_decoder_state(tape, enc, params);

  std::vector<int> targets = pronunciation_ids;
  targets.push_back(kEosId);

  std::vector<Tensor<S>> step_losses;
  step_losses.reserve(targets.size());
  int prev = kBosId;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    auto step =
        decode_step(tape, prev, state, enc, params, dropout_active, dropout_rng);
    auto logp = tape.log_softmax(step.logits);
    step_losses.push_back(tape.scale(tape.pick(logp, targets[t]), S{-1}));
    if (t + 1 < targets.size()) {
      bool use_gold = sampling_rng.bernoulli(sampling_prob);
      prev = use_gold ? targets[t] : argmax_index(step.logits.data());
    }
  }
  return tape.mean(tape.concat(step_losses));
}

}  // namespace g2p
