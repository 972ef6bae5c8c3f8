#pragma once

#include <string>
#include <vector>

#include "g2p/errors.hpp"
#include "g2p/rng.hpp"
#include "g2p/tensor.hpp"

namespace g2p {

inline constexpr double kInitRange = 0.05;
inline constexpr double kForgetBias = 1.0;

template <typename S>
Tensor<S> uniform_tensor(std::vector<int> shape, RngStream& rng,
                         double lo = -kInitRange, double hi = kInitRange) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  std::vector<S> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = static_cast<S>(rng.uniform(lo, hi));
  return Tensor<S>::leaf(std::move(shape), std::move(v), true);
}

// ---- embedding ----

template <typename S>
struct EmbeddingTable {
  Tensor<S> table;  // [vocab_size x embed_dim], includes PAD/BOS/EOS rows

  int vocab_size() const { return table.extent(0); }
  int embed_dim() const { return table.extent(1); }
};

template <typename S>
EmbeddingTable<S> init_embedding(int vocab_size, int embed_dim, RngStream& rng) {
  return {uniform_tensor<S>({vocab_size, embed_dim}, rng)};
}

// Rows of the table selected by id; gradient flows only to selected rows.
template <typename S>
Tensor<S> embed(Tape<S>& tape, const std::vector<int>& ids,
                const EmbeddingTable<S>& emb) {
  for (int id : ids)
    if (id < 0 || id >= emb.vocab_size())
      fail(ErrorKind::vocabulary,
           "token id " + std::to_string(id) + " outside vocabulary of size " +
               std::to_string(emb.vocab_size()));
  return tape.gather_rows(emb.table, ids);
}

template <typename S>
Tensor<S> embed_one(Tape<S>& tape, int id, const EmbeddingTable<S>& emb) {
  if (id < 0 || id >= emb.vocab_size())
    fail(ErrorKind::vocabulary,
         "token id " + std::to_string(id) + " outside vocabulary of size " +
             std::to_string(emb.vocab_size()));
  return tape.row(emb.table, id);
}

// ---- LSTM ----

// Gate order is fixed as (input, forget, cell-candidate, output); the
// checkpoint format depends on it.
template <typename S>
struct LstmCellParams {
  Tensor<S> w_x;   // [4u x in_dim]
  Tensor<S> w_h;   // [4u x u]
  Tensor<S> bias;  // [4u]

  int units() const { return w_h.extent(1); }
  int input_dim() const { return w_x.extent(1); }
};

// Uniform [-0.05, 0.05] everywhere except the forget-gate bias, which
// starts at 1.0 so memory is trainable from the first epochs.
template <typename S>
LstmCellParams<S> init_lstm_cell(int input_dim, int units, RngStream& rng) {
  LstmCellParams<S> p;
  p.w_x = uniform_tensor<S>({4 * units, input_dim}, rng);
  p.w_h = uniform_tensor<S>({4 * units, units}, rng);
  p.bias = uniform_tensor<S>({4 * units}, rng);
  for (int j = 0; j < units; ++j)
    p.bias.data()[static_cast<std::size_t>(units + j)] = static_cast<S>(kForgetBias);
  return p;
}

template <typename S>
struct LstmState {
  Tensor<S> h;
  Tensor<S> c;
};

template <typename S>
LstmState<S> zero_state(int units) {
  return {Tensor<S>::zeros({units}), Tensor<S>::zeros({units})};
}

// One step of the standard cell: gates sigma/sigma/tanh/sigma over
// W_x.x + W_h.h_prev + b; c = f.c_prev + i.g; h = o.tanh(c).
template <typename S>
LstmState<S> lstm_step(Tape<S>& tape, const Tensor<S>& x, const LstmState<S>& prev,
                       const LstmCellParams<S>& p) {
  int u = p.units();
  auto gates = tape.add(tape.add(tape.matvec(p.w_x, x), tape.matvec(p.w_h, prev.h)),
                        p.bias);
  auto i = tape.sigmoid(tape.slice(gates, 0, u));
  auto f = tape.sigmoid(tape.slice(gates, u, u));
  auto g = tape.tanh(tape.slice(gates, 2 * u, u));
  auto o = tape.sigmoid(tape.slice(gates, 3 * u, u));
  auto c = tape.add(tape.mul(f, prev.c), tape.mul(i, g));
  auto h = tape.mul(o, tape.tanh(c));
  return {h, c};
}

// ---- dropout ----

// Inverted dropout: zero with probability p, scale survivors by 1/(1-p).
// Identity when p == 0. The mask comes from the given stream, so a fixed
// seed replays bit-identically.
template <typename S>
Tensor<S> dropout(Tape<S>& tape, const Tensor<S>& x, double p, RngStream& rng) {
  if (p < 0.0 || p >= 1.0)
    fail(ErrorKind::config, "dropout probability must be in [0, 1), got " +
                                std::to_string(p));
  if (p == 0.0) return x;
  S keep_scale = static_cast<S>(1.0 / (1.0 - p));
  std::vector<S> mask(x.numel());
  for (auto& m : mask) m = rng.bernoulli(p) ? S{0} : keep_scale;
  return tape.mul(x, Tensor<S>::leaf(x.shape(), std::move(mask)));
}

// ---- stacked LSTM ----

template <typename S>
struct StackedLstm {
  std::vector<LstmCellParams<S>> layers;
  double p_drop = 0.0;  // applied between consecutive layers only

  int num_layers() const { return static_cast<int>(layers.size()); }
  int units() const { return layers.back().units(); }
};

template <typename S>
StackedLstm<S> init_stacked_lstm(int num_layers, int input_dim, int units,
                                 double p_drop, RngStream& rng) {
  StackedLstm<S> s;
  s.p_drop = p_drop;
  for (int l = 0; l < num_layers; ++l)
    s.layers.push_back(init_lstm_cell<S>(l == 0 ? input_dim : units, units, rng));
  return s;
}

// Advances every layer by one time step. Dropout hits the activations
// passed up between layers, never the recurrent h->h path and never the
// top layer's output. Returns the top-layer h.
template <typename S>
Tensor<S> step_stack(Tape<S>& tape, const Tensor<S>& x,
                     std::vector<LstmState<S>>& states, const StackedLstm<S>& stack,
                     bool dropout_active, RngStream* dropout_rng) {
  if (states.size() != stack.layers.size())
    fail(ErrorKind::contract, "stack state count " + std::to_string(states.size()) +
                                  " != layer count " +
                                  std::to_string(stack.layers.size()));
  Tensor<S> input = x;
  for (std::size_t l = 0; l < stack.layers.size(); ++l) {
    if (l > 0 && dropout_active && stack.p_drop > 0.0)
      input = dropout(tape, input, stack.p_drop, *dropout_rng);
    states[l] = lstm_step(tape, input, states[l], stack.layers[l]);
    input = states[l].h;
  }
  return input;
}

template <typename S>
struct StackRun {
  Tensor<S> outputs;  // [T x u], top-layer h per step
  std::vector<LstmState<S>> finals;
};

template <typename S>
StackRun<S> run_stack(Tape<S>& tape, const Tensor<S>& inputs,
                      const StackedLstm<S>& stack, std::vector<LstmState<S>> init,
                      bool dropout_active, RngStream* dropout_rng) {
  if (init.size() != stack.layers.size())
    fail(ErrorKind::contract, "init state count " + std::to_string(init.size()) +
                                  " != layer count " +
                                  std::to_string(stack.layers.size()));
  int steps = inputs.extent(0);
  std::vector<Tensor<S>> tops;
  tops.reserve(static_cast<std::size_t>(steps));
  for (int t = 0; t < steps; ++t)
    tops.push_back(step_stack(tape, tape.row(inputs, t), init, stack,
                              dropout_active, dropout_rng));
  return {tape.stack_rows(tops), std::move(init)};
}

// ---- linear ----

template <typename S>
Tensor<S> linear(Tape<S>& tape, const Tensor<S>& x, const Tensor<S>& w,
                 const Tensor<S>& b) {
  return tape.add(tape.matvec(w, x), b);
}

}  // namespace g2p
