#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "g2p/layers.hpp"
#include "g2p/tensor.hpp"

namespace g2p {

inline constexpr int kDefaultWindow = 3;  // half-width D

template <typename S>
struct AttentionParams {
  Tensor<S> w_enc;  // [a x enc_dim], applied to encoder states
  Tensor<S> w_dec;  // [a x dec_dim], applied to the decoder state
  Tensor<S> bias;   // [a]
  Tensor<S> v;      // [a], score direction
  Tensor<S> w_pos;  // [a x dec_dim], position predictor (local_p only)
  Tensor<S> v_pos;  // [a], position predictor (local_p only)
  int window = kDefaultWindow;

  int hidden() const { return w_enc.extent(0); }
};

template <typename S>
AttentionParams<S> init_attention(int enc_dim, int dec_dim, int hidden, int window,
                                  bool local_p, RngStream& rng) {
  AttentionParams<S> p;
  p.w_enc = uniform_tensor<S>({hidden, enc_dim}, rng);
  p.w_dec = uniform_tensor<S>({hidden, dec_dim}, rng);
  p.bias = uniform_tensor<S>({hidden}, rng);
  p.v = uniform_tensor<S>({hidden}, rng);
  if (local_p) {
    p.w_pos = uniform_tensor<S>({hidden, dec_dim}, rng);
    p.v_pos = uniform_tensor<S>({hidden}, rng);
  }
  p.window = window;
  return p;
}

// One step of attention. Encoder positions are 1-based throughout this API:
// weights[j] is the weight of position window_lo + j, and the support is
// [window_lo, window_hi] inclusive. For the local variants the weights
// outside the window are identically zero and are not stored.
template <typename S>
struct AttentionStep {
  Tensor<S> weights;  // window-sized (full-length for global)
  Tensor<S> context;  // [enc_dim]
  int window_lo = 1;
  int window_hi = 1;
  double center = 0.0;  // p_t; for local_m this is min(t, T_g)
};

// Precomputes w_enc . h_i for all i; the result is reused across every
// decoder step of one sequence.
template <typename S>
Tensor<S> project_encoder(Tape<S>& tape, const Tensor<S>& enc_top,
                          const AttentionParams<S>& params) {
  return tape.matmul_nt(enc_top, params.w_enc);  // [T x a]
}

namespace detail {

// Scores u_i = v^T tanh(P_i + w_dec.d_t + bias) over the given projected rows.
template <typename S>
Tensor<S> attention_scores(Tape<S>& tape, const Tensor<S>& proj_rows,
                           const Tensor<S>& d_t, const AttentionParams<S>& params) {
  auto q = tape.add(tape.matvec(params.w_dec, d_t), params.bias);
  return tape.matvec(tape.tanh(tape.add_rowwise(proj_rows, q)), params.v);
}

}  // namespace detail

template <typename S>
AttentionStep<S> global_attend(Tape<S>& tape, const Tensor<S>& enc_top,
                               const Tensor<S>& proj, const Tensor<S>& d_t,
                               const AttentionParams<S>& params) {
  int t_g = enc_top.extent(0);
  if (t_g < 1) fail(ErrorKind::contract, "attention over empty encoder sequence");
  AttentionStep<S> step;
  auto scores = detail::attention_scores(tape, proj, d_t, params);
  step.weights = tape.softmax(scores);
  step.context = tape.vecmat(step.weights, enc_top);
  step.window_lo = 1;
  step.window_hi = t_g;
  return step;
}

template <typename S>
AttentionStep<S> global_attend(Tape<S>& tape, const Tensor<S>& enc_top,
                               const Tensor<S>& d_t,
                               const AttentionParams<S>& params) {
  return global_attend(tape, enc_top, project_encoder(tape, enc_top, params), d_t,
                       params);
}

// Monotonic local attention: p_t = t, clamped to T_g once the decoder runs
// past the source length. Softmax is taken over the surviving window only.
template <typename S>
AttentionStep<S> local_m_attend(Tape<S>& tape, const Tensor<S>& enc_top,
                                const Tensor<S>& proj, const Tensor<S>& d_t, int t,
                                const AttentionParams<S>& params) {
  int t_g = enc_top.extent(0);
  if (t_g < 1) fail(ErrorKind::contract, "attention over empty encoder sequence");
  if (t < 1) fail(ErrorKind::contract, "decoder step index must be >= 1");
  int p = std::min(t, t_g);
  int lo = std::max(1, p - params.window);
  int hi = std::min(t_g, p + params.window);
  AttentionStep<S> step;
  auto win_proj = tape.rows(proj, lo - 1, hi - lo + 1);
  auto scores = detail::attention_scores(tape, win_proj, d_t, params);
  step.weights = tape.softmax(scores);
  step.context =
      tape.vecmat(step.weights, tape.rows(enc_top, lo - 1, hi - lo + 1));
  step.window_lo = lo;
  step.window_hi = hi;
  step.center = p;
  return step;
}

template <typename S>
AttentionStep<S> local_m_attend(Tape<S>& tape, const Tensor<S>& enc_top,
                                const Tensor<S>& d_t, int t,
                                const AttentionParams<S>& params) {
  return local_m_attend(tape, enc_top, project_encoder(tape, enc_top, params), d_t,
                        t, params);
}

// Gaussian reweighting factor used by local_p at real-valued offset
// (i - p_t), with sigma = D/2. Equals exp(-2) at |i - p_t| = D.
inline double local_gaussian_factor(double offset, int window) {
  double sigma = window / 2.0;
  return std::exp(-(offset * offset) / (2.0 * sigma * sigma));
}

// Predictive local attention: p_t = T_g . sigmoid(v_pos^T tanh(w_pos d_t)),
// window [ceil(p_t)-D, floor(p_t)+D] clipped to [1, T_g]. The windowed
// softmax weights are multiplied by a Gaussian prior centered at p_t and are
// NOT renormalized afterwards; the reweighted values feed the context sum.
// The Gaussian factor is differentiable in p_t; the integer window bounds
// are treated as constants.
template <typename S>
AttentionStep<S> local_p_attend(Tape<S>& tape, const Tensor<S>& enc_top,
                                const Tensor<S>& proj, const Tensor<S>& d_t,
                                const AttentionParams<S>& params) {
  int t_g = enc_top.extent(0);
  if (t_g < 1) fail(ErrorKind::contract, "attention over empty encoder sequence");
  if (!params.w_pos.defined())
    fail(ErrorKind::contract, "local_p attention requires position parameters");
  auto pos_score =
      tape.dot(params.v_pos, tape.tanh(tape.matvec(params.w_pos, d_t)));
  auto p_t = tape.scale(tape.sigmoid(pos_score), static_cast<S>(t_g));  // [1]
  double center = static_cast<double>(p_t.item());

  int lo = std::max(1, static_cast<int>(std::ceil(center)) - params.window);
  int hi = std::min(t_g, static_cast<int>(std::floor(center)) + params.window);
  int len = hi - lo + 1;

  AttentionStep<S> step;
  auto win_proj = tape.rows(proj, lo - 1, len);
  auto alpha = tape.softmax(detail::attention_scores(tape, win_proj, d_t, params));

  double sigma = params.window / 2.0;
  S coef = static_cast<S>(-1.0 / (2.0 * sigma * sigma));
  std::vector<Tensor<S>> factors;
  factors.reserve(static_cast<std::size_t>(len));
  for (int i = lo; i <= hi; ++i) {
    auto offset = tape.sub(Tensor<S>::scalar(static_cast<S>(i)), p_t);
    factors.push_back(tape.exp(tape.scale(tape.mul(offset, offset), coef)));
  }
  step.weights = tape.mul(alpha, tape.concat(factors));
  step.context = tape.vecmat(step.weights, tape.rows(enc_top, lo - 1, len));
  step.window_lo = lo;
  step.window_hi = hi;
  step.center = center;
  return step;
}

template <typename S>
AttentionStep<S> local_p_attend(Tape<S>& tape, const Tensor<S>& enc_top,
                                const Tensor<S>& d_t,
                                const AttentionParams<S>& params) {
  return local_p_attend(tape, enc_top, project_encoder(tape, enc_top, params), d_t,
                        params);
}

// Output projection over [context; decoder state]. Softmax is applied by the
// loss or the decoder, not here.
template <typename S>
Tensor<S> combine_output(Tape<S>& tape, const Tensor<S>& context,
                         const Tensor<S>& d_t, const Tensor<S>& w_out,
                         const Tensor<S>& b_out) {
  return linear(tape, tape.concat(context, d_t), w_out, b_out);
}

// Input feeding: previous context vector concatenated after the embedding.
// Callers pass a zero vector at the first step.
template <typename S>
Tensor<S> input_feed(Tape<S>& tape, const Tensor<S>& y_embed,
                     const Tensor<S>& prev_context) {
  return tape.concat(y_embed, prev_context);
}

}  // namespace g2p
