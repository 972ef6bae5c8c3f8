#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "g2p/checkpoint.hpp"
#include "g2p/data.hpp"
#include "g2p/decode.hpp"
#include "g2p/model.hpp"

namespace g2p {

struct TrainConfig {
  int batch_size = 256;
  int epochs = 100;
  double lr0 = 0.001;
  double lr_decay = 0.8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double sampling_floor = 0.8;
  int sampling_horizon = 0;  // 0: use the epoch budget
  double clip_norm = 5.0;    // global gradient norm bound
  std::uint64_t seed = 1;
  bool check_numerics = false;  // scan activations for NaN/Inf

  void validate() const {
    if (batch_size < 1) fail(ErrorKind::config, "batch size must be >= 1");
    if (epochs < 1) fail(ErrorKind::config, "epochs must be >= 1");
    if (lr_decay <= 0.0 || lr_decay >= 1.0)
      fail(ErrorKind::config, "lr decay must be in (0, 1)");
    if (sampling_floor < 0.0 || sampling_floor > 1.0)
      fail(ErrorKind::config, "sampling floor must be in [0, 1]");
  }
  int horizon() const { return sampling_horizon > 0 ? sampling_horizon : epochs; }
};

// Linear decay from 1.0 at epoch 0 down to the floor at the horizon.
inline double sampling_prob_at(int epoch, double floor, int horizon) {
  double p = 1.0 - epoch * (1.0 - floor) / horizon;
  return std::max(floor, p);
}

template <typename S>
struct AdamState {
  std::vector<std::vector<S>> m, v;  // aligned with ParameterSet::named()
  std::int64_t step = 0;
};

template <typename S>
AdamState<S> make_adam_state(const ParameterSet<S>& params) {
  AdamState<S> st;
  for (const auto& [name, t] : params.named()) {
    st.m.emplace_back(t.numel(), S{0});
    st.v.emplace_back(t.numel(), S{0});
  }
  return st;
}

// Everything the loop needs to continue from an epoch boundary. The
// per-epoch rng streams (shuffle/dropout/sampling) are derived from
// (seed, epoch), so seed + epoch is the complete rng state.
template <typename S>
struct TrainState {
  int epoch = 0;
  double lr = 0.001;
  double best_dev_wer = std::numeric_limits<double>::infinity();
  double sampling_prob = 1.0;
  std::uint64_t seed = 1;
  AdamState<S> adam;
};

// Standard Adam with bias correction; one call per minibatch.
template <typename S>
void adam_step(ParameterSet<S>& params, AdamState<S>& st, double lr,
               const TrainConfig& cfg) {
  auto named = params.named();
  if (named.size() != st.m.size())
    fail(ErrorKind::contract, "Adam state does not match the parameter set");
  st.step += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < named.size(); ++i) {
    auto& t = named[i].second;
    if (!t.has_grad())
      fail(ErrorKind::contract, "missing gradient for " + named[i].first);
    auto& g = t.grad();
    auto& m = st.m[i];
    auto& v = st.v[i];
    for (std::size_t j = 0; j < g.size(); ++j) {
      m[j] = static_cast<S>(cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j]);
      v[j] = static_cast<S>(cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j]);
      double m_hat = m[j] / bc1;
      double v_hat = v[j] / bc2;
      t.data()[j] -= static_cast<S>(lr * m_hat / (std::sqrt(v_hat) + cfg.adam_eps));
    }
  }
}

// Scales all gradients by clip_norm / ||g|| when the global norm exceeds
// the bound. Returns the pre-clip norm.
template <typename S>
double clip_gradients(ParameterSet<S>& params, double clip_norm) {
  double sq = 0.0;
  auto named = params.named();
  for (auto& [name, t] : named) {
    if (!t.has_grad()) continue;
    for (S g : t.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  double norm = std::sqrt(sq);
  if (clip_norm > 0.0 && norm > clip_norm) {
    S k = static_cast<S>(clip_norm / norm);
    for (auto& [name, t] : named) {
      if (!t.has_grad()) continue;
      for (S& g : t.grad()) g *= k;
    }
  }
  return norm;
}

// One pass over the training set: per-epoch reshuffle, one Adam step per
// minibatch, dropout active, scheduled sampling at the state's current
// probability. Returns the mean per-token loss over all examples.
template <typename S>
double run_epoch(const std::vector<LexiconEntry>& train,
                 const Vocabulary& graphemes, const Vocabulary& phonemes,
                 ParameterSet<S>& params, TrainState<S>& state,
                 const TrainConfig& cfg) {
  if (train.empty()) fail(ErrorKind::data, "training set is empty");
  auto batches = make_batches(train, cfg.batch_size, graphemes, phonemes,
                              state.seed, state.epoch);
  RngStream sampling_rng =
      derive_stream(state.seed, "sampling", static_cast<std::uint64_t>(state.epoch));
  RngStream dropout_rng =
      derive_stream(state.seed, "dropout", static_cast<std::uint64_t>(state.epoch));

  double total_loss = 0.0;
  std::size_t total_examples = 0;
  for (const auto& batch : batches) {
    Tape<S> tape;
    tape.set_check_finite(cfg.check_numerics);
    params.zero_grad();
    std::vector<Tensor<S>> losses;
    losses.reserve(static_cast<std::size_t>(batch.size()));
    for (int i = 0; i < batch.size(); ++i) {
      std::vector<int> word(batch.graphemes[i].begin(),
                            batch.graphemes[i].begin() + batch.grapheme_len[i]);
      std::vector<int> target(batch.targets[i].begin(),
                              batch.targets[i].begin() + batch.target_len[i]);
      losses.push_back(sequence_loss(tape, word, target, params,
                                     state.sampling_prob, sampling_rng,
                                     /*dropout_active=*/true, &dropout_rng));
    }
    auto batch_loss = tape.mean(tape.concat(losses));
    tape.backward(batch_loss);
    clip_gradients(params, cfg.clip_norm);
    adam_step(params, state.adam, state.lr, cfg);
    total_loss += static_cast<double>(batch_loss.item()) * batch.size();
    total_examples += static_cast<std::size_t>(batch.size());
  }
  return total_loss / static_cast<double>(total_examples);
}

struct EpochDecision {
  bool save = false;
  double lr_after = 0.0;
};

// The end-of-epoch rule: save the model only on strict dev-WER improvement,
// otherwise multiply the learning rate by the decay factor (effective from
// the next epoch). Equal WER counts as a plateau.
template <typename S>
EpochDecision end_of_epoch_update(double dev_wer, TrainState<S>& state,
                                  const TrainConfig& cfg) {
  EpochDecision d;
  if (dev_wer < state.best_dev_wer) {
    state.best_dev_wer = dev_wer;
    d.save = true;
  } else {
    state.lr *= cfg.lr_decay;
  }
  d.lr_after = state.lr;
  return d;
}

struct EpochLog {
  int epoch = 0;  // 1-based in logs
  double train_loss = 0.0;
  double dev_wer = 0.0;
  double lr = 0.0;  // rate used during this epoch
  double sampling_prob = 0.0;
  bool saved = false;
};

inline std::string format_epoch_log(const EpochLog& e) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%d\t%.6f\t%.4f\t%.9g\t%.4f\t%d", e.epoch,
                e.train_loss, e.dev_wer, e.lr, e.sampling_prob, e.saved ? 1 : 0);
  return buf;
}

template <typename S>
struct TrainHooks {
  // dev WER for the schedule; defaults to greedy decoding the dev set
  std::function<double(const ParameterSet<S>&)> dev_wer;
  // called when the epoch improved the best dev WER
  std::function<void(const ParameterSet<S>&, const CheckpointMeta&)> save;
  std::function<void(const EpochLog&)> log;
};

template <typename S>
TrainState<S> make_train_state(const ParameterSet<S>& params, const TrainConfig& cfg) {
  TrainState<S> state;
  state.lr = cfg.lr0;
  state.seed = cfg.seed;
  state.adam = make_adam_state(params);
  return state;
}

// Advances an existing state up to until_epoch; resuming from a saved
// TrainState continues bit-identically to an uninterrupted run.
template <typename S>
void train_epochs(const std::vector<LexiconEntry>& train,
                  const std::vector<LexiconEntry>& dev, const Vocabulary& graphemes,
                  const Vocabulary& phonemes, ParameterSet<S>& params,
                  TrainState<S>& state, const TrainConfig& cfg, int until_epoch,
                  const TrainHooks<S>& hooks, int eval_workers = 1) {
  cfg.validate();
  auto dev_wer_fn = hooks.dev_wer;
  if (!dev_wer_fn) {
    if (dev.empty()) fail(ErrorKind::data, "dev set is empty");
    dev_wer_fn = [&dev, &graphemes, &phonemes, eval_workers](const ParameterSet<S>& p) {
      return evaluate_entries(dev, p, graphemes, phonemes, eval_workers).wer;
    };
  }

  while (state.epoch < until_epoch) {
    state.sampling_prob =
        sampling_prob_at(state.epoch, cfg.sampling_floor, cfg.horizon());
    double lr_used = state.lr;
    double train_loss = run_epoch(train, graphemes, phonemes, params, state, cfg);
    double dev_wer = dev_wer_fn(params);
    auto decision = end_of_epoch_update(dev_wer, state, cfg);
    state.epoch += 1;

    if (decision.save && hooks.save)
      hooks.save(params, CheckpointMeta{state.epoch, dev_wer, lr_used});
    if (hooks.log)
      hooks.log(EpochLog{state.epoch, train_loss, dev_wer, lr_used,
                         state.sampling_prob, decision.save});
  }
}

// The full optimization loop. Deterministic given (params, config, data
// order): identical seeds produce identical logs and checkpoints.
template <typename S>
TrainState<S> train_loop(const std::vector<LexiconEntry>& train,
                         const std::vector<LexiconEntry>& dev,
                         const Vocabulary& graphemes, const Vocabulary& phonemes,
                         ParameterSet<S>& params, const TrainConfig& cfg,
                         const TrainHooks<S>& hooks, int eval_workers = 1) {
  TrainState<S> state = make_train_state(params, cfg);
  train_epochs(train, dev, graphemes, phonemes, params, state, cfg, cfg.epochs,
               hooks, eval_workers);
  return state;
}

struct GridCandidate {
  double p_drop = 0.0;
  bool input_feeding = false;
};

// Runs every (p_drop, input_feeding) candidate through `run` and returns
// the one with the lowest final dev WER. Ties break toward smaller p_drop,
// then feeding off.
inline GridCandidate grid_search(
    const std::vector<double>& p_drops, const std::vector<bool>& feeds,
    const std::function<double(const GridCandidate&)>& run,
    std::vector<std::pair<GridCandidate, double>>* table = nullptr) {
  if (p_drops.empty() || feeds.empty())
    fail(ErrorKind::contract, "empty hyperparameter grid");
  std::vector<GridCandidate> candidates;
  for (double p : p_drops)
    for (bool f : feeds) candidates.push_back({p, f});
  // order: ascending p_drop, feeding-off before feeding-on
  std::sort(candidates.begin(), candidates.end(),
            [](const GridCandidate& a, const GridCandidate& b) {
              if (a.p_drop != b.p_drop) return a.p_drop < b.p_drop;
              return a.input_feeding < b.input_feeding;
            });
  GridCandidate best;
  double best_wer = std::numeric_limits<double>::infinity();
  for (const auto& c : candidates) {
    double wer = run(c);
    if (table) table->push_back({c, wer});
    if (wer < best_wer) {  // strict: earlier candidates win ties
      best_wer = wer;
      best = c;
    }
  }
  return best;
}

inline const std::vector<double>& default_p_drop_grid() {
  static const std::vector<double> grid = {0.0, 0.1, 0.2, 0.3, 0.4};
  return grid;
}

}  // namespace g2p
