// Command-line entry points: train, predict, eval, export-embeddings.

#include <CLI11.hpp>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "g2p/checkpoint.hpp"
#include "g2p/data.hpp"
#include "g2p/decode.hpp"
#include "g2p/eval.hpp"
#include "g2p/model.hpp"
#include "g2p/train.hpp"

namespace fs = std::filesystem;
using namespace g2p;

namespace {

std::vector<LexiconEntry> load_lexicon(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::data, "cannot open lexicon " + path);
  return parse_lexicon(in, [&](const std::string& w) {
    std::cerr << path << ": warning: " << w << "\n";
  });
}

// Shortest round-trip decimal for exact 32-bit export.
std::string float_repr(float v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

struct TrainArgs {
  std::string train_path, dev_path, out_dir = "run";
  int dev_sample = 0;
  std::string dataset;
  std::string attention = "global", encoder = "bidirectional";
  int layers = 3, units = 512, embed_dim = 512, window = 3;
  bool input_feeding = false;
  double dropout = 0.0;
  int batch_size = 256, epochs = 100;
  double lr = 0.001, lr_decay = 0.8;
  double sampling_floor = 0.8;
  int sampling_horizon = 0;
  double clip_norm = 5.0;
  std::uint64_t seed = 1;
  std::uint64_t data_seed = 0;  // 0: follow --seed
  bool grid = false;
  bool retrain_on_full = false;  // tune on sampled dev, retrain on full train
  int workers = 1;
  bool check_numerics = false;
};

std::string double_repr(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

// The manifest is the run's config file: every option fully resolved, in
// the same key=value format the --config reader accepts.
void write_manifest(std::ostream& out, const TrainArgs& a) {
  out << "train=" << a.train_path << "\n";
  out << "dev=" << a.dev_path << "\n";
  out << "dev-sample=" << a.dev_sample << "\n";
  out << "dataset=" << a.dataset << "\n";
  out << "out=" << a.out_dir << "\n";
  out << "attention=" << a.attention << "\n";
  out << "encoder=" << a.encoder << "\n";
  out << "layers=" << a.layers << "\n";
  out << "units=" << a.units << "\n";
  out << "embed-dim=" << a.embed_dim << "\n";
  out << "window=" << a.window << "\n";
  out << "input-feeding=" << (a.input_feeding ? "true" : "false") << "\n";
  out << "dropout=" << double_repr(a.dropout) << "\n";
  out << "batch-size=" << a.batch_size << "\n";
  out << "epochs=" << a.epochs << "\n";
  out << "lr=" << double_repr(a.lr) << "\n";
  out << "lr-decay=" << double_repr(a.lr_decay) << "\n";
  out << "sampling-floor=" << double_repr(a.sampling_floor) << "\n";
  out << "sampling-horizon=" << a.sampling_horizon << "\n";
  out << "clip-norm=" << double_repr(a.clip_norm) << "\n";
  out << "seed=" << a.seed << "\n";
  out << "data-seed=" << a.data_seed << "\n";
  out << "grid=" << (a.grid ? "true" : "false") << "\n";
  out << "retrain-on-full=" << (a.retrain_on_full ? "true" : "false") << "\n";
  out << "workers=" << a.workers << "\n";
  out << "check-numerics=" << (a.check_numerics ? "true" : "false") << "\n";
}

// key=value config applied over the built-in defaults; explicit flags win.
void apply_config_file(const std::string& path, TrainArgs& a) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::config, "cannot open config file " + path);
  auto to_bool = [&](const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    fail(ErrorKind::config, "config key " + key + " expects true/false, got " + v);
  };
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrorKind::config,
           path + " line " + std::to_string(line_no) + ": expected key=value");
    std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    try {
      if (key == "train") a.train_path = value;
      else if (key == "dev") a.dev_path = value;
      else if (key == "dev-sample") a.dev_sample = std::stoi(value);
      else if (key == "dataset") a.dataset = value;
      else if (key == "out") a.out_dir = value;
      else if (key == "attention") a.attention = value;
      else if (key == "encoder") a.encoder = value;
      else if (key == "layers") a.layers = std::stoi(value);
      else if (key == "units") a.units = std::stoi(value);
      else if (key == "embed-dim") a.embed_dim = std::stoi(value);
      else if (key == "window") a.window = std::stoi(value);
      else if (key == "input-feeding") a.input_feeding = to_bool(value, key);
      else if (key == "dropout") a.dropout = std::stod(value);
      else if (key == "batch-size") a.batch_size = std::stoi(value);
      else if (key == "epochs") a.epochs = std::stoi(value);
      else if (key == "lr") a.lr = std::stod(value);
      else if (key == "lr-decay") a.lr_decay = std::stod(value);
      else if (key == "sampling-floor") a.sampling_floor = std::stod(value);
      else if (key == "sampling-horizon") a.sampling_horizon = std::stoi(value);
      else if (key == "clip-norm") a.clip_norm = std::stod(value);
      else if (key == "seed") a.seed = std::stoull(value);
      else if (key == "data-seed") a.data_seed = std::stoull(value);
      else if (key == "grid") a.grid = to_bool(value, key);
      else if (key == "retrain-on-full") a.retrain_on_full = to_bool(value, key);
      else if (key == "workers") a.workers = std::stoi(value);
      else if (key == "check-numerics") a.check_numerics = to_bool(value, key);
      else
        fail(ErrorKind::config,
             path + " line " + std::to_string(line_no) + ": unknown key " + key);
    } catch (const std::invalid_argument&) {
      fail(ErrorKind::config, path + " line " + std::to_string(line_no) +
                                  ": bad value for " + key);
    } catch (const std::out_of_range&) {
      fail(ErrorKind::config, path + " line " + std::to_string(line_no) +
                                  ": bad value for " + key);
    }
  }
}

ModelConfig model_config_of(const TrainArgs& a) {
  ModelConfig mc;
  mc.encoder_mode = encoder_mode_from(a.encoder);
  mc.attention = attention_from(a.attention);
  mc.layers = a.layers;
  mc.units = a.units;
  mc.embed_dim = a.embed_dim;
  mc.window = a.window;
  mc.input_feeding = a.input_feeding;
  mc.p_drop = a.dropout;
  mc.seed = a.seed;
  mc.validate();
  return mc;
}

TrainConfig train_config_of(const TrainArgs& a) {
  TrainConfig tc;
  tc.batch_size = a.batch_size;
  tc.epochs = a.epochs;
  tc.lr0 = a.lr;
  tc.lr_decay = a.lr_decay;
  tc.sampling_floor = a.sampling_floor;
  tc.sampling_horizon = a.sampling_horizon;
  tc.clip_norm = a.clip_norm;
  tc.seed = a.seed;
  tc.check_numerics = a.check_numerics;
  tc.validate();
  return tc;
}

// One complete training run into out_dir (checkpoint + log); returns the
// best dev WER reached.
double run_training(const std::vector<LexiconEntry>& train,
                    const std::vector<LexiconEntry>& dev, const ModelConfig& mc,
                    const TrainConfig& tc, const fs::path& out_dir, int workers) {
  fs::create_directories(out_dir);
  auto vocabs = build_vocabularies(train);
  const Vocabulary& graphemes = vocabs.first;
  const Vocabulary& phonemes = vocabs.second;
  RngStream init = derive_stream(mc.seed, "init");
  auto params = init_parameters<float>(mc, graphemes.size(), phonemes.size(), init);

  std::ofstream log(out_dir / "train.log");
  if (!log) fail(ErrorKind::data, "cannot write " + (out_dir / "train.log").string());
  log << "#epoch\ttrain_loss\tdev_wer\tlr\tsampling_prob\tsaved\n";

  std::string ckpt = (out_dir / "model.ckpt").string();
  TrainHooks<float> hooks;
  hooks.save = [&](const ParameterSet<float>& p, const CheckpointMeta& meta) {
    save_checkpoint(ckpt, p, graphemes, phonemes, meta);
  };
  hooks.log = [&](const EpochLog& e) {
    log << format_epoch_log(e) << "\n";
    log.flush();
    std::cerr << "epoch " << e.epoch << ": loss " << e.train_loss << ", dev WER "
              << e.dev_wer << (e.saved ? " (saved)" : "") << "\n";
  };
  auto state = train_loop(train, dev, graphemes, phonemes, params, tc, hooks, workers);
  return state.best_dev_wer;
}

int cmd_train(const TrainArgs& args) {
  if (args.train_path.empty())
    fail(ErrorKind::config, "provide --train FILE (flag or config)");
  auto mc = model_config_of(args);
  auto tc = train_config_of(args);

  SplitSpec split;
  split.train_path = args.train_path;
  split.dev_path = args.dev_path;
  split.dev_sample_size = static_cast<std::size_t>(std::max(0, args.dev_sample));
  split.seed = args.data_seed != 0 ? args.data_seed : args.seed;
  auto splits = resolve_splits(split, load_lexicon);
  const auto& train = splits.train;
  const auto& dev = splits.dev;
  const auto& all_train = splits.full_train;
  if (!args.dataset.empty()) {
    const auto& setup = standard_setup(args.dataset);
    validate_standard_sizes(setup, static_cast<int>(all_train.size()),
                            args.dev_path.empty() ? 0 : static_cast<int>(dev.size()),
                            0);
  }

  fs::path out_dir(args.out_dir);
  fs::create_directories(out_dir);
  {
    // fully resolved manifest; feeding it back via --config reproduces the run
    std::ofstream manifest(out_dir / "manifest.cfg");
    write_manifest(manifest, args);
  }

  if (!args.grid) {
    double wer = run_training(train, dev, mc, tc, out_dir, args.workers);
    std::cout << "best dev WER " << detail::fixed2(wer) << " ("
              << (out_dir / "model.ckpt").string() << ")\n";
    return 0;
  }

  // 5 x 2 grid over dropout probability and input feeding
  std::ofstream grid_log(out_dir / "grid.log");
  grid_log << "#p_drop\tinput_feeding\tbest_dev_wer\tdir\n";
  auto run_candidate = [&](const GridCandidate& c) {
    ModelConfig cmc = mc;
    cmc.p_drop = c.p_drop;
    cmc.input_feeding = c.input_feeding;
    std::ostringstream name;
    name << "grid_p" << c.p_drop << (c.input_feeding ? "_feed" : "_nofeed");
    fs::path dir = out_dir / name.str();
    double wer = run_training(train, dev, cmc, tc, dir, args.workers);
    grid_log << c.p_drop << '\t' << (c.input_feeding ? 1 : 0) << '\t'
             << detail::fixed2(wer) << '\t' << dir.string() << "\n";
    grid_log.flush();
    return wer;
  };
  auto best = grid_search(default_p_drop_grid(), {false, true}, run_candidate);
  grid_log << "#best\t" << best.p_drop << "\t" << (best.input_feeding ? 1 : 0) << "\n";

  ModelConfig best_mc = mc;
  best_mc.p_drop = best.p_drop;
  best_mc.input_feeding = best.input_feeding;
  bool retrain = args.retrain_on_full ||
                 (!args.dataset.empty() && standard_setup(args.dataset).retrain_on_full);
  if (retrain) {
    // tuned on the sampled dev set; the final model trains on the original
    // training set (the sampled words included)
    double wer = run_training(all_train, dev, best_mc, tc, out_dir, args.workers);
    std::cout << "retrained on full training set, best dev WER "
              << detail::fixed2(wer) << "\n";
  } else {
    std::ostringstream name;
    name << "grid_p" << best.p_drop << (best.input_feeding ? "_feed" : "_nofeed");
    fs::copy_file(out_dir / name.str() / "model.ckpt", out_dir / "model.ckpt",
                  fs::copy_options::overwrite_existing);
    fs::copy_file(out_dir / name.str() / "train.log", out_dir / "train.log",
                  fs::copy_options::overwrite_existing);
  }
  std::cout << "grid best: p_drop " << best.p_drop << ", input feeding "
            << (best.input_feeding ? "on" : "off") << " ("
            << (out_dir / "model.ckpt").string() << ")\n";
  return 0;
}

int cmd_predict(const std::string& ckpt_path, const std::string& input_path,
                const std::string& output_path) {
  auto ck = load_checkpoint(ckpt_path);

  std::ifstream file_in;
  std::istream* in = &std::cin;
  if (!input_path.empty() && input_path != "-") {
    file_in.open(input_path);
    if (!file_in) fail(ErrorKind::data, "cannot open word list " + input_path);
    in = &file_in;
  }
  std::ofstream file_out;
  std::ostream* out = &std::cout;
  if (!output_path.empty() && output_path != "-") {
    file_out.open(output_path);
    if (!file_out) fail(ErrorKind::data, "cannot write " + output_path);
    out = &file_out;
  }

  bool had_errors = false;
  std::string word;
  while (std::getline(*in, word)) {
    if (!word.empty() && word.back() == '\r') word.pop_back();
    if (word.empty()) continue;
    try {
      auto pred = predict_word(word, ck.params, ck.graphemes);
      *out << pred.word << '\t';
      auto symbols = ck.phonemes.decode(pred.phoneme_ids);
      for (std::size_t i = 0; i < symbols.size(); ++i)
        *out << (i ? " " : "") << symbols[i];
      *out << '\n';
    } catch (const G2pError& e) {
      if (e.kind() != ErrorKind::vocabulary) throw;
      std::cerr << upper_ascii(word) << "\tERROR " << e.what() << "\n";
      had_errors = true;
    }
  }
  return had_errors ? 2 : 0;
}

int cmd_eval(const std::vector<std::string>& ckpt_paths, const std::string& test_path,
             bool ensemble, bool buckets, const std::string& report_path, int worst_k,
             int workers, std::uint64_t seed) {
  if (ensemble && ckpt_paths.size() != 5)
    fail(ErrorKind::config, "--ensemble expects exactly 5 checkpoints, got " +
                                std::to_string(ckpt_paths.size()));
  if (!ensemble && ckpt_paths.size() != 1)
    fail(ErrorKind::config, "evaluation expects one checkpoint (or 5 with --ensemble)");

  std::vector<Checkpoint> members;
  for (const auto& p : ckpt_paths) members.push_back(load_checkpoint(p));
  for (const auto& m : members)
    if (!(m.graphemes == members[0].graphemes) || !(m.phonemes == members[0].phonemes))
      fail(ErrorKind::data, "ensemble members have mismatched vocabularies");

  auto entries = load_lexicon(test_path);
  if (entries.empty()) fail(ErrorKind::data, test_path + " holds no entries");

  EvalReport rep;
  if (!ensemble) {
    rep = evaluate_entries(entries, members[0].params, members[0].graphemes,
                           members[0].phonemes, workers);
  } else {
    RngStream tie_rng = derive_stream(seed, "tie-break");
    std::vector<WordResult> results;
    results.reserve(entries.size());
    for (const auto& e : entries) {
      std::vector<std::vector<int>> outputs;
      std::vector<std::string> symbols;
      try {
        auto ids = members[0].graphemes.encode(split_graphemes(e.word));
        for (const auto& m : members)
          outputs.push_back(greedy_decode_ids(ids, m.params).phoneme_ids);
        symbols = members[0].phonemes.decode(ensemble_vote(outputs, tie_rng));
      } catch (const G2pError& err) {
        if (err.kind() != ErrorKind::vocabulary) throw;
        // unknown grapheme: scored as an empty prediction
      }
      results.push_back(score_word(symbols, e));
    }
    rep = aggregate(std::move(results));
  }

  std::cout << "PER=" << detail::fixed2(rep.per) << "\n";
  std::cout << "WER=" << detail::fixed2(rep.wer) << "\n";
  if (buckets) {
    for (int b = 0; b < 4; ++b)
      std::cout << "LENGTH_" << kLengthBucketNames[b] << "_WER="
                << detail::fixed2(rep.length_buckets[b].wer) << " ("
                << rep.length_buckets[b].errors << "/" << rep.length_buckets[b].words
                << ")\n";
    for (int b = 0; b < 4; ++b)
      std::cout << "PERBUCKET_" << kPerBucketNames[b] << "=" << rep.per_histogram[b]
                << "\n";
  }
  if (worst_k > 0) {
    for (const auto& w : worst_errors(rep.words, static_cast<std::size_t>(worst_k)))
      std::cout << "WORST\t" << w.word << "\t" << w.distance << "\t"
                << detail::join(w.predicted) << "\t" << detail::join(w.chosen_truth)
                << "\n";
  }
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    if (!out) fail(ErrorKind::data, "cannot write report " + report_path);
    write_report(rep, out, buckets);
  }
  return 0;
}

int cmd_export_embeddings(const std::string& ckpt_path, const std::string& output_path) {
  auto ck = load_checkpoint(ckpt_path);
  std::ofstream file_out;
  std::ostream* out = &std::cout;
  if (!output_path.empty() && output_path != "-") {
    file_out.open(output_path);
    if (!file_out) fail(ErrorKind::data, "cannot write " + output_path);
    out = &file_out;
  }
  const auto& table = ck.params.phonemes.table;
  int dim = table.extent(1);
  // real phoneme symbols only; reserved rows stay internal
  for (int id = 3; id < ck.phonemes.size(); ++id) {
    *out << ck.phonemes.symbol(id);
    for (int j = 0; j < dim; ++j) *out << '\t' << float_repr(table.data()[id * dim + j]);
    *out << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attention-based grapheme-to-phoneme toolkit"};
  app.require_subcommand(1);

  TrainArgs targs;
  std::string train_config_path;
  auto* train = app.add_subcommand("train", "train a model on a lexicon");
  train->add_option("--config", train_config_path,
                    "key=value config file (explicit flags take precedence)");
  train->add_option("--train", targs.train_path, "training lexicon");
  train->add_option("--dev", targs.dev_path, "development lexicon");
  train->add_option("--dev-sample", targs.dev_sample,
                    "sample this many words out of the training set as dev");
  train->add_option("--dataset", targs.dataset,
                    "validate split sizes for a standard setup "
                    "(cmudict|pronlex|nettalk)");
  train->add_option("--out", targs.out_dir, "output directory")
      ->capture_default_str();
  train->add_option("--attention", targs.attention,
                    "none|global|local_m|local_p")
      ->capture_default_str();
  train->add_option("--encoder", targs.encoder,
                    "bidirectional|reverse_unidirectional")
      ->capture_default_str();
  train->add_option("--layers", targs.layers)->capture_default_str();
  train->add_option("--units", targs.units)->capture_default_str();
  train->add_option("--embed-dim", targs.embed_dim)->capture_default_str();
  train->add_option("--window", targs.window, "local attention half-width D")
      ->capture_default_str();
  train->add_flag("--input-feeding", targs.input_feeding,
                  "feed the previous context vector into the decoder input");
  train->add_option("--dropout", targs.dropout, "between-layer dropout probability")
      ->capture_default_str();
  train->add_option("--batch-size", targs.batch_size)->capture_default_str();
  train->add_option("--epochs", targs.epochs)->capture_default_str();
  train->add_option("--lr", targs.lr, "initial learning rate")->capture_default_str();
  train->add_option("--lr-decay", targs.lr_decay)->capture_default_str();
  train->add_option("--sampling-floor", targs.sampling_floor,
                    "scheduled sampling floor probability")
      ->capture_default_str();
  train->add_option("--sampling-horizon", targs.sampling_horizon,
                    "epochs to reach the floor (0: the epoch budget)")
      ->capture_default_str();
  train->add_option("--clip-norm", targs.clip_norm)->capture_default_str();
  train->add_option("--seed", targs.seed)->capture_default_str();
  train->add_option("--data-seed", targs.data_seed,
                    "separate seed for the dev sample (0: follow --seed); "
                    "ensemble members need a shared split with distinct --seed")
      ->capture_default_str();
  train->add_flag("--grid", targs.grid,
                  "tune dropout and input feeding on the dev set");
  train->add_flag("--retrain-on-full", targs.retrain_on_full,
                  "after --grid, retrain the chosen model on the full "
                  "training set (implied by --dataset nettalk)");
  train->add_option("--workers", targs.workers, "parallel decode workers")
      ->capture_default_str();
  train->add_flag("--check-numerics", targs.check_numerics,
                  "fail fast on NaN/Inf activations");

  std::string pr_ckpt, pr_in = "-", pr_out = "-";
  auto* predict = app.add_subcommand("predict", "greedy-decode a word list");
  predict->add_option("--checkpoint", pr_ckpt)->required();
  predict->add_option("--input", pr_in, "word list, one per line (- for stdin)")
      ->capture_default_str();
  predict->add_option("--output", pr_out, "predictions (- for stdout)")
      ->capture_default_str();

  std::vector<std::string> ev_ckpts;
  std::string ev_test, ev_report;
  bool ev_ensemble = false, ev_buckets = false;
  int ev_worst = 0, ev_workers = 1;
  std::uint64_t ev_seed = 1;
  auto* eval = app.add_subcommand("eval", "score a model on a test lexicon");
  eval->add_option("--checkpoint", ev_ckpts, "checkpoint (repeat 5x with --ensemble)")
      ->required();
  eval->add_option("--test", ev_test, "test lexicon")->required();
  eval->add_flag("--ensemble", ev_ensemble, "vote over 5 models");
  eval->add_flag("--buckets", ev_buckets, "report length and per-word-PER buckets");
  eval->add_option("--report", ev_report, "write the full per-word report here");
  eval->add_option("--worst", ev_worst, "also list the k worst predictions");
  eval->add_option("--workers", ev_workers)->capture_default_str();
  eval->add_option("--seed", ev_seed, "tie-break seed for --ensemble")
      ->capture_default_str();

  std::string ex_ckpt, ex_out = "-";
  auto* exp = app.add_subcommand("export-embeddings",
                                 "dump learned phoneme embeddings as a table");
  exp->add_option("--checkpoint", ex_ckpt)->required();
  exp->add_option("--output", ex_out)->capture_default_str();

  // config values land between the defaults and the explicit flags, so the
  // file is applied before CLI11 parses the command line
  try {
    for (int i = 1; i + 1 < argc; ++i)
      if (std::string(argv[i]) == "--config") apply_config_file(argv[i + 1], targs);
    for (int i = 1; i < argc; ++i) {
      std::string arg = argv[i];
      if (arg.rfind("--config=", 0) == 0) apply_config_file(arg.substr(9), targs);
    }
  } catch (const G2pError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;  // usage error
  }

  try {
    if (*train) return cmd_train(targs);
    if (*predict) return cmd_predict(pr_ckpt, pr_in, pr_out);
    if (*eval)
      return cmd_eval(ev_ckpts, ev_test, ev_ensemble, ev_buckets, ev_report,
                      ev_worst, ev_workers, ev_seed);
    if (*exp) return cmd_export_embeddings(ex_ckpt, ex_out);
  } catch (const G2pError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
