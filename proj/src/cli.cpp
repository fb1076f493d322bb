#include "fan/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "fan/bench.hpp"
#include "fan/data.hpp"
#include "fan/metrics.hpp"
#include "fan/model_file.hpp"
#include "fan/parallel.hpp"
#include "fan/trainer.hpp"

namespace fan {

namespace {

namespace fs = std::filesystem;

// Thrown for bad flag combinations found after CLI11 parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flat key=value file; keys are long flag names without the leading dashes.
// Options given on the command line win over the file.
void apply_config_file(CLI::App* app, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file " + path);
  std::set<CLI::Option*> from_file;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(path, line_no, "expected key=value");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "config") throw ParseError(path, line_no, "config files cannot include other config files");
    CLI::Option* opt = app->get_option_no_throw("--" + key);
    if (!opt) throw ParseError(path, line_no, "unknown key '" + key + "' for " + app->get_name());
    if (opt->count() > 0 && !from_file.count(opt)) continue;
    from_file.insert(opt);
    opt->add_result(value);
  }
  for (auto* opt : from_file) opt->run_callback();
}

fs::path split_dir(const fs::path& data_dir, const std::string& split) {
  if (split != "train" && split != "valid" && split != "dev" && split != "test") {
    throw UsageError("unknown split '" + split + "' (expected train, valid or test)");
  }
  if (split == "valid" && !fs::exists(data_dir / "valid") && fs::exists(data_dir / "dev")) return data_dir / "dev";
  return data_dir / split;
}

std::vector<std::vector<std::string>> tokens_of(const std::vector<Utterance>& utts) {
  std::vector<std::vector<std::string>> out;
  for (const auto& u : utts) out.push_back(u.tokens);
  return out;
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * v);
  return buf;
}

struct TrainingOptions {
  std::string data_dir;
  std::string config;
  std::size_t encoder_blocks = 4;
  std::size_t hidden = 312;
  std::size_t heads = 12;
  std::size_t encoder_heads = 0;
  std::size_t ffn_dim = 0;
  std::size_t encoder_ffn_dim = 0;
  std::size_t max_positions = 512;
  std::string activation = "relu";
  std::vector<std::string> ablate;
  bool scale_full_d = false;
  bool no_clip = false;
  bool quiet = false;
  TrainConfig train;
};

void add_training_options(CLI::App* app, TrainingOptions& o) {
  app->add_option("--data-dir", o.data_dir, "Corpus root with train/valid/test splits")->required();
  app->add_option("--config", o.config, "Flat key=value file of flag defaults");
  app->add_option("--encoder-blocks", o.encoder_blocks, "Encoder blocks")->capture_default_str();
  app->add_option("--hidden", o.hidden, "Model width d")->capture_default_str();
  app->add_option("--heads", o.heads, "FAN attention heads h")->capture_default_str();
  app->add_option("--encoder-heads", o.encoder_heads, "Encoder attention heads (default: --heads)");
  app->add_option("--ffn-dim", o.ffn_dim, "FAN feed-forward width (default: d)");
  app->add_option("--encoder-ffn-dim", o.encoder_ffn_dim, "Encoder feed-forward width (default: 4d)");
  app->add_option("--max-positions", o.max_positions, "Position embedding rows")->capture_default_str();
  app->add_option("--activation", o.activation, "Encoder activation")
      ->check(CLI::IsMember({"relu", "gelu"}))
      ->capture_default_str();
  app->add_option("--ablate", o.ablate, "Remove a FAN component (repeatable)")
      ->check(CLI::IsMember({"label-attn", "mhsa", "ffn"}));
  app->add_flag("--scale-full-d", o.scale_full_d, "Scale attention logits by sqrt(d) instead of sqrt(d/h)");
  app->add_option("--lambda", o.train.lambda, "Intent/slot loss mixture")->capture_default_str();
  app->add_option("--lr", o.train.learning_rate, "Adam learning rate")->capture_default_str();
  app->add_option("--batch-size", o.train.batch_size, "Training batch size")->capture_default_str();
  app->add_option("--epochs", o.train.max_epochs, "Maximum epochs")->capture_default_str();
  app->add_option("--seed", o.train.seed, "Random seed")->capture_default_str();
  app->add_option("--max-len", o.train.max_len, "Content tokens kept per utterance")->capture_default_str();
  app->add_option("--patience", o.train.patience, "Early-stopping patience in epochs (0 = off)")
      ->capture_default_str();
  app->add_option("--dropout", o.train.dropout, "Dropout rate")->capture_default_str();
  app->add_option("--clip-norm", o.train.clip_norm, "Global gradient-norm clip")->capture_default_str();
  app->add_flag("--no-clip", o.no_clip, "Disable gradient clipping");
  app->add_option("--min-freq", o.train.min_freq, "Minimum token count for the vocabulary")->capture_default_str();
  app->add_flag("--quiet", o.quiet, "No per-epoch progress");
}

ModelConfig model_config_from(const TrainingOptions& o) {
  ModelConfig c;
  c.encoder.num_blocks = o.encoder_blocks;
  c.encoder.hidden = o.hidden;
  c.encoder.heads = o.encoder_heads ? o.encoder_heads : o.heads;
  c.encoder.ffn_dim = o.encoder_ffn_dim;
  c.encoder.max_positions = o.max_positions;
  c.encoder.activation = parse_activation(o.activation);
  c.fan.heads = o.heads;
  c.fan.ffn_dim = o.ffn_dim;
  c.fan.scale_full_d = o.scale_full_d;
  for (const auto& a : o.ablate) {
    if (a == "label-attn") c.fan.use_label_attention = false;
    if (a == "mhsa") c.fan.use_mhsa = false;
    if (a == "ffn") c.fan.use_ffn = false;
  }
  return c;
}

TrainConfig train_config_from(TrainingOptions o) {
  if (o.no_clip) o.train.clip_norm = 0.0;
  o.train.validate();
  return o.train;
}

struct Corpus {
  std::vector<Utterance> train, valid, test;
};

Corpus load_corpus(const std::string& data_dir, bool need_test, std::ostream& err) {
  Corpus c;
  c.train = load_split(split_dir(data_dir, "train"));
  const auto valid = split_dir(data_dir, "valid");
  if (fs::exists(valid)) {
    c.valid = load_split(valid);
  } else {
    err << "warning: no validation split under " << data_dir << "; selecting on the training set\n";
  }
  if (need_test) {
    const auto test = split_dir(data_dir, "test");
    if (fs::exists(test)) c.test = load_split(test);
  }
  return c;
}

TrainResult run_training(const Corpus& corpus, const ModelConfig& mc, const TrainConfig& tc, bool quiet,
                         const std::string& label, std::ostream& err) {
  return train(corpus.train, corpus.valid, mc, tc, [&](const EpochRecord& r) {
    if (quiet) return;
    char buf[200];
    std::snprintf(buf, sizeof buf, "%sepoch %zu  loss %.4f  intent %s  slot-f1 %s  sent %s\n", label.c_str(),
                  r.epoch, r.train_loss, percent(r.valid.intent_accuracy).c_str(),
                  percent(r.valid.slot_f1).c_str(), percent(r.valid.semantic_accuracy).c_str());
    err << buf << std::flush;
  });
}

// ---------------------------------------------------------------------------

int cmd_train(const TrainingOptions& o, const std::string& out_path, std::string history_path, std::ostream& out,
              std::ostream& err) {
  const auto mc = model_config_from(o);
  const auto tc = train_config_from(o);
  const auto corpus = load_corpus(o.data_dir, false, err);
  const auto result = run_training(corpus, mc, tc, o.quiet, "", err);
  save_model(out_path, bundle(result, tc));
  if (history_path.empty()) history_path = out_path + ".history.csv";
  write_history_csv(history_path, result.history);
  const auto& best = result.history.at(result.best_epoch - 1).valid;
  out << "best epoch " << result.best_epoch << " of " << result.history.size() << '\n'
      << headline(best) << "model written to " << out_path << '\n'
      << "history written to " << history_path << '\n';
  return kExitOk;
}

int cmd_eval(const std::string& model_path, const std::string& data_dir, const std::string& split,
             std::string report_path, std::ostream& out) {
  const auto dir = split_dir(data_dir, split);
  const NluModel m = load_model(model_path);
  const auto utts = load_split(dir);
  const auto report = evaluate_model(m.model, m.vocab, m.labels, utts, m.train.max_len);
  out << headline(report) << to_key_value(report);
  if (report_path.empty()) report_path = model_path + "." + split + ".eval.json";
  std::ofstream file(report_path, std::ios::binary);
  if (!file) throw DataError("cannot write " + report_path);
  file << to_json(report);
  out << "report written to " << report_path << '\n';
  return kExitOk;
}

int cmd_predict(const std::string& model_path, std::istream& in, std::ostream& out, std::ostream& err) {
  const NluModel m = load_model(model_path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto raw = split_whitespace(line);
    if (raw.empty()) {
      err << "warning: line " << line_no << " is empty; skipped\n";
      continue;
    }
    std::vector<std::string> lookup;
    for (const auto& t : raw) lookup.push_back(to_lower(t));
    if (lookup.size() > m.train.max_len) {
      err << "warning: line " << line_no << " has " << lookup.size() << " tokens; predicting on the first "
          << m.train.max_len << '\n';
    }
    const auto pred = predict_tokens(m.model, m.vocab, m.labels, {lookup}, m.train.max_len).front();
    out << pred.intent << '\t';
    for (std::size_t i = 0; i < pred.slots.size(); ++i) out << (i ? " " : "") << raw[i] << ':' << pred.slots[i];
    out << '\n';
  }
  return kExitOk;
}

int cmd_bench(const std::vector<std::string>& model_paths, const std::vector<std::string>& shapes,
              const std::string& data_dir, const std::string& split, std::size_t warmup, std::size_t repeats,
              std::string baseline, std::size_t limit, std::size_t threads, const std::string& csv_path,
              std::ostream& out, std::ostream& err) {
  if (model_paths.empty() && shapes.empty()) throw UsageError("no models given (use --model or --shape)");
  if (repeats == 0) throw UsageError("--repeats must be at least 1");
  if (threads) set_num_threads(threads);
  auto utts = load_split(split_dir(data_dir, split));
  if (limit && utts.size() > limit) utts.resize(limit);
  const auto test_tokens = tokens_of(utts);

  std::vector<LatencyReport> reports;
  for (const auto& path : model_paths) {
    const NluModel m = load_model(path);
    const std::string name = fs::path(path).stem().string();
    err << "measuring " << name << '\n';
    reports.push_back(measure(name, m.model, m.vocab, m.labels, test_tokens, m.train.max_len, warmup, repeats));
  }
  if (!shapes.empty()) {
    const auto train_set = load_split(split_dir(data_dir, "train"));
    const Vocab vocab = build_vocab(train_set);
    const LabelMaps labels = build_label_maps(train_set);
    for (const auto& shape_name : shapes) {
      const auto& s = named_shape(shape_name);
      ModelConfig mc;
      mc.encoder.num_blocks = s.blocks;
      mc.encoder.hidden = s.hidden;
      mc.encoder.heads = s.heads;
      mc.encoder.vocab_size = vocab.size();
      mc.fan.heads = s.heads;
      mc.num_intents = labels.num_intents();
      mc.num_slots = labels.num_slots();
      Rng rng(1);
      const auto model = init_model<float>(mc, rng);
      err << "measuring " << s.name << " (random init)\n";
      reports.push_back(measure(s.name, model, vocab, labels, test_tokens, 50, warmup, repeats));
    }
  }
  if (baseline.empty()) {
    baseline = std::max_element(reports.begin(), reports.end(), [](const auto& a, const auto& b) {
                 return a.mean_ms < b.mean_ms;
               })->model_name;
  }
  try {
    reports = compare(std::move(reports), baseline);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  out << format_table(reports);
  if (!csv_path.empty()) {
    std::ofstream file(csv_path, std::ios::binary);
    if (!file) throw DataError("cannot write " + csv_path);
    file << to_csv(reports);
  }
  return kExitOk;
}

struct Variant {
  std::string name;
  bool label_attention, mhsa, ffn;
};

std::string results_row(const std::string& name, std::size_t params, const EvalReport& r) {
  char buf[200];
  std::snprintf(buf, sizeof buf, "%-16s %12zu %12s %9s %10s\n", name.c_str(), params,
                percent(r.intent_accuracy).c_str(), percent(r.slot_f1).c_str(), percent(r.semantic_accuracy).c_str());
  return buf;
}

std::string results_header() {
  char buf[200];
  std::snprintf(buf, sizeof buf, "%-16s %12s %12s %9s %10s\n", "Model", "Params", "Intent (Acc)", "Slot (F1)",
                "Sent (Acc)");
  return buf;
}

int cmd_ablate(const TrainingOptions& o, const std::string& out_dir, std::ostream& out, std::ostream& err) {
  const auto base = model_config_from(o);
  const auto tc = train_config_from(o);
  const auto corpus = load_corpus(o.data_dir, true, err);
  const auto& eval_set = corpus.test.empty() ? (corpus.valid.empty() ? corpus.train : corpus.valid) : corpus.test;
  const std::vector<Variant> variants = {{"fan", true, true, true},
                                         {"w/o label-attn", false, true, true},
                                         {"w/o mhsa", true, false, true},
                                         {"w/o ffn", true, true, false},
                                         {"w/o all", false, false, false}};
  std::string table = results_header();
  for (const auto& v : variants) {
    auto mc = base;
    mc.fan.use_label_attention = v.label_attention;
    mc.fan.use_mhsa = v.mhsa;
    mc.fan.use_ffn = v.ffn;
    const auto result = run_training(corpus, mc, tc, o.quiet, "[" + v.name + "] ", err);
    const auto report = evaluate_model(result.model, result.vocab, result.labels, eval_set, tc.max_len);
    table += results_row(v.name, parameter_count(result.model), report);
    if (!out_dir.empty()) {
      fs::create_directories(out_dir);
      std::string file = v.name;
      for (auto& c : file) {
        if (c == ' ' || c == '/') c = '_';
      }
      save_model(fs::path(out_dir) / (file + ".fanm"), bundle(result, tc));
    }
  }
  out << table;
  return kExitOk;
}

int cmd_heads(const TrainingOptions& o, const std::vector<std::size_t>& head_counts, std::ostream& out,
              std::ostream& err) {
  auto base = model_config_from(o);
  const auto tc = train_config_from(o);
  const auto corpus = load_corpus(o.data_dir, true, err);
  const auto& eval_set = corpus.test.empty() ? (corpus.valid.empty() ? corpus.train : corpus.valid) : corpus.test;
  std::string table = results_header();
  for (std::size_t h : head_counts) {
    if (h == 0 || base.encoder.hidden % h != 0) {
      err << "skipping h=" << h << ": hidden size " << base.encoder.hidden << " is not divisible by it\n";
      continue;
    }
    auto mc = base;
    mc.fan.heads = h;
    const std::string name = "h=" + std::to_string(h);
    const auto result = run_training(corpus, mc, tc, o.quiet, "[" + name + "] ", err);
    table += results_row(name, parameter_count(result.model),
                         evaluate_model(result.model, result.vocab, result.labels, eval_set, tc.max_len));
  }
  out << table;
  return kExitOk;
}

int cmd_synth(const std::string& out_dir, const SyntheticOptions& options, std::ostream& out) {
  write_corpus(out_dir, generate_synthetic_corpus(options));
  out << "synthetic corpus written to " << out_dir << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app("Joint intent detection and slot filling with a fast attention network", "fan");
  app.require_subcommand(1);

  TrainingOptions train_opts;
  std::string train_out, history;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write the best checkpoint");
  add_training_options(train_cmd, train_opts);
  train_cmd->add_option("--out", train_out, "Model file to write")->required();
  train_cmd->add_option("--history", history, "History CSV (default: <out>.history.csv)");

  std::string model_path, data_dir, split = "test", report_path;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a model on a corpus split");
  eval_cmd->add_option("--model", model_path, "Model file")->required();
  eval_cmd->add_option("--data-dir", data_dir, "Corpus root")->required();
  eval_cmd->add_option("--split", split, "train, valid or test")->capture_default_str();
  eval_cmd->add_option("--report", report_path, "JSON report path (default: <model>.<split>.eval.json)");

  auto* predict_cmd = app.add_subcommand("predict", "Tag utterances read one per line from standard input");
  predict_cmd->add_option("--model", model_path, "Model file")->required();

  std::vector<std::string> bench_models, bench_shapes;
  std::string baseline, csv_path, bench_split = "test";
  std::size_t warmup = 10, repeats = 3, limit = 0, threads = 0;
  auto* bench_cmd = app.add_subcommand("bench", "Per-utterance latency of one or more models");
  bench_cmd->add_option("--model", bench_models, "Model file (repeatable)");
  bench_cmd->add_option("--shape", bench_shapes, "Randomly initialised named shape: tiny, distil or bert (repeatable)")
      ->check(CLI::IsMember({"tiny", "distil", "bert"}));
  bench_cmd->add_option("--data-dir", data_dir, "Corpus root")->required();
  bench_cmd->add_option("--split", bench_split, "Split to time")->capture_default_str();
  bench_cmd->add_option("--warmup", warmup, "Untimed predictions before measuring")->capture_default_str();
  bench_cmd->add_option("--repeats", repeats, "Timed passes over the split")->capture_default_str();
  bench_cmd->add_option("--baseline", baseline, "Model name for the speedup column (default: slowest)");
  bench_cmd->add_option("--limit", limit, "Use only the first N utterances (0 = all)");
  bench_cmd->add_option("--threads", threads, "Tensor-core threads (default: FAN_THREADS or 1)");
  bench_cmd->add_option("--csv", csv_path, "Also write the reports as CSV");

  TrainingOptions ablate_opts;
  std::string ablate_out;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train the full model and each ablation, report test metrics");
  add_training_options(ablate_cmd, ablate_opts);
  ablate_cmd->add_option("--out-dir", ablate_out, "Directory for the trained variants");

  TrainingOptions heads_opts;
  std::vector<std::size_t> head_counts = {1, 2, 3, 4, 6, 8, 12, 16, 24};
  auto* heads_cmd = app.add_subcommand("heads", "Sweep the FAN head count");
  add_training_options(heads_cmd, heads_opts);
  heads_cmd->add_option("--sweep", head_counts, "Head counts to try")->delimiter(',')->capture_default_str();

  std::string synth_out;
  SyntheticOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "Write the synthetic corpus");
  synth_cmd->add_option("--out", synth_out, "Corpus root to create")->required();
  synth_cmd->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
  synth_cmd->add_option("--train", synth.train_size, "Training utterances")->capture_default_str();
  synth_cmd->add_option("--valid", synth.valid_size, "Validation utterances")->capture_default_str();
  synth_cmd->add_option("--test", synth.test_size, "Test utterances")->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
    for (auto [cmd, opts] : {std::pair{train_cmd, &train_opts}, std::pair{ablate_cmd, &ablate_opts},
                             std::pair{heads_cmd, &heads_opts}}) {
      if (cmd->parsed() && !opts->config.empty()) apply_config_file(cmd, opts->config);
    }
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(train_opts, train_out, history, out, err);
    if (eval_cmd->parsed()) return cmd_eval(model_path, data_dir, split, report_path, out);
    if (predict_cmd->parsed()) return cmd_predict(model_path, in, out, err);
    if (bench_cmd->parsed()) {
      return cmd_bench(bench_models, bench_shapes, data_dir, bench_split, warmup, repeats, baseline, limit, threads,
                       csv_path, out, err);
    }
    if (ablate_cmd->parsed()) return cmd_ablate(ablate_opts, ablate_out, out, err);
    if (heads_cmd->parsed()) return cmd_heads(heads_opts, head_counts, out, err);
    if (synth_cmd->parsed()) return cmd_synth(synth_out, synth, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitUsage;
}

}  // namespace fan
