#include <sstream>

#include "doctest.h"
#include "fan/cli.hpp"
#include "fan/model_file.hpp"
#include "support/temp_dir.hpp"

using namespace fan;
using namespace fan::testing;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(const std::vector<std::string>& args, const std::string& input = "") {
  std::istringstream in(input);
  std::ostringstream out, err;
  const int code = run_cli(args, in, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> small_model_args() {
  return {"--encoder-blocks", "1", "--hidden", "16", "--heads", "2", "--max-positions", "64",
          "--lr", "1e-3", "--batch-size", "8", "--epochs", "2", "--quiet"};
}

std::vector<std::string> join(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// A small corpus plus a model trained on it, shared by the tests below.
struct Workspace {
  TempDir dir;
  std::string data;
  std::string model;

  Workspace() : data((dir / "data").string()), model((dir / "m.fan").string()) {
    REQUIRE(run({"synth", "--out", data, "--train", "40", "--valid", "10", "--test", "10"}).code == 0);
    const auto r = run(join({"train", "--data-dir", data, "--out", model}, small_model_args()));
    REQUIRE_MESSAGE(r.code == 0, r.err);
  }
};

Workspace& workspace() {
  static Workspace w;
  return w;
}

}  // namespace

TEST_CASE("cli rejects a lambda outside (0,1)") {
  const auto r = run(join({"train", "--data-dir", workspace().data, "--out", "x", "--lambda", "1.5"}, small_model_args()));
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("lambda must be in (0,1)") != std::string::npos);
}

TEST_CASE("cli usage errors") {
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"frobnicate"}).code == kExitUsage);
  CHECK(run({"train", "--out", "x"}).code == kExitUsage);
  CHECK(run({"bench", "--data-dir", workspace().data, "--shape", "huge"}).code == kExitUsage);
  const auto ablate = run(join({"train", "--data-dir", workspace().data, "--out", "x", "--ablate", "decoder"},
                               small_model_args()));
  CHECK(ablate.code == kExitUsage);
}

TEST_CASE("cli train writes a model and history") {
  auto& w = workspace();
  CHECK(load_model(w.model).config.encoder.hidden == 16);
  const auto history = read_file(w.model + ".history.csv");
  CHECK(history.find("epoch,train_loss,val_intent_acc,val_slot_f1,val_sem_acc\n1,") == 0);
}

TEST_CASE("cli train reports progress unless quiet") {
  auto& w = workspace();
  auto args = small_model_args();
  args.pop_back();
  const auto r = run(join({"train", "--data-dir", w.data, "--out", (w.dir / "loud.fan").string()}, args));
  CHECK(r.code == 0);
  CHECK(r.err.find("epoch 1") != std::string::npos);
  CHECK(r.out.find("Intent (Acc)") != std::string::npos);
}

TEST_CASE("cli eval writes a json report") {
  auto& w = workspace();
  const auto r = run({"eval", "--model", w.model, "--data-dir", w.data, "--split", "test"});
  CHECK(r.code == 0);
  CHECK(r.out.find("semantic_accuracy=") != std::string::npos);
  CHECK(read_file(w.model + ".test.eval.json").find("\"num_utterances\": 10") != std::string::npos);
}

TEST_CASE("cli eval rejects an unknown split") {
  auto& w = workspace();
  const auto r = run({"eval", "--model", w.model, "--data-dir", w.data, "--split", "holdout"});
  CHECK(r.code != 0);
  CHECK(r.err.find("unknown split") != std::string::npos);
}

TEST_CASE("cli predict output format") {
  auto& w = workspace();
  const auto r = run({"predict", "--model", w.model}, "Find Fish story\n\nzzzunseen word\n");
  CHECK(r.code == 0);
  std::istringstream lines(r.out);
  std::string first, second, extra;
  std::getline(lines, first);
  std::getline(lines, second);
  CHECK_FALSE(std::getline(lines, extra));
  const auto tab = first.find('\t');
  REQUIRE(tab != std::string::npos);
  const auto slots = first.substr(tab + 1);
  CHECK(slots.find("Find:") == 0);
  CHECK(slots.find(" Fish:") != std::string::npos);
  CHECK(slots.find(" story:") != std::string::npos);
  CHECK(second.find("zzzunseen:") != std::string::npos);
  CHECK(r.err.find("line 2 is empty") != std::string::npos);
}

TEST_CASE("cli predict warns about truncation") {
  auto& w = workspace();
  std::string longline;
  for (int i = 0; i < 60; ++i) longline += "find ";
  const auto r = run({"predict", "--model", w.model}, longline + "\n");
  CHECK(r.code == 0);
  CHECK(r.err.find("predicting on the first 50") != std::string::npos);
  const auto slots = r.out.substr(r.out.find('\t') + 1);
  CHECK(std::count(slots.begin(), slots.end(), ':') == 50);
}

TEST_CASE("cli bench errors") {
  auto& w = workspace();
  CHECK(run({"bench", "--data-dir", w.data}).code == kExitUsage);
  CHECK(run({"bench", "--data-dir", w.data, "--model", w.model, "--repeats", "0"}).code == kExitUsage);
  CHECK(run({"bench", "--data-dir", w.data, "--model", w.model, "--baseline", "nope"}).code == kExitUsage);
}

TEST_CASE("cli bench table") {
  auto& w = workspace();
  const auto csv = (w.dir / "bench.csv").string();
  const auto r = run({"bench", "--data-dir", w.data, "--model", w.model, "--warmup", "1", "--repeats", "1", "--limit",
                      "3", "--csv", csv});
  CHECK(r.code == 0);
  CHECK(r.out.find("Latency (ms)") != std::string::npos);
  CHECK(r.out.find("1.0x") != std::string::npos);
  CHECK(read_file(csv).find("\nm,3,1,") != std::string::npos);
}

TEST_CASE("cli config file supplies defaults and the command line wins") {
  auto& w = workspace();
  const auto cfg = w.dir / "run.cfg";
  write_file(cfg, "# small run\nhidden = 8\nepochs=1\nlambda=0.25\n");
  const auto out = (w.dir / "cfg.fan").string();
  const auto r = run(join({"train", "--data-dir", w.data, "--out", out, "--config", cfg.string(), "--hidden", "12"},
                          {"--encoder-blocks", "1", "--heads", "2", "--max-positions", "64", "--quiet"}));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto m = load_model(out);
  CHECK(m.config.encoder.hidden == 12);
  CHECK(m.train.max_epochs == 1);
  CHECK(m.train.lambda == 0.25);

  write_file(cfg, "hiden=8\n");
  const auto bad = run({"train", "--data-dir", w.data, "--out", out, "--config", cfg.string()});
  CHECK(bad.code == kExitData);
  CHECK(bad.err.find("unknown key 'hiden'") != std::string::npos);
}

TEST_CASE("cli corrupt or missing model exits with a data error") {
  auto& w = workspace();
  const auto bad = w.dir / "bad.fan";
  write_file(bad, "FANM1\n12\nnot a manifest");
  const auto r = run({"eval", "--model", bad.string(), "--data-dir", w.data});
  CHECK(r.code == kExitData);
  CHECK(r.err.find("bad.fan") != std::string::npos);
  CHECK(run({"predict", "--model", (w.dir / "absent.fan").string()}).code == kExitData);
}

TEST_CASE("cli missing corpus exits with a data error") {
  auto& w = workspace();
  const auto r = run(join({"train", "--data-dir", (w.dir / "nowhere").string(), "--out", "x"}, small_model_args()));
  CHECK(r.code == kExitData);
}

TEST_CASE("cli heads sweep skips non-divisors") {
  auto& w = workspace();
  auto args = join({"heads", "--data-dir", w.data, "--sweep", "2,3"}, small_model_args());
  const auto r = run(args);
  CHECK(r.code == 0);
  CHECK(r.err.find("skipping h=3") != std::string::npos);
  CHECK(r.out.find("h=2") != std::string::npos);
}

TEST_CASE("cli ablate reports every variant") {
  auto& w = workspace();
  auto args = small_model_args();
  args[args.size() - 2] = "1";
  const auto r = run(join({"ablate", "--data-dir", w.data, "--out-dir", (w.dir / "abl").string()}, args));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  for (const char* name : {"fan", "w/o label-attn", "w/o mhsa", "w/o ffn", "w/o all"}) {
    CHECK(r.out.find(name) != std::string::npos);
  }
  CHECK(std::filesystem::exists(w.dir / "abl" / "w_o_all.fanm"));
}
