#include <cmath>

#include "doctest.h"
#include "fan/model_file.hpp"
#include "fan/trainer.hpp"
#include "support/fixtures.hpp"
#include "support/temp_dir.hpp"

using namespace fan;
using namespace fan::testing;

namespace {

ModelConfig small_model_config() {
  ModelConfig c;
  c.encoder.num_blocks = 1;
  c.encoder.hidden = 16;
  c.encoder.heads = 2;
  c.encoder.max_positions = 64;
  c.fan.heads = 2;
  return c;
}

TrainConfig small_train_config() {
  TrainConfig t;
  t.learning_rate = 1e-3;
  t.batch_size = 8;
  t.max_epochs = 5;
  t.patience = 0;
  return t;
}

SyntheticCorpus small_corpus() {
  SyntheticOptions o;
  o.train_size = 48;
  o.valid_size = 16;
  o.test_size = 16;
  return generate_synthetic_corpus(o);
}

}  // namespace

TEST_CASE("adam first step moves by the learning rate") {
  std::vector<double> param = {1.0, -2.0, 0.5}, grad = {0.3, -4.0, 1e-3}, m(3), v(3);
  AdamHyper h;
  h.learning_rate = 0.1;
  adam_step<double>(param, grad, m, v, 1, h);
  // With t=1 the bias-corrected moments are g and g², so the step is lr·g/(|g|+eps).
  CHECK(param[0] == doctest::Approx(1.0 - 0.1 * 0.3 / (0.3 + 1e-8)).epsilon(1e-12));
  CHECK(param[1] == doctest::Approx(-2.0 + 0.1 * 4.0 / (4.0 + 1e-8)).epsilon(1e-12));
  CHECK(param[2] == doctest::Approx(0.5 - 0.1 * 1e-3 / (1e-3 + 1e-8)).epsilon(1e-12));
  CHECK(m[0] == doctest::Approx(0.1 * 0.3));
  CHECK(v[1] == doctest::Approx(0.001 * 16.0));
}

TEST_CASE("adam with unit gradient") {
  std::vector<double> param = {1.0}, grad = {1.0}, m(1), v(1);
  AdamHyper h;
  h.learning_rate = 0.1;
  adam_step<double>(param, grad, m, v, 1, h);
  CHECK(param[0] == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-14));
}

TEST_CASE("adam leaves parameters alone for zero gradient") {
  std::vector<float> param = {0.25f, -1.0f}, grad = {0.0f, 0.0f}, m(2), v(2);
  adam_step<float>(param, grad, m, v, 1, AdamHyper{});
  CHECK(param[0] == 0.25f);
  CHECK(param[1] == -1.0f);
}

TEST_CASE("adam second step uses bias correction") {
  std::vector<double> param = {0.0}, m(1), v(1);
  AdamHyper h;
  h.learning_rate = 1.0;
  h.epsilon = 0.0;
  std::vector<double> g1 = {1.0}, g2 = {3.0};
  adam_step<double>(param, g1, m, v, 1, h);
  adam_step<double>(param, g2, m, v, 2, h);
  const double m2 = 0.9 * 0.1 * 1.0 + 0.1 * 3.0;
  const double v2 = 0.999 * 0.001 * 1.0 + 0.001 * 9.0;
  const double m_hat = m2 / (1 - 0.81), v_hat = v2 / (1 - 0.999 * 0.999);
  CHECK(param[0] == doctest::Approx(-1.0 - m_hat / std::sqrt(v_hat)).epsilon(1e-12));
}

TEST_CASE("adam rejects mismatched buffers") {
  std::vector<double> param(3), grad(2), m(3), v(3);
  CHECK_THROWS_AS(adam_step<double>(param, grad, m, v, 1, AdamHyper{}), ShapeError);
}

TEST_CASE("gradient clipping scales to the ceiling") {
  auto s = tiny_setup();
  Rng rng(3);
  auto model = init_model<double>(s.config, rng);
  zero_grads(model);
  double expected_sq = 0.0;
  visit_parameters(model, [&](const std::string&, Tensor<double>& t) {
    for (auto& g : t.grad()) {
      g = rng.normal();
      expected_sq += g * g;
    }
  });
  const double norm = clip_gradients(model, 1.0);
  CHECK(norm == doctest::Approx(std::sqrt(expected_sq)));
  double after_sq = 0.0;
  visit_parameters(model, [&](const std::string&, Tensor<double>& t) {
    for (auto g : t.grad()) after_sq += g * g;
  });
  CHECK(std::sqrt(after_sq) == doctest::Approx(1.0));
  CHECK(clip_gradients(model, 10.0) == doctest::Approx(1.0));
}

TEST_CASE("train config validation") {
  TrainConfig t;
  t.lambda = 1.5;
  CHECK_THROWS_WITH_AS(t.validate(), "lambda must be in (0,1)", ConfigError);
  t = {};
  t.learning_rate = 0.0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t = {};
  t.batch_size = 0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
}

TEST_CASE("training is reproducible for a fixed seed") {
  const auto corpus = small_corpus();
  const auto config = small_train_config();
  const auto a = train(corpus.train, corpus.valid, small_model_config(), config);
  const auto b = train(corpus.train, corpus.valid, small_model_config(), config);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) CHECK(a.history[i].train_loss == b.history[i].train_loss);
  CHECK(a.best_epoch == b.best_epoch);
}

TEST_CASE("training loss decreases over early epochs") {
  const auto corpus = small_corpus();
  const auto result = train(corpus.train, corpus.valid, small_model_config(), small_train_config());
  REQUIRE(result.history.size() == 5);
  int increases = 0;
  for (std::size_t i = 1; i < result.history.size(); ++i) {
    increases += result.history[i].train_loss >= result.history[i - 1].train_loss;
  }
  CHECK(increases <= 1);
  CHECK(result.history.back().train_loss < result.history.front().train_loss);
}

TEST_CASE("training reports epochs through the callback") {
  const auto corpus = small_corpus();
  auto config = small_train_config();
  config.max_epochs = 2;
  std::vector<std::size_t> seen;
  train(corpus.train, {}, small_model_config(), config, [&](const EpochRecord& r) { seen.push_back(r.epoch); });
  CHECK(seen == std::vector<std::size_t>{1, 2});
}

TEST_CASE("patience stops training early") {
  const auto corpus = small_corpus();
  auto config = small_train_config();
  config.learning_rate = 1e-12;
  config.max_epochs = 20;
  config.patience = 2;
  const auto result = train(corpus.train, corpus.valid, small_model_config(), config);
  CHECK(result.history.size() < 20);
  CHECK(result.best_epoch >= 1);
}

TEST_CASE("divergent training raises a numeric error") {
  const auto corpus = small_corpus();
  auto config = small_train_config();
  config.learning_rate = 1e36;
  config.clip_norm = 0.0;
  CHECK_THROWS_AS(train(corpus.train, corpus.valid, small_model_config(), config), NumericError);
}

TEST_CASE("history csv layout") {
  EpochRecord r;
  r.epoch = 1;
  r.train_loss = 2.5;
  r.valid.intent_accuracy = 0.5;
  r.valid.slot_f1 = 0.25;
  r.valid.semantic_accuracy = 0.125;
  CHECK(history_csv({r}) ==
        "epoch,train_loss,val_intent_acc,val_slot_f1,val_sem_acc\n1,2.500000,0.500000,0.250000,0.125000\n");
}

TEST_CASE("saved checkpoint reproduces metrics") {
  const auto corpus = small_corpus();
  auto config = small_train_config();
  config.max_epochs = 3;
  const auto result = train(corpus.train, corpus.valid, small_model_config(), config);
  const auto before = evaluate_model(result.model, result.vocab, result.labels, corpus.test, config.max_len);

  TempDir dir;
  save_model(dir / "m.fan", bundle(result, config));
  const auto loaded = load_model(dir / "m.fan");
  const auto after = evaluate_model(loaded.model, loaded.vocab, loaded.labels, corpus.test, config.max_len);
  CHECK(after.intent_accuracy == before.intent_accuracy);
  CHECK(after.slot_f1 == before.slot_f1);
  CHECK(after.semantic_accuracy == before.semantic_accuracy);
  CHECK(after.intent_confusion == before.intent_confusion);
}
