#include <cmath>
#include <numeric>

#include "doctest.h"
#include "fan/decoder.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

using namespace fan;
using namespace fan::testing;

namespace {

// One item with `len` content tokens, all labelled.
Batch labelled_batch(std::int32_t intent, std::vector<std::int32_t> slots) {
  Batch b;
  b.batch_size = 1;
  b.content_len = slots.size();
  b.lengths = {slots.size()};
  b.token_ids.assign(slots.size() + 2, Vocab::kUnk);
  b.attention_mask.assign(slots.size() + 2, 1);
  b.gold_intents = {intent};
  b.gold_slots = std::move(slots);
  return b;
}

}  // namespace

TEST_CASE("zero representations and weights give a uniform intent distribution") {
  DecoderParams<double> p{Tensor<double>({4, 5}), Tensor<double>({5}), Tensor<double>({4, 3}),
                          Tensor<double>({3})};
  const auto probs = predict(Tensor<double>({1, 4}), Tensor<double>({2, 4}), p);
  for (auto v : probs.intent.values()) CHECK(v == doctest::Approx(0.2));
  for (auto v : probs.slot.values()) CHECK(v == doctest::Approx(1.0 / 3));
}

TEST_CASE("predicted distributions sum to one") {
  Rng rng(1);
  const DecoderParams<double> p{random_tensor({6, 4}, rng), random_tensor({4}, rng), random_tensor({6, 7}, rng),
                                random_tensor({7}, rng)};
  const auto probs = predict(random_tensor({3, 6}, rng, 4.0), random_tensor({9, 6}, rng, 4.0), p);
  for (const auto* t : {&probs.intent, &probs.slot}) {
    for (std::size_t r = 0; r < t->rows(); ++r) {
      const auto row = t->row(r);
      CHECK(std::accumulate(row.begin(), row.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("joint loss closed forms") {
  SUBCASE("uniform intent over 21 labels") {
    DecoderLogits<double> logits{Tensor<double>({1, 21}), Tensor<double>({1, 4})};
    const auto loss = joint_loss(logits, labelled_batch(7, {0}), 0.5);
    CHECK(loss.intent == doctest::Approx(std::log(21.0)));
    CHECK(loss.intent == doctest::Approx(3.0445).epsilon(1e-4));
  }
  SUBCASE("mixture arithmetic") {
    CHECK(mix_losses(2.0, 4.0, 0.5) == doctest::Approx(3.0));
  }
  SUBCASE("confident correct predictions give zero loss") {
    DecoderLogits<double> logits{Tensor<double>::matrix({{-1000, 1000, -1000}}),
                                 Tensor<double>::matrix({{1000, -1000}, {-1000, 1000}})};
    const auto loss = joint_loss(logits, labelled_batch(1, {0, 1}), 0.5);
    CHECK(loss.total == 0.0);
  }
}

TEST_CASE("slot loss is summed over valid tokens and averaged over the batch") {
  Batch b;
  b.batch_size = 2;
  b.content_len = 2;
  b.lengths = {2, 1};
  b.gold_intents = {0, 0};
  b.gold_slots = {0, 0, 0, kIgnoreSlot};
  DecoderLogits<double> logits{Tensor<double>({2, 2}), Tensor<double>({4, 3})};
  const auto loss = joint_loss(logits, b, 0.5);
  // Three valid tokens at ln 3 each, over two items.
  CHECK(loss.slot == doctest::Approx(3 * std::log(3.0) / 2));
  CHECK(loss.intent == doctest::Approx(std::log(2.0)));
}

TEST_CASE("joint loss errors") {
  DecoderLogits<double> logits{Tensor<double>({1, 3}), Tensor<double>({2, 4})};
  CHECK_THROWS_AS(joint_loss(logits, labelled_batch(3, {0, 0}), 0.5), DataError);
  CHECK_THROWS_AS(joint_loss(logits, labelled_batch(0, {0, 4}), 0.5), DataError);
  CHECK_THROWS_AS(joint_loss(logits, labelled_batch(0, {0, 0}), 1.5), ConfigError);
  CHECK_THROWS_AS(joint_loss(logits, labelled_batch(0, {0}), 0.5), ShapeError);
  CHECK_NOTHROW(joint_loss(logits, labelled_batch(0, {0, 0}), 1.0));
  LossConfig config{1.5};
  CHECK_THROWS_WITH_AS(config.validate(), "lambda must be in (0,1)", ConfigError);
  config.lambda = 0.0;
  CHECK_THROWS_AS(config.validate(), ConfigError);
  config.lambda = 0.5;
  CHECK_NOTHROW(config.validate());
}

TEST_CASE("joint loss is non-negative on random logits") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    DecoderLogits<double> logits{random_tensor({1, 4}, rng, 5.0), random_tensor({3, 5}, rng, 5.0)};
    const auto b = labelled_batch(static_cast<std::int32_t>(rng.below(4)),
                                  {static_cast<std::int32_t>(rng.below(5)), static_cast<std::int32_t>(rng.below(5)),
                                   static_cast<std::int32_t>(rng.below(5))});
    CHECK(joint_loss(logits, b, rng.uniform()).total >= 0.0);
  }
}

TEST_CASE("derivative with respect to lambda is L_ID - L_SF") {
  Rng rng(3);
  DecoderLogits<double> logits{random_tensor({1, 4}, rng), random_tensor({3, 5}, rng)};
  const auto b = labelled_batch(2, {1, 0, 4});
  const double lambda = 0.3, step = 1e-6;
  const auto at = joint_loss(logits, b, lambda);
  const double numeric = (joint_loss(logits, b, lambda + step).total - joint_loss(logits, b, lambda - step).total) /
                         (2 * step);
  CHECK(numeric == doctest::Approx(at.intent - at.slot).epsilon(1e-6));
}

TEST_CASE("decoder gradients match finite differences") {
  Rng rng(4);
  const std::size_t d = 5;
  DecoderParams<double> p{random_tensor({d, 3}, rng), random_tensor({3}, rng), random_tensor({d, 4}, rng),
                          random_tensor({4}, rng)};
  FanOutput<double> reprs{random_tensor({2, d}, rng), random_tensor({6, d}, rng)};
  Batch b;
  b.batch_size = 2;
  b.content_len = 3;
  b.lengths = {3, 2};
  b.gold_intents = {2, 0};
  b.gold_slots = {1, 0, 3, 2, 2, kIgnoreSlot};
  const double lambda = 0.4;
  auto loss = [&] { return joint_loss(decoder_logits(reprs, p), b, lambda).total; };

  DecoderLogits<double> grad_logits;
  joint_loss(decoder_logits(reprs, p), b, lambda, &grad_logits);
  FanOutput<double> grad_reprs;
  decoder_backward(reprs, p, grad_logits, grad_reprs);

  visit_decoder(p, [&](const std::string& name, Tensor<double>& t) {
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    CAPTURE(name);
    CHECK(check_gradient(t.data(), analytic, loss).max_rel_error < 1e-4);
  });
  CHECK(check_gradient(reprs.intent_repr.data(), grad_reprs.intent_repr.data(), loss).max_rel_error < 1e-4);
  CHECK(check_gradient(reprs.slot_repr.data(), grad_reprs.slot_repr.data(), loss).max_rel_error < 1e-4);
  // The padded row receives no gradient.
  for (auto v : grad_reprs.slot_repr.row(5)) CHECK(v == 0.0);
}

TEST_CASE("argmax decoding is invariant to a per-position logit shift") {
  const LabelMaps labels({"a", "b", "c"}, {"O", "B-x", "I-x"});
  Rng rng(5);
  Batch b;
  b.batch_size = 2;
  b.content_len = 3;
  b.lengths = {3, 2};
  DecoderLogits<double> logits{random_tensor({2, 3}, rng), random_tensor({6, 3}, rng)};
  const auto before = decode_predictions(logits, b, labels);
  for (std::size_t r = 0; r < 6; ++r) {
    const double shift = 100.0 * rng.normal();
    for (auto& v : logits.slot.row(r)) v += shift;
  }
  for (auto& v : logits.intent.row(0)) v -= 37.0;
  const auto after = decode_predictions(logits, b, labels);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(before[i].intent == after[i].intent);
    CHECK(before[i].slots == after[i].slots);
  }
  CHECK(before[1].slots.size() == 2);
}
