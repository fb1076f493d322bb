#include "fan/decoder.hpp"

#include <algorithm>
#include <cmath>

#include "fan/encoder.hpp"

namespace fan {

void LossConfig::validate() const {
  if (!(lambda > 0.0 && lambda < 1.0)) throw ConfigError("lambda must be in (0,1)");
}

double mix_losses(double intent_loss, double slot_loss, double lambda) {
  return lambda * intent_loss + (1.0 - lambda) * slot_loss;
}

template <typename T>
DecoderParams<T> init_decoder(std::size_t d, std::size_t num_intents, std::size_t num_slots, Rng& rng) {
  if (num_intents == 0 || num_slots == 0) throw ConfigError("decoder needs at least one intent and slot label");
  DecoderParams<T> p;
  p.intent_weight = Tensor<T>({d, num_intents});
  p.intent_bias = Tensor<T>({num_intents});
  p.slot_weight = Tensor<T>({d, num_slots});
  p.slot_bias = Tensor<T>({num_slots});
  init_weight(p.intent_weight, rng);
  init_weight(p.slot_weight, rng);
  return p;
}

template <typename T>
DecoderLogits<T> decoder_logits(const FanOutput<T>& reprs, const DecoderParams<T>& p) {
  return {linear(reprs.intent_repr, p.intent_weight, p.intent_bias),
          linear(reprs.slot_repr, p.slot_weight, p.slot_bias)};
}

template <typename T>
Probabilities<T> predict(const Tensor<T>& intent_repr, const Tensor<T>& slot_repr, const DecoderParams<T>& p) {
  return {softmax_rows(linear(intent_repr, p.intent_weight, p.intent_bias)),
          softmax_rows(linear(slot_repr, p.slot_weight, p.slot_bias))};
}

namespace {

// -log softmax(row)[gold]; fills `grad` with scale · (softmax - onehot).
template <typename T>
double cross_entropy_row(std::span<const T> row, std::int32_t gold, T scale, T* grad) {
  if (gold < 0 || static_cast<std::size_t>(gold) >= row.size()) {
    throw DataError("gold label id " + std::to_string(gold) + " out of range for " + std::to_string(row.size()) +
                    " classes");
  }
  const T max_v = *std::max_element(row.begin(), row.end());
  T sum = T(0);
  for (auto v : row) sum += std::exp(v - max_v);
  const T lse = max_v + std::log(sum);
  if (grad) {
    for (std::size_t j = 0; j < row.size(); ++j) grad[j] = scale * std::exp(row[j] - lse);
    grad[gold] -= scale;
  }
  return static_cast<double>(lse - row[static_cast<std::size_t>(gold)]);
}

}  // namespace

template <typename T>
JointLoss joint_loss(const DecoderLogits<T>& logits, const Batch& batch, double lambda, DecoderLogits<T>* grad) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must be in [0,1]");
  if (!batch.has_labels()) throw DataError("joint_loss needs a batch with gold labels");
  const std::size_t n = batch.batch_size, len = batch.content_len;
  if (logits.intent.rows() != n || logits.slot.rows() != n * len) {
    throw ShapeError("joint_loss: logits " + to_string(logits.intent.shape()) + "/" +
                     to_string(logits.slot.shape()) + " do not match batch");
  }
  if (grad) {
    grad->intent = Tensor<T>(logits.intent.shape());
    grad->slot = Tensor<T>(logits.slot.shape());
  }
  const T intent_scale = static_cast<T>(lambda / static_cast<double>(n));
  const T slot_scale = static_cast<T>((1.0 - lambda) / static_cast<double>(n));

  JointLoss loss;
  for (std::size_t b = 0; b < n; ++b) {
    loss.intent += cross_entropy_row<T>(logits.intent.row(b), batch.gold_intents[b], intent_scale,
                                        grad ? grad->intent.row(b).data() : nullptr);
    for (std::size_t t = 0; t < len; ++t) {
      const auto gold = batch.gold_slots[b * len + t];
      if (gold == kIgnoreSlot) continue;
      loss.slot += cross_entropy_row<T>(logits.slot.row(b * len + t), gold, slot_scale,
                                        grad ? grad->slot.row(b * len + t).data() : nullptr);
    }
  }
  loss.intent /= static_cast<double>(n);
  loss.slot /= static_cast<double>(n);
  loss.total = mix_losses(loss.intent, loss.slot, lambda);
  return loss;
}

template <typename T>
void decoder_backward(const FanOutput<T>& reprs, DecoderParams<T>& p, const DecoderLogits<T>& grad_logits,
                      FanOutput<T>& grad_reprs) {
  grad_reprs.intent_repr = Tensor<T>(reprs.intent_repr.shape());
  grad_reprs.slot_repr = Tensor<T>(reprs.slot_repr.shape());
  linear_backward(reprs.intent_repr, p.intent_weight, grad_logits.intent, grad_reprs.intent_repr.data(),
                  p.intent_weight.grad(), p.intent_bias.grad());
  linear_backward(reprs.slot_repr, p.slot_weight, grad_logits.slot, grad_reprs.slot_repr.data(),
                  p.slot_weight.grad(), p.slot_bias.grad());
}

template <typename T>
std::vector<Prediction> decode_predictions(const DecoderLogits<T>& logits, const Batch& batch,
                                           const LabelMaps& labels) {
  auto argmax = [](std::span<const T> row) {
    return static_cast<std::int32_t>(std::max_element(row.begin(), row.end()) - row.begin());
  };
  std::vector<Prediction> out(batch.batch_size);
  const std::size_t len = batch.content_len;
  for (std::size_t b = 0; b < batch.batch_size; ++b) {
    out[b].intent = labels.intent(argmax(logits.intent.row(b)));
    for (std::size_t t = 0; t < batch.lengths[b]; ++t) {
      out[b].slots.push_back(labels.slot(argmax(logits.slot.row(b * len + t))));
    }
  }
  return out;
}

#define FAN_INSTANTIATE(T)                                                                                   \
  template DecoderParams<T> init_decoder(std::size_t, std::size_t, std::size_t, Rng&);                       \
  template DecoderLogits<T> decoder_logits(const FanOutput<T>&, const DecoderParams<T>&);                    \
  template Probabilities<T> predict(const Tensor<T>&, const Tensor<T>&, const DecoderParams<T>&);            \
  template JointLoss joint_loss(const DecoderLogits<T>&, const Batch&, double, DecoderLogits<T>*);          \
  template void decoder_backward(const FanOutput<T>&, DecoderParams<T>&, const DecoderLogits<T>&,           \
                                 FanOutput<T>&);                                                             \
  template std::vector<Prediction> decode_predictions(const DecoderLogits<T>&, const Batch&, const LabelMaps&);

FAN_INSTANTIATE(float)
FAN_INSTANTIATE(double)

#undef FAN_INSTANTIATE

}  // namespace fan
