#include "fan/model.hpp"

#include <algorithm>

namespace fan {

void ModelConfig::validate() const {
  encoder.validate();
  fan.validate(encoder.hidden);
  if (num_intents == 0) throw ConfigError("model needs at least one intent label");
  if (num_slots == 0) throw ConfigError("model needs at least one slot label");
}

std::size_t model_parameter_count(const ModelConfig& c) {
  const std::size_t d = c.encoder.hidden;
  return encoder_parameter_count(c.encoder) + fan_parameter_count(c.fan, d) + d * c.num_intents + c.num_intents +
         d * c.num_slots + c.num_slots;
}

template <typename T>
Model<T> init_model(const ModelConfig& config, Rng& rng) {
  config.validate();
  Model<T> m;
  m.config = config;
  m.encoder = init_encoder<T>(config.encoder, rng);
  m.fan = init_fan<T>(config.fan, config.encoder.hidden, rng);
  m.decoder = init_decoder<T>(config.encoder.hidden, config.num_intents, config.num_slots, rng);
  return m;
}

template <typename T>
DecoderLogits<T> forward(const Model<T>& m, const Batch& batch, bool training, Rng& rng, ForwardCache<T>* cache) {
  const std::size_t d = m.config.encoder.hidden;
  Tensor<T> h = encode(m.encoder, m.config.encoder, batch, training, rng, cache ? &cache->encoder : nullptr);
  h = h.reshaped({batch.batch_size * batch.seq_len(), d});
  auto reprs = fan_forward(h, m.fan, m.decoder.intent_weight, m.decoder.slot_weight, m.config.fan, batch,
                           training, rng, cache ? &cache->fan : nullptr);
  auto logits = decoder_logits(reprs, m.decoder);
  if (cache) {
    cache->hidden = std::move(h);
    cache->reprs = std::move(reprs);
  }
  return logits;
}

template <typename T>
void backward(Model<T>& m, const Batch& batch, const ForwardCache<T>& cache, const DecoderLogits<T>& grad_logits) {
  FanOutput<T> grad_reprs;
  decoder_backward(cache.reprs, m.decoder, grad_logits, grad_reprs);
  Tensor<T> grad_h(cache.hidden.shape());
  fan_backward(cache.hidden, m.fan, m.config.fan, batch, cache.fan, grad_reprs, grad_h.data(),
               m.decoder.intent_weight.grad(), m.decoder.slot_weight.grad());
  encode_backward(m.encoder, m.config.encoder, batch, cache.encoder, grad_h);
}

template <typename T>
JointLoss loss_and_gradients(Model<T>& m, const Batch& batch, double lambda, bool training, Rng& rng) {
  ForwardCache<T> cache;
  const auto logits = forward(m, batch, training, rng, &cache);
  DecoderLogits<T> grad;
  const auto loss = joint_loss(logits, batch, lambda, &grad);
  backward(m, batch, cache, grad);
  return loss;
}

template <typename T>
std::vector<Prediction> predict_batch(const Model<T>& m, const Batch& batch, const LabelMaps& labels) {
  if (labels.num_intents() != m.config.num_intents || labels.num_slots() != m.config.num_slots) {
    throw ConfigError("label maps do not match the model's output sizes");
  }
  Rng unused;
  return decode_predictions(forward(m, batch, false, unused), batch, labels);
}

template <typename T>
std::vector<Prediction> predict_tokens(const Model<T>& m, const Vocab& vocab, const LabelMaps& labels,
                                       const std::vector<std::vector<std::string>>& token_lists,
                                       std::size_t max_len, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  std::vector<Prediction> out;
  out.reserve(token_lists.size());
  for (std::size_t begin = 0; begin < token_lists.size(); begin += batch_size) {
    const std::size_t end = std::min(token_lists.size(), begin + batch_size);
    const std::vector<std::vector<std::string>> chunk(token_lists.begin() + begin, token_lists.begin() + end);
    auto preds = predict_batch(m, encode_inputs(chunk, vocab, max_len), labels);
    for (auto& p : preds) out.push_back(std::move(p));
  }
  return out;
}

template <typename U, typename T>
Model<U> cast_model(const Model<T>& m) {
  Rng unused;
  Model<U> out = init_model<U>(m.config, unused);
  std::vector<const Tensor<T>*> src;
  visit_parameters(m, [&](const std::string&, const Tensor<T>& t) { src.push_back(&t); });
  std::size_t i = 0;
  visit_parameters(out, [&](const std::string&, Tensor<U>& t) { t = src.at(i++)->template cast<U>(); });
  return out;
}

#define FAN_INSTANTIATE(T)                                                                                     \
  template Model<T> init_model(const ModelConfig&, Rng&);                                                      \
  template DecoderLogits<T> forward(const Model<T>&, const Batch&, bool, Rng&, ForwardCache<T>*);              \
  template void backward(Model<T>&, const Batch&, const ForwardCache<T>&, const DecoderLogits<T>&);            \
  template JointLoss loss_and_gradients(Model<T>&, const Batch&, double, bool, Rng&);                          \
  template std::vector<Prediction> predict_batch(const Model<T>&, const Batch&, const LabelMaps&);          \
  template std::vector<Prediction> predict_tokens(const Model<T>&, const Vocab&, const LabelMaps&,            \
                                                  const std::vector<std::vector<std::string>>&, std::size_t,  \
                                                  std::size_t);

FAN_INSTANTIATE(float)
FAN_INSTANTIATE(double)

#undef FAN_INSTANTIATE

template Model<double> cast_model<double, float>(const Model<float>&);
template Model<float> cast_model<float, double>(const Model<double>&);
template Model<float> cast_model<float, float>(const Model<float>&);
template Model<double> cast_model<double, double>(const Model<double>&);

}  // namespace fan
