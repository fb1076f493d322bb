#pragma once

// Full pipeline: encoder -> FAN module -> intent/slot decoders.

#include <cstddef>
#include <string>
#include <vector>

#include "fan/data.hpp"
#include "fan/decoder.hpp"
#include "fan/encoder.hpp"
#include "fan/fan_attention.hpp"

namespace fan {

struct ModelConfig {
  EncoderConfig encoder;
  FanConfig fan;
  std::size_t num_intents = 0;
  std::size_t num_slots = 0;

  void validate() const;
};

/// Closed-form trainable parameter count.
std::size_t model_parameter_count(const ModelConfig& config);

template <typename T>
struct Model {
  ModelConfig config;
  EncoderParams<T> encoder;
  FanParams<T> fan;
  DecoderParams<T> decoder;
};

template <typename T>
Model<T> init_model(const ModelConfig& config, Rng& rng);

/// Calls f(name, tensor) for every trainable tensor. Names are unique.
template <typename M, typename F>
void visit_parameters(M& model, F&& f) {
  visit_encoder(model.encoder, f);
  visit_fan(model.fan, f);
  visit_decoder(model.decoder, f);
}

template <typename T>
std::size_t parameter_count(const Model<T>& model) {
  std::size_t n = 0;
  visit_parameters(model, [&](const std::string&, const Tensor<T>& t) { n += t.size(); });
  return n;
}

template <typename T>
void zero_grads(Model<T>& model) {
  visit_parameters(model, [](const std::string&, Tensor<T>& t) { t.zero_grad(); });
}

template <typename T>
struct ForwardCache {
  EncoderCache<T> encoder;
  Tensor<T> hidden;  // encoder output H
  FanCache<T> fan;
  FanOutput<T> reprs;
};

template <typename T>
DecoderLogits<T> forward(const Model<T>& model, const Batch& batch, bool training, Rng& rng,
                         ForwardCache<T>* cache = nullptr);

/// Accumulates dL/dθ into every parameter's grad slot.
template <typename T>
void backward(Model<T>& model, const Batch& batch, const ForwardCache<T>& cache,
              const DecoderLogits<T>& grad_logits);

/// forward + joint_loss + backward. Gradients accumulate; call zero_grads first.
template <typename T>
JointLoss loss_and_gradients(Model<T>& model, const Batch& batch, double lambda, bool training, Rng& rng);

/// Inference-mode argmax predictions.
template <typename T>
std::vector<Prediction> predict_batch(const Model<T>& model, const Batch& batch, const LabelMaps& labels);

/// Frames token lists in chunks of `batch_size` (truncating to `max_len`)
/// and predicts each. Output slots cover only the surviving prefix.
template <typename T>
std::vector<Prediction> predict_tokens(const Model<T>& model, const Vocab& vocab, const LabelMaps& labels,
                                       const std::vector<std::vector<std::string>>& token_lists,
                                       std::size_t max_len, std::size_t batch_size = 64);

/// Copies every parameter into another float width.
template <typename U, typename T>
Model<U> cast_model(const Model<T>& model);

}  // namespace fan
