#pragma once

// Intent and slot softmax decoders and the λ-mixed joint objective.
//
//   y_I   = softmax(H_I W_I + b_I)
//   y_S,t = softmax(h_t W_S + b_S)
//   L_ID  = -log y_I[gold]
//   L_SF  = -Σ_t log y_S,t[gold_t]        (summed over unmasked content positions)
//   L     = λ L_ID + (1 - λ) L_SF          (then averaged over the batch)
//
// Losses are evaluated from logits with log-sum-exp.

#include <string>
#include <vector>

#include "fan/data.hpp"
#include "fan/fan_attention.hpp"
#include "fan/tensor.hpp"

namespace fan {

struct LossConfig {
  double lambda = 0.5;
  /// Requires 0 < λ < 1.
  void validate() const;
};

template <typename T>
struct DecoderParams {
  Tensor<T> intent_weight;  // d × Ni, shared with label attention
  Tensor<T> intent_bias;    // Ni
  Tensor<T> slot_weight;    // d × Ns, shared with label attention
  Tensor<T> slot_bias;      // Ns
};

template <typename Params, typename F>
void visit_decoder(Params& p, F&& f) {
  f(std::string("decoder.intent.weight"), p.intent_weight);
  f(std::string("decoder.intent.bias"), p.intent_bias);
  f(std::string("decoder.slot.weight"), p.slot_weight);
  f(std::string("decoder.slot.bias"), p.slot_bias);
}

template <typename T>
DecoderParams<T> init_decoder(std::size_t hidden, std::size_t num_intents, std::size_t num_slots, Rng& rng);

template <typename T>
struct DecoderLogits {
  Tensor<T> intent;  // B × Ni
  Tensor<T> slot;    // (B·L) × Ns
};

template <typename T>
DecoderLogits<T> decoder_logits(const FanOutput<T>& reprs, const DecoderParams<T>& params);

template <typename T>
struct Probabilities {
  Tensor<T> intent;  // B × Ni
  Tensor<T> slot;    // (B·L) × Ns
};

/// Softmax distributions for intent and every content position.
template <typename T>
Probabilities<T> predict(const Tensor<T>& intent_repr, const Tensor<T>& slot_repr, const DecoderParams<T>& params);

struct JointLoss {
  double total = 0.0;   // batch mean of λ L_ID + (1-λ) L_SF
  double intent = 0.0;  // batch mean of L_ID
  double slot = 0.0;    // batch mean of L_SF
};

double mix_losses(double intent_loss, double slot_loss, double lambda);

/// Evaluates the joint loss against the batch's gold labels and, when
/// `grad` is non-null, writes dL/dlogits into it. λ may be any value in
/// [0, 1] here; LossConfig enforces the open interval.
template <typename T>
JointLoss joint_loss(const DecoderLogits<T>& logits, const Batch& batch, double lambda,
                     DecoderLogits<T>* grad = nullptr);

/// Accumulates decoder parameter gradients and writes dL/d(representations).
template <typename T>
void decoder_backward(const FanOutput<T>& reprs, DecoderParams<T>& params, const DecoderLogits<T>& grad_logits,
                      FanOutput<T>& grad_reprs);

struct Prediction {
  std::string intent;
  /// One tag per (possibly truncated) content token.
  std::vector<std::string> slots;
};

/// Argmax decoding through the label maps.
template <typename T>
std::vector<Prediction> decode_predictions(const DecoderLogits<T>& logits, const Batch& batch,
                                           const LabelMaps& labels);

}  // namespace fan
