#pragma once

// Fast attention module between the encoder and the decoders.
//
//   W   = [W_I | W_S]                         decoder weights, d × (Ni+Ns)
//   α   = softmax(H W)                        joint over all label columns
//   H_A = (H + α Wᵀ) W_A                      label attention
//   H_M = concat_i softmax(Q_i K_iᵀ / s) V_i · W_O,
//         Q_i = H_A W_i^Q, K_i = H_A W_i^K, V_i = H_A W_i^V
//   H_L = LayerNorm(H + H_M)                  residual from the encoder output
//   H'  = max(0, H_L W_1 + b_1) W_2 + b_2
//   H_I = H'[CLS], H_S = H'[content positions]
//
// Label attention multiplies α by the full concatenated W (the only shape
// that fits α's Ni+Ns columns). The value projection has its own weights.
// The scale s is sqrt(d/h), or sqrt(d) with `scale_full_d`.
//
// W_I and W_S are owned by the decoder; callers pass them (and their
// gradient buffers) in explicitly so both uses accumulate into one slot.
//
// Ablations: without label attention H_A = H; without self-attention
// H_M = H_A; without the FFN H' = H_L.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fan/attention.hpp"
#include "fan/data.hpp"
#include "fan/tensor.hpp"

namespace fan {

struct FanConfig {
  std::size_t heads = 12;
  /// 0 selects the model width d.
  std::size_t ffn_dim = 0;
  bool use_label_attention = true;
  bool use_mhsa = true;
  bool use_ffn = true;
  bool scale_full_d = false;
  double dropout = 0.1;

  std::size_t resolved_ffn_dim(std::size_t hidden) const { return ffn_dim ? ffn_dim : hidden; }
  void validate(std::size_t hidden) const;
};

/// Trainable parameters owned by the module (excludes the shared W_I/W_S).
std::size_t fan_parameter_count(const FanConfig& config, std::size_t hidden);

template <typename T>
struct FanParams {
  Tensor<T> label_projection;  // W_A, d × d
  // Column block i (width d/h) of each matrix is head i's projection.
  Tensor<T> query_weight;   // d × d
  Tensor<T> key_weight;     // d × d
  Tensor<T> value_weight;   // d × d
  Tensor<T> output_weight;  // W_O, d × d
  Tensor<T> norm_gamma, norm_beta;
  Tensor<T> ffn_in_weight, ffn_in_bias;    // d × f, f
  Tensor<T> ffn_out_weight, ffn_out_bias;  // f × d, d
};

/// Calls f(name, tensor) for every parameter present under the config's
/// ablation flags.
template <typename Params, typename F>
void visit_fan(Params& p, F&& f) {
  auto visit = [&](const char* name, auto& t) {
    if (!t.empty()) f(std::string("fan.") + name, t);
  };
  visit("label_attention.projection", p.label_projection);
  visit("mhsa.query.weight", p.query_weight);
  visit("mhsa.key.weight", p.key_weight);
  visit("mhsa.value.weight", p.value_weight);
  visit("mhsa.output.weight", p.output_weight);
  visit("norm.gamma", p.norm_gamma);
  visit("norm.beta", p.norm_beta);
  visit("ffn.in.weight", p.ffn_in_weight);
  visit("ffn.in.bias", p.ffn_in_bias);
  visit("ffn.out.weight", p.ffn_out_weight);
  visit("ffn.out.bias", p.ffn_out_bias);
}

template <typename T>
FanParams<T> init_fan(const FanConfig& config, std::size_t hidden, Rng& rng);

// ---------------------------------------------------------------------------
// Label attention.

template <typename T>
struct LabelAttentionCache {
  Tensor<T> joint_weight;  // [W_I | W_S]
  std::size_t num_intents = 0;
  Tensor<T> alpha;         // softmax(H W), before dropout
  std::vector<T> alpha_dropout;
  Tensor<T> enriched;      // H + α Wᵀ
};

/// `h` is rows × d (any number of rows). Returns H_A, rows × d.
template <typename T>
Tensor<T> label_attention(const Tensor<T>& h, const Tensor<T>& intent_weight, const Tensor<T>& slot_weight,
                          const Tensor<T>& projection, T dropout_p, bool training, Rng& rng,
                          LabelAttentionCache<T>* cache = nullptr);

template <typename T>
void label_attention_backward(const Tensor<T>& h, const Tensor<T>& projection, const LabelAttentionCache<T>& cache,
                              const Tensor<T>& grad_out, std::span<T> grad_h, std::span<T> grad_intent_weight,
                              std::span<T> grad_slot_weight, std::span<T> grad_projection);

// ---------------------------------------------------------------------------
// Multi-head self-attention.

template <typename T>
struct MhsaCache {
  Tensor<T> query, key, value;
  AttentionCache<T> attention;
  Tensor<T> context;
};

template <typename T>
T mhsa_scale(const FanConfig& config, std::size_t hidden);

/// `h_a` is (B·S) × d for the batch layout in `shape`.
template <typename T>
Tensor<T> mhsa(const Tensor<T>& h_a, const FanParams<T>& params, const AttentionShape& shape, T scale_denominator,
               std::span<const std::uint8_t> key_mask, T dropout_p, bool training, Rng& rng,
               MhsaCache<T>* cache = nullptr);

template <typename T>
void mhsa_backward(const Tensor<T>& h_a, FanParams<T>& params, const AttentionShape& shape, T scale_denominator,
                   const MhsaCache<T>& cache, const Tensor<T>& grad_out, std::span<T> grad_h_a);

// ---------------------------------------------------------------------------
// Whole module.

template <typename T>
struct FanCache {
  AttentionShape shape;
  LabelAttentionCache<T> label;
  Tensor<T> h_a;
  MhsaCache<T> mhsa;
  Tensor<T> residual;  // H + H_M
  Tensor<T> normed;    // H_L
  Tensor<T> ffn_pre;
  Tensor<T> ffn_act;
  std::vector<T> ffn_dropout;
};

template <typename T>
struct FanOutput {
  Tensor<T> intent_repr;  // B × d, CLS rows
  Tensor<T> slot_repr;    // (B·L) × d, content rows
};

/// `h` is the encoder output, B × (L+2) × d.
template <typename T>
FanOutput<T> fan_forward(const Tensor<T>& h, const FanParams<T>& params, const Tensor<T>& intent_weight,
                         const Tensor<T>& slot_weight, const FanConfig& config, const Batch& batch, bool training,
                         Rng& rng, FanCache<T>* cache = nullptr);

/// Accumulates gradients into `params`, the two label-weight buffers and
/// `grad_h` (same size as `h`).
template <typename T>
void fan_backward(const Tensor<T>& h, FanParams<T>& params, const FanConfig& config, const Batch& batch,
                  const FanCache<T>& cache, const FanOutput<T>& grad_out, std::span<T> grad_h,
                  std::span<T> grad_intent_weight, std::span<T> grad_slot_weight);

}  // namespace fan
