#pragma once

// From-scratch transformer encoder producing the token representations H.
//
// Input layer: learned token embedding + learned position embedding (no
// segment embedding). Each block is post-norm:
//
//   A  = MultiHead(X) Wo + bo              (dropout on probs and on A)
//   X1 = LayerNorm(X + A)
//   F  = act(X1 W1 + b1) W2 + b2           (dropout on F)
//   X2 = LayerNorm(X1 + F)
//
// Parameter count for vocab V, positions P, width d, FFN width f, N blocks:
//
//   V·d + P·d + N · (4d² + 4d  +  2·d·f + f + d  +  4d)
//                    attention    feed-forward     two layer norms

#include <cstddef>
#include <string>
#include <vector>

#include "fan/attention.hpp"
#include "fan/data.hpp"
#include "fan/tensor.hpp"

namespace fan {

enum class Activation { kRelu, kGelu };

std::string to_string(Activation activation);
Activation parse_activation(const std::string& name);

inline constexpr double kLayerNormEps = 1e-12;
inline constexpr double kInitStddev = 0.02;

struct EncoderConfig {
  std::size_t num_blocks = 4;
  std::size_t hidden = 312;
  std::size_t heads = 12;
  /// 0 selects 4·hidden.
  std::size_t ffn_dim = 0;
  std::size_t max_positions = 512;
  std::size_t vocab_size = 0;
  double dropout = 0.1;
  Activation activation = Activation::kRelu;

  std::size_t resolved_ffn_dim() const { return ffn_dim ? ffn_dim : 4 * hidden; }
  /// Throws ConfigError on an unusable configuration.
  void validate() const;
};

/// Closed-form parameter count (see the header comment).
std::size_t encoder_parameter_count(const EncoderConfig& config);

template <typename T>
struct EncoderBlockParams {
  Tensor<T> query_weight, query_bias;
  Tensor<T> key_weight, key_bias;
  Tensor<T> value_weight, value_bias;
  Tensor<T> output_weight, output_bias;
  Tensor<T> attention_norm_gamma, attention_norm_beta;
  Tensor<T> ffn_in_weight, ffn_in_bias;
  Tensor<T> ffn_out_weight, ffn_out_bias;
  Tensor<T> ffn_norm_gamma, ffn_norm_beta;
};

template <typename T>
struct EncoderParams {
  Tensor<T> token_embedding;     // V × d
  Tensor<T> position_embedding;  // P × d
  std::vector<EncoderBlockParams<T>> blocks;
};

/// Calls f(name, tensor) for every encoder parameter.
template <typename Params, typename F>
void visit_encoder(Params& p, F&& f) {
  f(std::string("encoder.token_embedding"), p.token_embedding);
  f(std::string("encoder.position_embedding"), p.position_embedding);
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    auto& b = p.blocks[i];
    const std::string pre = "encoder.block." + std::to_string(i) + ".";
    f(pre + "attention.query.weight", b.query_weight);
    f(pre + "attention.query.bias", b.query_bias);
    f(pre + "attention.key.weight", b.key_weight);
    f(pre + "attention.key.bias", b.key_bias);
    f(pre + "attention.value.weight", b.value_weight);
    f(pre + "attention.value.bias", b.value_bias);
    f(pre + "attention.output.weight", b.output_weight);
    f(pre + "attention.output.bias", b.output_bias);
    f(pre + "attention_norm.gamma", b.attention_norm_gamma);
    f(pre + "attention_norm.beta", b.attention_norm_beta);
    f(pre + "ffn.in.weight", b.ffn_in_weight);
    f(pre + "ffn.in.bias", b.ffn_in_bias);
    f(pre + "ffn.out.weight", b.ffn_out_weight);
    f(pre + "ffn.out.bias", b.ffn_out_bias);
    f(pre + "ffn_norm.gamma", b.ffn_norm_gamma);
    f(pre + "ffn_norm.beta", b.ffn_norm_beta);
  }
}

/// Truncated-normal (std 0.02) weights, zero biases, unit layer-norm gains.
template <typename T>
EncoderParams<T> init_encoder(const EncoderConfig& config, Rng& rng);

template <typename T>
struct EncoderBlockCache {
  Tensor<T> input;
  Tensor<T> query, key, value;
  AttentionCache<T> attention;
  Tensor<T> context;
  std::vector<T> attention_dropout;
  Tensor<T> attention_residual;  // input + dropout(A), pre-norm
  Tensor<T> normed;              // X1
  Tensor<T> ffn_pre;             // X1 W1 + b1
  Tensor<T> ffn_act;
  std::vector<T> ffn_dropout;
  Tensor<T> ffn_residual;        // X1 + dropout(F), pre-norm
};

template <typename T>
struct EncoderCache {
  AttentionShape shape;
  std::vector<EncoderBlockCache<T>> blocks;
};

/// Returns H with shape B × (L+2) × d. Fills `cache` when non-null.
template <typename T>
Tensor<T> encode(const EncoderParams<T>& params, const EncoderConfig& config, const Batch& batch,
                 bool training, Rng& rng, EncoderCache<T>* cache = nullptr);

/// Accumulates parameter gradients given dL/dH.
template <typename T>
void encode_backward(EncoderParams<T>& params, const EncoderConfig& config, const Batch& batch,
                     const EncoderCache<T>& cache, const Tensor<T>& grad_h);

/// Fills a parameter with truncated-normal noise (std kInitStddev).
template <typename T>
void init_weight(Tensor<T>& weight, Rng& rng);

}  // namespace fan
