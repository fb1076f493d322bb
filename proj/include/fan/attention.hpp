#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fan/tensor.hpp"

namespace fan {

/// Layout of a flattened multi-head attention input: rows are
/// (item, position) pairs, column block h·head_dim.. belongs to head h.
struct AttentionShape {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::size_t heads = 0;
  std::size_t head_dim = 0;

  std::size_t model_dim() const { return heads * head_dim; }
};

template <typename T>
struct AttentionCache {
  /// Softmax output, batch × heads × seq × seq, before dropout.
  std::vector<T> probs;
  /// Dropout multipliers over `probs`; empty when dropout was off.
  std::vector<T> dropout_mask;
};

/// Additive logit offset for padded keys.
inline constexpr double kMaskedLogit = -1e9;

/// Per item and head: softmax(Q Kᵀ / scale_denominator + mask) V, with
/// key positions whose `key_mask` entry is 0 pushed to kMaskedLogit.
/// Returns the concatenated heads, shaped like `q`.
template <typename T>
Tensor<T> attention_forward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                            const AttentionShape& shape, T scale_denominator,
                            std::span<const std::uint8_t> key_mask, T dropout_p, bool training, Rng& rng,
                            AttentionCache<T>& cache);

/// Accumulates gradients of the concatenated head output into grad_q/k/v.
template <typename T>
void attention_backward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                        const AttentionShape& shape, T scale_denominator, const AttentionCache<T>& cache,
                        const Tensor<T>& grad_out, std::span<T> grad_q, std::span<T> grad_k,
                        std::span<T> grad_v);

}  // namespace fan
