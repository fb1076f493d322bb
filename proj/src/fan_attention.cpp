#include "fan/fan_attention.hpp"

#include <cmath>

#include "fan/encoder.hpp"

namespace fan {

void FanConfig::validate(std::size_t hidden) const {
  if (heads == 0) throw ConfigError("FAN head count must be positive");
  if (hidden % heads != 0) {
    throw ConfigError("hidden size " + std::to_string(hidden) + " cannot be split equally into " +
                      std::to_string(heads) + " attention heads");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
}

std::size_t fan_parameter_count(const FanConfig& config, std::size_t d) {
  const std::size_t f = config.resolved_ffn_dim(d);
  std::size_t count = 2 * d;
  if (config.use_label_attention) count += d * d;
  if (config.use_mhsa) count += 3 * d * d + d * d;
  if (config.use_ffn) count += d * f + f + f * d + d;
  return count;
}

template <typename T>
FanParams<T> init_fan(const FanConfig& config, std::size_t d, Rng& rng) {
  config.validate(d);
  const std::size_t f = config.resolved_ffn_dim(d);
  FanParams<T> p;
  if (config.use_label_attention) {
    p.label_projection = Tensor<T>({d, d});
    init_weight(p.label_projection, rng);
  }
  if (config.use_mhsa) {
    for (auto* w : {&p.query_weight, &p.key_weight, &p.value_weight, &p.output_weight}) {
      *w = Tensor<T>({d, d});
      init_weight(*w, rng);
    }
  }
  p.norm_gamma = Tensor<T>({d}, T(1));
  p.norm_beta = Tensor<T>({d});
  if (config.use_ffn) {
    p.ffn_in_weight = Tensor<T>({d, f});
    p.ffn_in_bias = Tensor<T>({f});
    p.ffn_out_weight = Tensor<T>({f, d});
    p.ffn_out_bias = Tensor<T>({d});
    init_weight(p.ffn_in_weight, rng);
    init_weight(p.ffn_out_weight, rng);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Label attention

template <typename T>
Tensor<T> label_attention(const Tensor<T>& h, const Tensor<T>& intent_weight, const Tensor<T>& slot_weight,
                          const Tensor<T>& projection, T dropout_p, bool training, Rng& rng,
                          LabelAttentionCache<T>* cache) {
  const std::size_t d = h.cols();
  if (intent_weight.rows() != d || slot_weight.rows() != d || projection.rows() != d || projection.cols() != d) {
    throw ShapeError("label_attention: weights " + to_string(intent_weight.shape()) + ", " +
                     to_string(slot_weight.shape()) + ", " + to_string(projection.shape()) +
                     " do not fit width " + std::to_string(d));
  }
  const Tensor<T> rows_view = h.reshaped({h.rows(), d});
  Tensor<T> joint = concat_cols(intent_weight, slot_weight);
  Tensor<T> alpha = softmax_rows(matmul(rows_view, joint));
  auto dropped = dropout(alpha, dropout_p, training, rng);

  Tensor<T> enriched = rows_view;
  kernel::gemm(dropped.output.data().data(), joint.data().data(), enriched.data().data(), h.rows(), d,
               joint.cols(), false, true, true);
  Tensor<T> out = matmul(enriched, projection);
  if (cache) {
    cache->joint_weight = std::move(joint);
    cache->num_intents = intent_weight.cols();
    cache->alpha = std::move(alpha);
    cache->alpha_dropout = std::move(dropped.mask);
    cache->enriched = std::move(enriched);
  }
  return out;
}

template <typename T>
void label_attention_backward(const Tensor<T>& h, const Tensor<T>& projection, const LabelAttentionCache<T>& cache,
                              const Tensor<T>& grad_out, std::span<T> grad_h, std::span<T> grad_intent_weight,
                              std::span<T> grad_slot_weight, std::span<T> grad_projection) {
  const std::size_t rows = h.rows(), d = h.cols();
  const std::size_t labels = cache.joint_weight.cols();
  const std::size_t n_intent = cache.num_intents;

  Tensor<T> d_enriched({rows, d});
  linear_backward(cache.enriched, projection, grad_out, d_enriched.data(), grad_projection, std::span<T>{});

  if (!grad_h.empty()) {
    for (std::size_t i = 0; i < d_enriched.size(); ++i) grad_h[i] += d_enriched[i];
  }

  Tensor<T> alpha_used = cache.alpha;
  if (!cache.alpha_dropout.empty()) {
    for (std::size_t i = 0; i < alpha_used.size(); ++i) alpha_used[i] *= cache.alpha_dropout[i];
  }
  // enriched = h + α' Wᵀ
  Tensor<T> d_alpha_used({rows, labels});
  kernel::gemm(d_enriched.data().data(), cache.joint_weight.data().data(), d_alpha_used.data().data(), rows, labels,
               d, false, false, false);
  Tensor<T> d_joint({d, labels});
  kernel::gemm(d_enriched.data().data(), alpha_used.data().data(), d_joint.data().data(), d, labels, rows, true,
               false, false);

  Tensor<T> d_alpha({rows, labels});
  dropout_backward(cache.alpha_dropout, d_alpha_used, d_alpha.data());
  Tensor<T> d_logits({rows, labels});
  softmax_rows_backward(cache.alpha, d_alpha, d_logits.data());
  const Tensor<T> rows_view = h.reshaped({rows, d});
  linear_backward(rows_view, cache.joint_weight, d_logits, grad_h, d_joint.data(), std::span<T>{});

  const std::size_t n_slot = labels - n_intent;
  for (std::size_t r = 0; r < d; ++r) {
    const auto g = d_joint.row(r);
    if (!grad_intent_weight.empty()) {
      for (std::size_t j = 0; j < n_intent; ++j) grad_intent_weight[r * n_intent + j] += g[j];
    }
    if (!grad_slot_weight.empty()) {
      for (std::size_t j = 0; j < n_slot; ++j) grad_slot_weight[r * n_slot + j] += g[n_intent + j];
    }
  }
}

// ---------------------------------------------------------------------------
// Multi-head self-attention

template <typename T>
T mhsa_scale(const FanConfig& config, std::size_t hidden) {
  return std::sqrt(static_cast<T>(config.scale_full_d ? hidden : hidden / config.heads));
}

template <typename T>
Tensor<T> mhsa(const Tensor<T>& h_a, const FanParams<T>& p, const AttentionShape& shape, T scale_denominator,
               std::span<const std::uint8_t> key_mask, T dropout_p, bool training, Rng& rng, MhsaCache<T>* cache) {
  MhsaCache<T> local;
  auto& c = cache ? *cache : local;
  const Tensor<T> none;
  c.query = linear(h_a, p.query_weight, none);
  c.key = linear(h_a, p.key_weight, none);
  c.value = linear(h_a, p.value_weight, none);
  c.context = attention_forward(c.query, c.key, c.value, shape, scale_denominator, key_mask, dropout_p, training,
                                rng, c.attention);
  return matmul(c.context, p.output_weight);
}

template <typename T>
void mhsa_backward(const Tensor<T>& h_a, FanParams<T>& p, const AttentionShape& shape, T scale_denominator,
                   const MhsaCache<T>& c, const Tensor<T>& grad_out, std::span<T> grad_h_a) {
  const std::size_t rows = h_a.rows(), d = h_a.cols();
  Tensor<T> d_context({rows, d});
  matmul_backward(c.context, p.output_weight, grad_out, d_context.data(), p.output_weight.grad());
  Tensor<T> d_q({rows, d}), d_k({rows, d}), d_v({rows, d});
  attention_backward(c.query, c.key, c.value, shape, scale_denominator, c.attention, d_context, d_q.data(),
                     d_k.data(), d_v.data());
  matmul_backward(h_a, p.query_weight, d_q, grad_h_a, p.query_weight.grad());
  matmul_backward(h_a, p.key_weight, d_k, grad_h_a, p.key_weight.grad());
  matmul_backward(h_a, p.value_weight, d_v, grad_h_a, p.value_weight.grad());
}

// ---------------------------------------------------------------------------
// Whole module

template <typename T>
FanOutput<T> fan_forward(const Tensor<T>& h, const FanParams<T>& p, const Tensor<T>& intent_weight,
                         const Tensor<T>& slot_weight, const FanConfig& config, const Batch& batch, bool training,
                         Rng& rng, FanCache<T>* cache) {
  const std::size_t d = h.cols(), seq = batch.seq_len(), rows = batch.batch_size * seq;
  if (h.rows() != rows) {
    throw ShapeError("fan_forward: encoder output " + to_string(h.shape()) + " does not match batch of " +
                     std::to_string(batch.batch_size) + "x" + std::to_string(seq));
  }
  config.validate(d);
  const T dropout_p = static_cast<T>(config.dropout);
  const AttentionShape shape{batch.batch_size, seq, config.heads, d / config.heads};
  FanCache<T> local;
  auto& c = cache ? *cache : local;
  c.shape = shape;

  const Tensor<T> h_rows = h.reshaped({rows, d});
  if (config.use_label_attention) {
    c.h_a = label_attention(h_rows, intent_weight, slot_weight, p.label_projection, dropout_p, training, rng,
                            &c.label);
  } else {
    c.h_a = h_rows;
  }
  Tensor<T> h_m = config.use_mhsa ? mhsa(c.h_a, p, shape, mhsa_scale<T>(config, d), batch.attention_mask,
                                         dropout_p, training, rng, &c.mhsa)
                                  : c.h_a;
  c.residual = add(h_rows, h_m);
  c.normed = layer_norm(c.residual, p.norm_gamma, p.norm_beta, static_cast<T>(kLayerNormEps));

  Tensor<T> out;
  if (config.use_ffn) {
    c.ffn_pre = linear(c.normed, p.ffn_in_weight, p.ffn_in_bias);
    auto act = dropout(relu(c.ffn_pre), dropout_p, training, rng);
    c.ffn_act = std::move(act.output);
    c.ffn_dropout = std::move(act.mask);
    out = linear(c.ffn_act, p.ffn_out_weight, p.ffn_out_bias);
  } else {
    out = c.normed;
  }

  const std::size_t len = batch.content_len;
  FanOutput<T> result{Tensor<T>({batch.batch_size, d}), Tensor<T>({batch.batch_size * len, d})};
  for (std::size_t b = 0; b < batch.batch_size; ++b) {
    const auto cls = out.row(b * seq);
    std::copy(cls.begin(), cls.end(), result.intent_repr.row(b).begin());
    for (std::size_t t = 0; t < len; ++t) {
      const auto src = out.row(b * seq + 1 + t);
      std::copy(src.begin(), src.end(), result.slot_repr.row(b * len + t).begin());
    }
  }
  return result;
}

template <typename T>
void fan_backward(const Tensor<T>& h, FanParams<T>& p, const FanConfig& config, const Batch& batch,
                  const FanCache<T>& c, const FanOutput<T>& grad_out, std::span<T> grad_h,
                  std::span<T> grad_intent_weight, std::span<T> grad_slot_weight) {
  const std::size_t d = h.cols(), seq = batch.seq_len(), rows = batch.batch_size * seq;
  const std::size_t len = batch.content_len;
  if (grad_h.size() != rows * d) throw ShapeError("fan_backward: grad_h has wrong size");

  Tensor<T> d_out({rows, d});
  for (std::size_t b = 0; b < batch.batch_size; ++b) {
    const auto gi = grad_out.intent_repr.row(b);
    std::copy(gi.begin(), gi.end(), d_out.row(b * seq).begin());
    for (std::size_t t = 0; t < len; ++t) {
      const auto gs = grad_out.slot_repr.row(b * len + t);
      std::copy(gs.begin(), gs.end(), d_out.row(b * seq + 1 + t).begin());
    }
  }

  Tensor<T> d_normed({rows, d});
  if (config.use_ffn) {
    Tensor<T> d_act({rows, c.ffn_act.cols()});
    linear_backward(c.ffn_act, p.ffn_out_weight, d_out, d_act.data(), p.ffn_out_weight.grad(),
                    p.ffn_out_bias.grad());
    Tensor<T> d_relu({rows, c.ffn_act.cols()});
    dropout_backward(c.ffn_dropout, d_act, d_relu.data());
    Tensor<T> d_pre({rows, c.ffn_act.cols()});
    relu_backward(c.ffn_pre, d_relu, d_pre.data());
    linear_backward(c.normed, p.ffn_in_weight, d_pre, d_normed.data(), p.ffn_in_weight.grad(),
                    p.ffn_in_bias.grad());
  } else {
    d_normed = std::move(d_out);
  }

  Tensor<T> d_residual({rows, d});
  layer_norm_backward(c.residual, p.norm_gamma, static_cast<T>(kLayerNormEps), d_normed, d_residual.data(),
                      p.norm_gamma.grad(), p.norm_beta.grad());
  for (std::size_t i = 0; i < d_residual.size(); ++i) grad_h[i] += d_residual[i];

  Tensor<T> d_h_a({rows, d});
  if (config.use_mhsa) {
    mhsa_backward(c.h_a, p, c.shape, mhsa_scale<T>(config, d), c.mhsa, d_residual, d_h_a.data());
  } else {
    d_h_a = std::move(d_residual);
  }

  if (config.use_label_attention) {
    const Tensor<T> h_rows = h.reshaped({rows, d});
    label_attention_backward(h_rows, p.label_projection, c.label, d_h_a, grad_h, grad_intent_weight,
                             grad_slot_weight, p.label_projection.grad());
  } else {
    for (std::size_t i = 0; i < d_h_a.size(); ++i) grad_h[i] += d_h_a[i];
  }
}

#define FAN_INSTANTIATE(T)                                                                                       \
  template FanParams<T> init_fan(const FanConfig&, std::size_t, Rng&);                                           \
  template Tensor<T> label_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T,   \
                                     bool, Rng&, LabelAttentionCache<T>*);                                       \
  template void label_attention_backward(const Tensor<T>&, const Tensor<T>&, const LabelAttentionCache<T>&,      \
                                         const Tensor<T>&, std::span<T>, std::span<T>, std::span<T>,             \
                                         std::span<T>);                                                          \
  template T mhsa_scale<T>(const FanConfig&, std::size_t);                                                       \
  template Tensor<T> mhsa(const Tensor<T>&, const FanParams<T>&, const AttentionShape&, T,                      \
                          std::span<const std::uint8_t>, T, bool, Rng&, MhsaCache<T>*);                          \
  template void mhsa_backward(const Tensor<T>&, FanParams<T>&, const AttentionShape&, T, const MhsaCache<T>&,   \
                              const Tensor<T>&, std::span<T>);                                                   \
  template FanOutput<T> fan_forward(const Tensor<T>&, const FanParams<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                    const FanConfig&, const Batch&, bool, Rng&, FanCache<T>*);                   \
  template void fan_backward(const Tensor<T>&, FanParams<T>&, const FanConfig&, const Batch&,                   \
                             const FanCache<T>&, const FanOutput<T>&, std::span<T>, std::span<T>, std::span<T>);

FAN_INSTANTIATE(float)
FAN_INSTANTIATE(double)

#undef FAN_INSTANTIATE

}  // namespace fan
