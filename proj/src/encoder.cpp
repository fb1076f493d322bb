#include "fan/encoder.hpp"

#include <cmath>

namespace fan {

std::string to_string(Activation activation) {
  return activation == Activation::kGelu ? "gelu" : "relu";
}

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "gelu") return Activation::kGelu;
  throw ConfigError("unknown activation '" + name + "' (expected relu or gelu)");
}

void EncoderConfig::validate() const {
  if (num_blocks == 0) throw ConfigError("encoder needs at least one block");
  if (hidden == 0 || heads == 0) throw ConfigError("hidden size and head count must be positive");
  if (hidden % heads != 0) {
    throw ConfigError("hidden size " + std::to_string(hidden) + " is not divisible by " +
                      std::to_string(heads) + " encoder heads");
  }
  if (max_positions < 3) throw ConfigError("max_positions must be at least 3");
  if (vocab_size <= Vocab::kNumReserved) throw ConfigError("vocab_size must exceed the reserved ids");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
}

std::size_t encoder_parameter_count(const EncoderConfig& c) {
  const std::size_t d = c.hidden, f = c.resolved_ffn_dim();
  const std::size_t per_block = 4 * d * d + 4 * d + 2 * d * f + f + d + 4 * d;
  return c.vocab_size * d + c.max_positions * d + c.num_blocks * per_block;
}

template <typename T>
void init_weight(Tensor<T>& weight, Rng& rng) {
  for (auto& v : weight.data()) v = static_cast<T>(rng.truncated_normal(kInitStddev));
}

template <typename T>
EncoderParams<T> init_encoder(const EncoderConfig& config, Rng& rng) {
  config.validate();
  const std::size_t d = config.hidden, f = config.resolved_ffn_dim();
  EncoderParams<T> p;
  p.token_embedding = Tensor<T>({config.vocab_size, d});
  p.position_embedding = Tensor<T>({config.max_positions, d});
  init_weight(p.token_embedding, rng);
  init_weight(p.position_embedding, rng);
  p.blocks.resize(config.num_blocks);
  for (auto& b : p.blocks) {
    for (auto* w : {&b.query_weight, &b.key_weight, &b.value_weight, &b.output_weight}) {
      *w = Tensor<T>({d, d});
      init_weight(*w, rng);
    }
    for (auto* bias : {&b.query_bias, &b.key_bias, &b.value_bias, &b.output_bias, &b.ffn_out_bias,
                       &b.attention_norm_beta, &b.ffn_norm_beta}) {
      *bias = Tensor<T>({d});
    }
    b.attention_norm_gamma = Tensor<T>({d}, T(1));
    b.ffn_norm_gamma = Tensor<T>({d}, T(1));
    b.ffn_in_weight = Tensor<T>({d, f});
    b.ffn_in_bias = Tensor<T>({f});
    b.ffn_out_weight = Tensor<T>({f, d});
    init_weight(b.ffn_in_weight, rng);
    init_weight(b.ffn_out_weight, rng);
  }
  return p;
}

namespace {

template <typename T>
Tensor<T> activate(Activation act, const Tensor<T>& x) {
  return act == Activation::kGelu ? gelu(x) : relu(x);
}

template <typename T>
void activate_backward(Activation act, const Tensor<T>& x, const Tensor<T>& grad_y, std::span<T> grad_x) {
  if (act == Activation::kGelu) {
    gelu_backward(x, grad_y, grad_x);
  } else {
    relu_backward(x, grad_y, grad_x);
  }
}

template <typename T>
Tensor<T> embed(const EncoderParams<T>& p, const EncoderConfig& config, const Batch& batch) {
  const std::size_t seq = batch.seq_len(), d = config.hidden;
  if (seq > config.max_positions) {
    throw ShapeError("position overflow: framed length " + std::to_string(seq) + " exceeds max_positions " +
                     std::to_string(config.max_positions));
  }
  Tensor<T> x({batch.batch_size * seq, d});
  for (std::size_t b = 0; b < batch.batch_size; ++b) {
    for (std::size_t s = 0; s < seq; ++s) {
      const std::size_t r = b * seq + s;
      const auto id = batch.token_ids[r];
      if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size) {
        throw DataError("token id " + std::to_string(id) + " outside vocabulary of size " +
                        std::to_string(config.vocab_size));
      }
      const auto tok = p.token_embedding.row(static_cast<std::size_t>(id));
      const auto pos = p.position_embedding.row(s);
      auto out = x.row(r);
      for (std::size_t j = 0; j < d; ++j) out[j] = tok[j] + pos[j];
    }
  }
  return x;
}

}  // namespace

template <typename T>
Tensor<T> encode(const EncoderParams<T>& p, const EncoderConfig& config, const Batch& batch, bool training,
                 Rng& rng, EncoderCache<T>* cache) {
  const std::size_t d = config.hidden;
  const AttentionShape shape{batch.batch_size, batch.seq_len(), config.heads, d / config.heads};
  const T dropout_p = static_cast<T>(config.dropout);
  const T eps = static_cast<T>(kLayerNormEps);
  const T scale_den = std::sqrt(static_cast<T>(shape.head_dim));
  if (cache) {
    cache->shape = shape;
    cache->blocks.assign(p.blocks.size(), {});
  }

  Tensor<T> x = embed(p, config, batch);
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    const auto& b = p.blocks[i];
    EncoderBlockCache<T> local;
    auto& c = cache ? cache->blocks[i] : local;

    c.query = linear(x, b.query_weight, b.query_bias);
    c.key = linear(x, b.key_weight, b.key_bias);
    c.value = linear(x, b.value_weight, b.value_bias);
    c.context = attention_forward(c.query, c.key, c.value, shape, scale_den, batch.attention_mask, dropout_p,
                                  training, rng, c.attention);
    auto attn = dropout(linear(c.context, b.output_weight, b.output_bias), dropout_p, training, rng);
    c.attention_dropout = std::move(attn.mask);
    c.attention_residual = add(x, attn.output);
    c.normed = layer_norm(c.attention_residual, b.attention_norm_gamma, b.attention_norm_beta, eps);

    c.ffn_pre = linear(c.normed, b.ffn_in_weight, b.ffn_in_bias);
    c.ffn_act = activate(config.activation, c.ffn_pre);
    auto ffn = dropout(linear(c.ffn_act, b.ffn_out_weight, b.ffn_out_bias), dropout_p, training, rng);
    c.ffn_dropout = std::move(ffn.mask);
    c.ffn_residual = add(c.normed, ffn.output);

    Tensor<T> next = layer_norm(c.ffn_residual, b.ffn_norm_gamma, b.ffn_norm_beta, eps);
    c.input = std::move(x);
    x = std::move(next);
  }
  return x.reshaped({batch.batch_size, batch.seq_len(), d});
}

template <typename T>
void encode_backward(EncoderParams<T>& p, const EncoderConfig& config, const Batch& batch,
                     const EncoderCache<T>& cache, const Tensor<T>& grad_h) {
  const std::size_t d = config.hidden, rows = batch.batch_size * batch.seq_len();
  if (grad_h.size() != rows * d) throw ShapeError("encode_backward: gradient shape " + to_string(grad_h.shape()));
  if (cache.blocks.size() != p.blocks.size()) throw ShapeError("encode_backward: cache does not match params");
  const T eps = static_cast<T>(kLayerNormEps);
  const T scale_den = std::sqrt(static_cast<T>(cache.shape.head_dim));

  Tensor<T> grad = grad_h.reshaped({rows, d});
  for (std::size_t i = p.blocks.size(); i-- > 0;) {
    auto& b = p.blocks[i];
    const auto& c = cache.blocks[i];

    Tensor<T> d_ffn_res({rows, d});
    layer_norm_backward(c.ffn_residual, b.ffn_norm_gamma, eps, grad, d_ffn_res.data(), b.ffn_norm_gamma.grad(),
                        b.ffn_norm_beta.grad());
    Tensor<T> d_normed = d_ffn_res;
    Tensor<T> d_ffn_out({rows, d});
    dropout_backward(c.ffn_dropout, d_ffn_res, d_ffn_out.data());
    Tensor<T> d_act(c.ffn_act.shape());
    linear_backward(c.ffn_act, b.ffn_out_weight, d_ffn_out, d_act.data(), b.ffn_out_weight.grad(),
                    b.ffn_out_bias.grad());
    Tensor<T> d_pre(c.ffn_pre.shape());
    activate_backward(config.activation, c.ffn_pre, d_act, d_pre.data());
    linear_backward(c.normed, b.ffn_in_weight, d_pre, d_normed.data(), b.ffn_in_weight.grad(),
                    b.ffn_in_bias.grad());

    Tensor<T> d_attn_res({rows, d});
    layer_norm_backward(c.attention_residual, b.attention_norm_gamma, eps, d_normed, d_attn_res.data(),
                        b.attention_norm_gamma.grad(), b.attention_norm_beta.grad());
    Tensor<T> d_input = d_attn_res;
    Tensor<T> d_attn_out({rows, d});
    dropout_backward(c.attention_dropout, d_attn_res, d_attn_out.data());
    Tensor<T> d_context({rows, d});
    linear_backward(c.context, b.output_weight, d_attn_out, d_context.data(), b.output_weight.grad(),
                    b.output_bias.grad());
    Tensor<T> d_q({rows, d}), d_k({rows, d}), d_v({rows, d});
    attention_backward(c.query, c.key, c.value, cache.shape, scale_den, c.attention, d_context, d_q.data(),
                       d_k.data(), d_v.data());
    linear_backward(c.input, b.query_weight, d_q, d_input.data(), b.query_weight.grad(), b.query_bias.grad());
    linear_backward(c.input, b.key_weight, d_k, d_input.data(), b.key_weight.grad(), b.key_bias.grad());
    linear_backward(c.input, b.value_weight, d_v, d_input.data(), b.value_weight.grad(), b.value_bias.grad());
    grad = std::move(d_input);
  }

  auto tok_grad = p.token_embedding.grad();
  auto pos_grad = p.position_embedding.grad();
  const std::size_t seq = batch.seq_len();
  for (std::size_t r = 0; r < rows; ++r) {
    const auto g = grad.row(r);
    T* tok = tok_grad.data() + static_cast<std::size_t>(batch.token_ids[r]) * d;
    T* pos = pos_grad.data() + (r % seq) * d;
    for (std::size_t j = 0; j < d; ++j) {
      tok[j] += g[j];
      pos[j] += g[j];
    }
  }
}

template void init_weight(Tensor<float>&, Rng&);
template void init_weight(Tensor<double>&, Rng&);
template EncoderParams<float> init_encoder(const EncoderConfig&, Rng&);
template EncoderParams<double> init_encoder(const EncoderConfig&, Rng&);
template Tensor<float> encode(const EncoderParams<float>&, const EncoderConfig&, const Batch&, bool, Rng&,
                              EncoderCache<float>*);
template Tensor<double> encode(const EncoderParams<double>&, const EncoderConfig&, const Batch&, bool, Rng&,
                               EncoderCache<double>*);
template void encode_backward(EncoderParams<float>&, const EncoderConfig&, const Batch&,
                              const EncoderCache<float>&, const Tensor<float>&);
template void encode_backward(EncoderParams<double>&, const EncoderConfig&, const Batch&,
                              const EncoderCache<double>&, const Tensor<double>&);

}  // namespace fan
