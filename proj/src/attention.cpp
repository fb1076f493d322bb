#include "fan/attention.hpp"

#include "fan/parallel.hpp"

namespace fan {

namespace {

void validate(const AttentionShape& shape, std::size_t rows, std::size_t cols, std::size_t mask_size) {
  if (shape.heads == 0 || shape.head_dim == 0) throw ShapeError("attention: heads and head_dim must be positive");
  if (rows != shape.batch * shape.seq || cols != shape.model_dim()) {
    throw ShapeError("attention: input " + std::to_string(rows) + "x" + std::to_string(cols) +
                     " does not match batch*seq=" + std::to_string(shape.batch * shape.seq) +
                     ", heads*head_dim=" + std::to_string(shape.model_dim()));
  }
  if (mask_size != rows) throw ShapeError("attention: key mask has wrong length");
}

// Copies the (item, head) block out of a flattened projection.
template <typename T>
void gather(const Tensor<T>& x, const AttentionShape& s, std::size_t b, std::size_t h, std::vector<T>& out) {
  out.resize(s.seq * s.head_dim);
  const std::size_t d = s.model_dim();
  for (std::size_t i = 0; i < s.seq; ++i) {
    const T* src = x.data().data() + (b * s.seq + i) * d + h * s.head_dim;
    std::copy(src, src + s.head_dim, out.data() + i * s.head_dim);
  }
}

template <typename T>
void scatter_add(std::span<T> dst, const AttentionShape& s, std::size_t b, std::size_t h, const std::vector<T>& block) {
  const std::size_t d = s.model_dim();
  for (std::size_t i = 0; i < s.seq; ++i) {
    T* out = dst.data() + (b * s.seq + i) * d + h * s.head_dim;
    const T* src = block.data() + i * s.head_dim;
    for (std::size_t j = 0; j < s.head_dim; ++j) out[j] += src[j];
  }
}

}  // namespace

template <typename T>
Tensor<T> attention_forward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                            const AttentionShape& s, T scale_denominator,
                            std::span<const std::uint8_t> key_mask, T dropout_p, bool training, Rng& rng,
                            AttentionCache<T>& cache) {
  validate(s, q.rows(), q.cols(), key_mask.size());
  if (k.shape() != q.shape() || v.shape() != q.shape()) throw ShapeError("attention: q/k/v shapes differ");
  if (!(dropout_p >= T(0) && dropout_p < T(1))) throw ConfigError("dropout probability must be in [0, 1)");

  const std::size_t block = s.seq * s.seq;
  const std::size_t pairs = s.batch * s.heads;
  cache.probs.assign(pairs * block, T(0));
  const T inv_scale = T(1) / scale_denominator;

  parallel_for(pairs, 1, [&](std::size_t p0, std::size_t p1) {
    std::vector<T> qh, kh;
    for (std::size_t p = p0; p < p1; ++p) {
      const std::size_t b = p / s.heads, h = p % s.heads;
      gather(q, s, b, h, qh);
      gather(k, s, b, h, kh);
      T* scores = cache.probs.data() + p * block;
      kernel::gemm(qh.data(), kh.data(), scores, s.seq, s.seq, s.head_dim, false, true, false);
      const std::uint8_t* mask = key_mask.data() + b * s.seq;
      for (std::size_t i = 0; i < s.seq; ++i) {
        T* row = scores + i * s.seq;
        for (std::size_t j = 0; j < s.seq; ++j) {
          row[j] = mask[j] ? row[j] * inv_scale : static_cast<T>(kMaskedLogit);
        }
        kernel::softmax_row(std::span<T>(row, s.seq));
      }
    }
  });

  const bool use_dropout = training && dropout_p > T(0);
  cache.dropout_mask.clear();
  if (use_dropout) {
    const T keep_scale = T(1) / (T(1) - dropout_p);
    cache.dropout_mask.resize(cache.probs.size());
    for (auto& m : cache.dropout_mask) m = rng.uniform() < static_cast<double>(dropout_p) ? T(0) : keep_scale;
  }

  Tensor<T> out(q.shape());
  parallel_for(pairs, 1, [&](std::size_t p0, std::size_t p1) {
    std::vector<T> vh, weights, ctx(s.seq * s.head_dim);
    for (std::size_t p = p0; p < p1; ++p) {
      const std::size_t b = p / s.heads, h = p % s.heads;
      gather(v, s, b, h, vh);
      const T* probs = cache.probs.data() + p * block;
      weights.assign(probs, probs + block);
      if (use_dropout) {
        const T* m = cache.dropout_mask.data() + p * block;
        for (std::size_t i = 0; i < block; ++i) weights[i] *= m[i];
      }
      kernel::gemm(weights.data(), vh.data(), ctx.data(), s.seq, s.head_dim, s.seq, false, false, false);
      scatter_add(out.data(), s, b, h, ctx);
    }
  });
  return out;
}

template <typename T>
void attention_backward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const AttentionShape& s,
                        T scale_denominator, const AttentionCache<T>& cache, const Tensor<T>& grad_out,
                        std::span<T> grad_q, std::span<T> grad_k, std::span<T> grad_v) {
  if (grad_out.shape() != q.shape()) throw ShapeError("attention_backward: gradient shape mismatch");
  const std::size_t block = s.seq * s.seq;
  const std::size_t pairs = s.batch * s.heads;
  if (cache.probs.size() != pairs * block) throw ShapeError("attention_backward: stale cache");
  const bool use_dropout = !cache.dropout_mask.empty();
  const T inv_scale = T(1) / scale_denominator;

  // Each (item, head) pair writes a disjoint block of the gradients.
  parallel_for(pairs, 1, [&](std::size_t p0, std::size_t p1) {
    std::vector<T> qh, kh, vh, gh, weights, d_weights(block), d_scores(block);
    std::vector<T> dq(s.seq * s.head_dim), dk(s.seq * s.head_dim), dv(s.seq * s.head_dim);
    for (std::size_t p = p0; p < p1; ++p) {
      const std::size_t b = p / s.heads, h = p % s.heads;
      gather(q, s, b, h, qh);
      gather(k, s, b, h, kh);
      gather(v, s, b, h, vh);
      gather(grad_out, s, b, h, gh);
      const T* probs = cache.probs.data() + p * block;
      const T* mask = use_dropout ? cache.dropout_mask.data() + p * block : nullptr;
      weights.assign(probs, probs + block);
      if (mask) {
        for (std::size_t i = 0; i < block; ++i) weights[i] *= mask[i];
      }

      // ctx = W V
      kernel::gemm(weights.data(), gh.data(), dv.data(), s.seq, s.head_dim, s.seq, true, false, false);
      kernel::gemm(gh.data(), vh.data(), d_weights.data(), s.seq, s.seq, s.head_dim, false, true, false);
      if (mask) {
        for (std::size_t i = 0; i < block; ++i) d_weights[i] *= mask[i];
      }
      for (std::size_t i = 0; i < s.seq; ++i) {
        const T* y = probs + i * s.seq;
        const T* g = d_weights.data() + i * s.seq;
        T dot = T(0);
        for (std::size_t j = 0; j < s.seq; ++j) dot += y[j] * g[j];
        T* ds = d_scores.data() + i * s.seq;
        for (std::size_t j = 0; j < s.seq; ++j) ds[j] = y[j] * (g[j] - dot) * inv_scale;
      }
      kernel::gemm(d_scores.data(), kh.data(), dq.data(), s.seq, s.head_dim, s.seq, false, false, false);
      kernel::gemm(d_scores.data(), qh.data(), dk.data(), s.seq, s.head_dim, s.seq, true, false, false);
      if (!grad_q.empty()) scatter_add(grad_q, s, b, h, dq);
      if (!grad_k.empty()) scatter_add(grad_k, s, b, h, dk);
      if (!grad_v.empty()) scatter_add(grad_v, s, b, h, dv);
    }
  });
}

template Tensor<float> attention_forward(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                         const AttentionShape&, float, std::span<const std::uint8_t>, float,
                                         bool, Rng&, AttentionCache<float>&);
template Tensor<double> attention_forward(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                          const AttentionShape&, double, std::span<const std::uint8_t>,
                                          double, bool, Rng&, AttentionCache<double>&);
template void attention_backward(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                 const AttentionShape&, float, const AttentionCache<float>&,
                                 const Tensor<float>&, std::span<float>, std::span<float>, std::span<float>);
template void attention_backward(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                 const AttentionShape&, double, const AttentionCache<double>&,
                                 const Tensor<double>&, std::span<double>, std::span<double>,
                                 std::span<double>);

}  // namespace fan
