#pragma once

// Dense rank-1..3 tensors and the hand-differentiated ops the model is built
// from. Every op has a forward function returning a fresh tensor and, where
// differentiable, a `*_backward` function that ACCUMULATES gradients into the
// spans it is given. An empty span means "gradient not needed".
//
// Only `float` and `double` are instantiated: 64-bit for gradient checks,
// 32-bit everywhere else.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fan/errors.hpp"
#include "fan/rng.hpp"

namespace fan {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  /// Builds a 2-D tensor from nested rows.
  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows);
  static Tensor identity(std::size_t n);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // Matrix view: leading dims are flattened into rows.
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& values() noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<T> row(std::size_t r) { return std::span<T>(data_).subspan(r * cols(), cols()); }
  std::span<const T> row(std::size_t r) const {
    return std::span<const T>(data_).subspan(r * cols(), cols());
  }

  /// Gradient slot. Allocated (zeroed) on first `ensure_grad`.
  bool has_grad() const noexcept { return grad_.size() == data_.size() && !data_.empty(); }
  void ensure_grad();
  void zero_grad();
  void drop_grad() noexcept { grad_ = {}; }
  std::span<T> grad();
  std::span<const T> grad() const;

  /// Same data viewed with a different shape of equal element count.
  Tensor reshaped(Shape shape) const;

  void fill(T value);

  /// Conversion between float widths (gradient slot not copied).
  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

 private:
  Shape shape_;
  std::vector<T> data_;
  std::vector<T> grad_;
};

// ---------------------------------------------------------------------------
// Linear algebra.

/// c = a · b for a[m×k], b[k×n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// da += dc · bᵀ, db += aᵀ · dc.
template <typename T>
void matmul_backward(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& grad_c,
                     std::span<T> grad_a, std::span<T> grad_b);

/// y = x · w + bias (bias broadcast over rows; may be empty).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

template <typename T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& grad_y,
                     std::span<T> grad_x, std::span<T> grad_w, std::span<T> grad_bias);

template <typename T>
Tensor<T> transpose(const Tensor<T>& x);

// ---------------------------------------------------------------------------
// Elementwise and structural ops.

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

/// grad_x += grad_y where x > 0.
template <typename T>
void relu_backward(const Tensor<T>& x, const Tensor<T>& grad_y, std::span<T> grad_x);

/// tanh approximation of GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

template <typename T>
void gelu_backward(const Tensor<T>& x, const Tensor<T>& grad_y, std::span<T> grad_x);

/// [a | b] along columns; row counts must match.
template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b);

/// Inverse of concat_cols: columns [0, at) and [at, cols).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_cols(const Tensor<T>& x, std::size_t at);

/// Rows [0, at) and [at, rows).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_rows(const Tensor<T>& x, std::size_t at);

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end);

// ---------------------------------------------------------------------------
// Normalisation.

/// Row-wise softmax with max subtraction.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x);

/// grad_x += J_softmax(y)ᵀ · grad_y, from the forward output y.
template <typename T>
void softmax_rows_backward(const Tensor<T>& y, const Tensor<T>& grad_y, std::span<T> grad_x);

/// Per row: (x - mean) / sqrt(var + eps) * gamma + beta, population variance.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);

template <typename T>
void layer_norm_backward(const Tensor<T>& x, const Tensor<T>& gamma, T eps,
                         const Tensor<T>& grad_y, std::span<T> grad_x, std::span<T> grad_gamma,
                         std::span<T> grad_beta);

// ---------------------------------------------------------------------------
// Dropout.

template <typename T>
struct DropoutResult {
  Tensor<T> output;
  /// Per-element multiplier (0 or 1/(1-p)); empty when dropout was the identity.
  std::vector<T> mask;
};

/// Inverted dropout. Identity when `training` is false or p == 0.
template <typename T>
DropoutResult<T> dropout(const Tensor<T>& x, T p, bool training, Rng& rng);

/// grad_x += mask ⊙ grad_y (or grad_y when mask is empty).
template <typename T>
void dropout_backward(const std::vector<T>& mask, const Tensor<T>& grad_y, std::span<T> grad_x);

// ---------------------------------------------------------------------------
// Raw kernels, shared by ops and the attention code.
namespace kernel {

/// C[m×n] (+)= op(A) · op(B), with op = transpose when the flag is set.
/// A is m×k (or k×m when trans_a), B is k×n (or n×k when trans_b).
/// Summation over k runs in ascending order for every output element,
/// independent of the thread count.
template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k, bool trans_a,
          bool trans_b, bool accumulate);

template <typename T>
void softmax_row(std::span<T> row);

}  // namespace kernel

/// Throws NumericError when any value is NaN or infinite.
template <typename T>
void check_finite(std::span<const T> values, const std::string& what);

}  // namespace fan
