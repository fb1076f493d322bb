#include "fan/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "fan/parallel.hpp"

namespace fan {

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

std::size_t shape_size(const Shape& shape) {
  if (shape.empty()) return 0;
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void validate_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 3) {
    throw ShapeError("tensor rank must be 1..3, got shape " + to_string(shape));
  }
  for (auto dim : shape) {
    if (dim == 0) throw ShapeError("tensor dims must be positive, got shape " + to_string(shape));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

template <typename T>
void require_grad_size(std::span<T> grad, std::size_t expected, const char* op) {
  if (!grad.empty() && grad.size() != expected) {
    throw ShapeError(std::string(op) + ": gradient buffer has " + std::to_string(grad.size()) +
                     " elements, expected " + std::to_string(expected));
  }
}

template <typename T>
void require_matrix(const Tensor<T>& x, const char* op) {
  if (x.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + to_string(x.shape()));
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(shape_size(shape_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
  validate_shape(shape_);
  if (data_.size() != shape_size(shape_)) {
    throw ShapeError("tensor of shape " + to_string(shape_) + " needs " +
                     std::to_string(shape_size(shape_)) + " values, got " + std::to_string(data_.size()));
  }
}

template <typename T>
Tensor<T> Tensor<T>::matrix(std::initializer_list<std::initializer_list<T>> rows) {
  const std::size_t n_rows = rows.size();
  const std::size_t n_cols = n_rows ? rows.begin()->size() : 0;
  std::vector<T> values;
  values.reserve(n_rows * n_cols);
  for (const auto& row : rows) {
    if (row.size() != n_cols) throw ShapeError("ragged rows in Tensor::matrix");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor({n_rows, n_cols}, std::move(values));
}

template <typename T>
Tensor<T> Tensor<T>::identity(std::size_t n) {
  Tensor out({n, n});
  for (std::size_t i = 0; i < n; ++i) out(i, i) = T(1);
  return out;
}

template <typename T>
std::size_t Tensor<T>::rows() const noexcept {
  if (shape_.empty()) return 0;
  std::size_t r = 1;
  for (std::size_t i = 0; i + 1 < shape_.size(); ++i) r *= shape_[i];
  return r;
}

template <typename T>
void Tensor<T>::ensure_grad() {
  if (grad_.size() != data_.size()) grad_.assign(data_.size(), T(0));
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (grad_.size() != data_.size()) {
    grad_.assign(data_.size(), T(0));
  } else {
    std::fill(grad_.begin(), grad_.end(), T(0));
  }
}

template <typename T>
std::span<T> Tensor<T>::grad() {
  ensure_grad();
  return grad_;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (grad_.size() != data_.size()) throw ShapeError("gradient slot not allocated");
  return grad_;
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

// ---------------------------------------------------------------------------
// Kernels

namespace kernel {

namespace {

constexpr std::size_t kTileN = 256;
constexpr std::size_t kTileK = 128;

// C[rows r0..r1) (+)= A·B where element (i, p) of A is a[i*a_row + p*a_col].
template <typename T>
void gemm_rows(const T* a, std::size_t a_row, std::size_t a_col, const T* b, T* c, std::size_t r0,
               std::size_t r1, std::size_t n, std::size_t k) {
  for (std::size_t j0 = 0; j0 < n; j0 += kTileN) {
    const std::size_t j1 = std::min(n, j0 + kTileN);
    for (std::size_t p0 = 0; p0 < k; p0 += kTileK) {
      const std::size_t p1 = std::min(k, p0 + kTileK);
      for (std::size_t i = r0; i < r1; ++i) {
        T* __restrict c_row = c + i * n;
        for (std::size_t p = p0; p < p1; ++p) {
          const T av = a[i * a_row + p * a_col];
          const T* __restrict b_row = b + p * n;
          for (std::size_t j = j0; j < j1; ++j) c_row[j] += av * b_row[j];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k, bool trans_a,
          bool trans_b, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  if (m == 0 || n == 0 || k == 0) return;

  std::vector<T> b_t;
  const T* b_nn = b;
  if (trans_b) {
    b_t.resize(k * n);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t p = 0; p < k; ++p) b_t[p * n + j] = b[j * k + p];
    }
    b_nn = b_t.data();
  }
  const std::size_t a_row = trans_a ? 1 : k;
  const std::size_t a_col = trans_a ? m : 1;

  const std::size_t work_per_row = n * k;
  const std::size_t min_rows = std::max<std::size_t>(1, (1u << 16) / std::max<std::size_t>(1, work_per_row));
  parallel_for(m, min_rows, [&](std::size_t r0, std::size_t r1) {
    gemm_rows(a, a_row, a_col, b_nn, c, r0, r1, n, k);
  });
}

template <typename T>
void softmax_row(std::span<T> row) {
  if (row.empty()) return;
  const T max_v = *std::max_element(row.begin(), row.end());
  T sum = T(0);
  for (auto& v : row) {
    v = std::exp(v - max_v);
    sum += v;
  }
  const T inv = T(1) / sum;
  for (auto& v : row) v *= inv;
}

}  // namespace kernel

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ for " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  }
  Tensor<T> c({a.rows(), b.cols()});
  kernel::gemm(a.data().data(), b.data().data(), c.data().data(), a.rows(), b.cols(), a.cols(), false,
               false, false);
  return c;
}

template <typename T>
void matmul_backward(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& grad_c,
                     std::span<T> grad_a, std::span<T> grad_b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (grad_c.rows() != m || grad_c.cols() != n) {
    throw ShapeError("matmul_backward: grad shape " + to_string(grad_c.shape()));
  }
  require_grad_size(grad_a, a.size(), "matmul_backward");
  require_grad_size(grad_b, b.size(), "matmul_backward");
  if (!grad_a.empty()) {
    kernel::gemm(grad_c.data().data(), b.data().data(), grad_a.data(), m, k, n, false, true, true);
  }
  if (!grad_b.empty()) {
    kernel::gemm(a.data().data(), grad_c.data().data(), grad_b.data(), k, n, m, true, false, true);
  }
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  if (x.cols() != w.rows() || w.rank() != 2) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " does not fit weight " +
                     to_string(w.shape()));
  }
  if (!bias.empty() && bias.size() != w.cols()) {
    throw ShapeError("linear: bias " + to_string(bias.shape()) + " does not fit weight " +
                     to_string(w.shape()));
  }
  const std::size_t m = x.rows(), n = w.cols();
  Tensor<T> y({m, n});
  if (!bias.empty()) {
    for (std::size_t i = 0; i < m; ++i) std::copy(bias.data().begin(), bias.data().end(), y.row(i).begin());
  }
  kernel::gemm(x.data().data(), w.data().data(), y.data().data(), m, n, x.cols(), false, false,
               !bias.empty());
  return y;
}

template <typename T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& grad_y,
                     std::span<T> grad_x, std::span<T> grad_w, std::span<T> grad_bias) {
  const std::size_t m = x.rows(), k = x.cols(), n = w.cols();
  if (grad_y.rows() != m || grad_y.cols() != n) {
    throw ShapeError("linear_backward: grad shape " + to_string(grad_y.shape()));
  }
  require_grad_size(grad_x, x.size(), "linear_backward");
  require_grad_size(grad_w, w.size(), "linear_backward");
  require_grad_size(grad_bias, n, "linear_backward");
  if (!grad_x.empty()) {
    kernel::gemm(grad_y.data().data(), w.data().data(), grad_x.data(), m, k, n, false, true, true);
  }
  if (!grad_w.empty()) {
    kernel::gemm(x.data().data(), grad_y.data().data(), grad_w.data(), k, n, m, true, false, true);
  }
  if (!grad_bias.empty()) {
    for (std::size_t i = 0; i < m; ++i) {
      const auto row = grad_y.row(i);
      for (std::size_t j = 0; j < n; ++j) grad_bias[j] += row[j];
    }
  }
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  require_matrix(x, "transpose");
  Tensor<T> out({x.cols(), x.rows()});
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) out(j, i) = x(i, j);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise / structural

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out = a;
  auto o = out.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  Tensor<T> out = x;
  for (auto& v : out.data()) v *= factor;
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out = x;
  for (auto& v : out.data()) v = v > T(0) ? v : T(0);
  return out;
}

template <typename T>
void relu_backward(const Tensor<T>& x, const Tensor<T>& grad_y, std::span<T> grad_x) {
  require_same_shape(x, grad_y, "relu_backward");
  require_grad_size(grad_x, x.size(), "relu_backward");
  const auto xv = x.data();
  const auto gy = grad_y.data();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (xv[i] > T(0)) grad_x[i] += gy[i];
  }
}

namespace {
template <typename T>
constexpr T kGeluC = T(0.044715);
template <typename T>
const T kSqrt2OverPi = std::sqrt(T(2) / std::numbers::pi_v<T>);
}  // namespace

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> out = x;
  for (auto& v : out.data()) {
    const T u = kSqrt2OverPi<T> * (v + kGeluC<T> * v * v * v);
    v = T(0.5) * v * (T(1) + std::tanh(u));
  }
  return out;
}

template <typename T>
void gelu_backward(const Tensor<T>& x, const Tensor<T>& grad_y, std::span<T> grad_x) {
  require_same_shape(x, grad_y, "gelu_backward");
  require_grad_size(grad_x, x.size(), "gelu_backward");
  const auto xv = x.data();
  const auto gy = grad_y.data();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const T v = xv[i];
    const T t = std::tanh(kSqrt2OverPi<T> * (v + kGeluC<T> * v * v * v));
    const T du = kSqrt2OverPi<T> * (T(1) + T(3) * kGeluC<T> * v * v);
    grad_x[i] += gy[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * du);
  }
}

template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("concat_cols: row counts differ for " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  }
  const std::size_t n = a.cols() + b.cols();
  Tensor<T> out({a.rows(), n});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    std::copy(a.row(i).begin(), a.row(i).end(), dst.begin());
    std::copy(b.row(i).begin(), b.row(i).end(), dst.begin() + static_cast<std::ptrdiff_t>(a.cols()));
  }
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_cols(const Tensor<T>& x, std::size_t at) {
  if (at == 0 || at >= x.cols()) {
    throw ShapeError("split_cols: split point " + std::to_string(at) + " outside " + to_string(x.shape()));
  }
  Tensor<T> left({x.rows(), at});
  Tensor<T> right({x.rows(), x.cols() - at});
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto src = x.row(i);
    std::copy(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(at), left.row(i).begin());
    std::copy(src.begin() + static_cast<std::ptrdiff_t>(at), src.end(), right.row(i).begin());
  }
  return {std::move(left), std::move(right)};
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  if (begin >= end || end > x.rows()) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") outside " + to_string(x.shape()));
  }
  const std::size_t c = x.cols();
  std::vector<T> values(x.data().begin() + static_cast<std::ptrdiff_t>(begin * c),
                        x.data().begin() + static_cast<std::ptrdiff_t>(end * c));
  return Tensor<T>({end - begin, c}, std::move(values));
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_rows(const Tensor<T>& x, std::size_t at) {
  if (at == 0 || at >= x.rows()) {
    throw ShapeError("split_rows: split point " + std::to_string(at) + " outside " + to_string(x.shape()));
  }
  return {slice_rows(x, 0, at), slice_rows(x, at, x.rows())};
}

// ---------------------------------------------------------------------------
// Normalisation

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  Tensor<T> out = x;
  for (std::size_t i = 0; i < out.rows(); ++i) kernel::softmax_row(out.row(i));
  return out;
}

template <typename T>
void softmax_rows_backward(const Tensor<T>& y, const Tensor<T>& grad_y, std::span<T> grad_x) {
  require_same_shape(y, grad_y, "softmax_rows_backward");
  require_grad_size(grad_x, y.size(), "softmax_rows_backward");
  const std::size_t n = y.cols();
  for (std::size_t i = 0; i < y.rows(); ++i) {
    const auto yr = y.row(i);
    const auto gr = grad_y.row(i);
    T dot = T(0);
    for (std::size_t j = 0; j < n; ++j) dot += yr[j] * gr[j];
    T* gx = grad_x.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) gx[j] += yr[j] * (gr[j] - dot);
  }
}

namespace {

template <typename T>
void row_stats(std::span<const T> row, T eps, T& mean, T& rstd) {
  const T n = static_cast<T>(row.size());
  T sum = T(0);
  for (auto v : row) sum += v;
  mean = sum / n;
  T var = T(0);
  for (auto v : row) var += (v - mean) * (v - mean);
  var /= n;
  rstd = T(1) / std::sqrt(var + eps);
}

}  // namespace

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const std::size_t d = x.cols();
  if (gamma.size() != d || beta.size() != d) {
    throw ShapeError("layer_norm: gamma/beta " + to_string(gamma.shape()) + "/" + to_string(beta.shape()) +
                     " do not fit input " + to_string(x.shape()));
  }
  Tensor<T> out(x.shape());
  const auto g = gamma.data();
  const auto b = beta.data();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto xr = x.row(i);
    T mean, rstd;
    row_stats(xr, eps, mean, rstd);
    auto yr = out.row(i);
    for (std::size_t j = 0; j < d; ++j) yr[j] = (xr[j] - mean) * rstd * g[j] + b[j];
  }
  return out;
}

template <typename T>
void layer_norm_backward(const Tensor<T>& x, const Tensor<T>& gamma, T eps, const Tensor<T>& grad_y,
                         std::span<T> grad_x, std::span<T> grad_gamma, std::span<T> grad_beta) {
  require_same_shape(x, grad_y, "layer_norm_backward");
  const std::size_t d = x.cols();
  require_grad_size(grad_x, x.size(), "layer_norm_backward");
  require_grad_size(grad_gamma, d, "layer_norm_backward");
  require_grad_size(grad_beta, d, "layer_norm_backward");
  const auto g = gamma.data();
  std::vector<T> xhat(d), dxhat(d);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto xr = x.row(i);
    const auto gy = grad_y.row(i);
    T mean, rstd;
    row_stats(xr, eps, mean, rstd);
    T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[j] = (xr[j] - mean) * rstd;
      dxhat[j] = gy[j] * g[j];
      sum_dxhat += dxhat[j];
      sum_dxhat_xhat += dxhat[j] * xhat[j];
      if (!grad_gamma.empty()) grad_gamma[j] += gy[j] * xhat[j];
      if (!grad_beta.empty()) grad_beta[j] += gy[j];
    }
    if (grad_x.empty()) continue;
    const T inv_d = T(1) / static_cast<T>(d);
    T* gx = grad_x.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) {
      gx[j] += rstd * (dxhat[j] - sum_dxhat * inv_d - xhat[j] * sum_dxhat_xhat * inv_d);
    }
  }
}

// ---------------------------------------------------------------------------
// Dropout

template <typename T>
DropoutResult<T> dropout(const Tensor<T>& x, T p, bool training, Rng& rng) {
  if (!(p >= T(0) && p < T(1))) throw ConfigError("dropout probability must be in [0, 1)");
  DropoutResult<T> result{x, {}};
  if (!training || p == T(0)) return result;
  const T keep_scale = T(1) / (T(1) - p);
  result.mask.resize(x.size());
  auto out = result.output.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T m = rng.uniform() < static_cast<double>(p) ? T(0) : keep_scale;
    result.mask[i] = m;
    out[i] *= m;
  }
  return result;
}

template <typename T>
void dropout_backward(const std::vector<T>& mask, const Tensor<T>& grad_y, std::span<T> grad_x) {
  require_grad_size(grad_x, grad_y.size(), "dropout_backward");
  const auto gy = grad_y.data();
  if (mask.empty()) {
    for (std::size_t i = 0; i < gy.size(); ++i) grad_x[i] += gy[i];
    return;
  }
  if (mask.size() != gy.size()) throw ShapeError("dropout_backward: mask size mismatch");
  for (std::size_t i = 0; i < gy.size(); ++i) grad_x[i] += mask[i] * gy[i];
}

template <typename T>
void check_finite(std::span<const T> values, const std::string& what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(what + ": non-finite value at index " + std::to_string(i));
    }
  }
}

// ---------------------------------------------------------------------------
// Instantiations

#define FAN_INSTANTIATE(T)                                                                          \
  template class Tensor<T>;                                                                         \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                    \
  template void matmul_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::span<T>, \
                                std::span<T>);                                                      \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                  \
  template void linear_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::span<T>, \
                                std::span<T>, std::span<T>);                                        \
  template Tensor<T> transpose(const Tensor<T>&);                                                   \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> scale(const Tensor<T>&, T);                                                    \
  template Tensor<T> relu(const Tensor<T>&);                                                        \
  template void relu_backward(const Tensor<T>&, const Tensor<T>&, std::span<T>);                    \
  template Tensor<T> gelu(const Tensor<T>&);                                                        \
  template void gelu_backward(const Tensor<T>&, const Tensor<T>&, std::span<T>);                    \
  template Tensor<T> concat_cols(const Tensor<T>&, const Tensor<T>&);                               \
  template std::pair<Tensor<T>, Tensor<T>> split_cols(const Tensor<T>&, std::size_t);               \
  template std::pair<Tensor<T>, Tensor<T>> split_rows(const Tensor<T>&, std::size_t);               \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                        \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                                \
  template void softmax_rows_backward(const Tensor<T>&, const Tensor<T>&, std::span<T>);            \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);           \
  template void layer_norm_backward(const Tensor<T>&, const Tensor<T>&, T, const Tensor<T>&,        \
                                    std::span<T>, std::span<T>, std::span<T>);                      \
  template DropoutResult<T> dropout(const Tensor<T>&, T, bool, Rng&);                               \
  template void dropout_backward(const std::vector<T>&, const Tensor<T>&, std::span<T>);            \
  template void check_finite(std::span<const T>, const std::string&);                               \
  template void kernel::gemm(const T*, const T*, T*, std::size_t, std::size_t, std::size_t, bool,   \
                             bool, bool);                                                           \
  template void kernel::softmax_row(std::span<T>);

FAN_INSTANTIATE(float)
FAN_INSTANTIATE(double)

#undef FAN_INSTANTIATE

}  // namespace fan
