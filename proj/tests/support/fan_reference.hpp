#pragma once

// Straight-line re-derivation of the FAN forward pass on nested vectors,
// sharing no kernels with the library. Used as an oracle for the module's
// intermediates.

#include <cmath>
#include <vector>

#include "fan/fan_attention.hpp"

namespace fan::testing {

using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const Tensor<double>& t) {
  const std::size_t rows = t.size() / t.shape().back(), cols = t.shape().back();
  Mat m(rows, std::vector<double>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) m[r][c] = t[r * cols + c];
  }
  return m;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b[0].size(); ++j) {
      for (std::size_t k = 0; k < b.size(); ++k) out[i][j] += a[i][k] * b[k][j];
    }
  }
  return out;
}

inline Mat transpose(const Mat& a) {
  Mat out(a[0].size(), std::vector<double>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[0].size(); ++j) out[j][i] = a[i][j];
  }
  return out;
}

inline void softmax_row(std::vector<double>& row, const std::vector<bool>& keep) {
  double peak = -INFINITY;
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (keep[j]) peak = std::max(peak, row[j]);
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    row[j] = keep[j] ? std::exp(row[j] - peak) : 0.0;
    sum += row[j];
  }
  for (auto& v : row) v /= sum;
}

struct ReferenceTrace {
  Mat alpha;
  Mat h_a;
  std::vector<Mat> probs;  // one S × S matrix per (batch, head), batch-major
  Mat h_m;
  Mat h_l;
  Mat h_out;
};

/// `h` holds B·S rows of width d; `key_mask` is the batch attention mask.
inline ReferenceTrace reference_fan(const Mat& h, const FanParams<double>& p, const Tensor<double>& w_intent,
                                    const Tensor<double>& w_slot, std::size_t batch, std::size_t seq,
                                    std::size_t heads, const std::vector<std::uint8_t>& key_mask) {
  const std::size_t d = h[0].size(), dh = d / heads;
  ReferenceTrace t;

  Mat w = to_mat(w_intent);
  const Mat ws = to_mat(w_slot);
  for (std::size_t r = 0; r < d; ++r) w[r].insert(w[r].end(), ws[r].begin(), ws[r].end());
  t.alpha = matmul(h, w);
  for (auto& row : t.alpha) softmax_row(row, std::vector<bool>(row.size(), true));
  Mat enriched = matmul(t.alpha, transpose(w));
  for (std::size_t r = 0; r < h.size(); ++r) {
    for (std::size_t c = 0; c < d; ++c) enriched[r][c] += h[r][c];
  }
  t.h_a = matmul(enriched, to_mat(p.label_projection));

  const Mat q = matmul(t.h_a, to_mat(p.query_weight));
  const Mat k = matmul(t.h_a, to_mat(p.key_weight));
  const Mat v = matmul(t.h_a, to_mat(p.value_weight));
  Mat context(h.size(), std::vector<double>(d, 0.0));
  const double scale = std::sqrt(static_cast<double>(d) / static_cast<double>(heads));
  for (std::size_t b = 0; b < batch; ++b) {
    std::vector<bool> keep(seq);
    for (std::size_t j = 0; j < seq; ++j) keep[j] = key_mask[b * seq + j] != 0;
    for (std::size_t hd = 0; hd < heads; ++hd) {
      Mat probs(seq, std::vector<double>(seq, 0.0));
      for (std::size_t i = 0; i < seq; ++i) {
        for (std::size_t j = 0; j < seq; ++j) {
          for (std::size_t c = hd * dh; c < (hd + 1) * dh; ++c) probs[i][j] += q[b * seq + i][c] * k[b * seq + j][c];
          probs[i][j] /= scale;
        }
        softmax_row(probs[i], keep);
        for (std::size_t j = 0; j < seq; ++j) {
          for (std::size_t c = hd * dh; c < (hd + 1) * dh; ++c) context[b * seq + i][c] += probs[i][j] * v[b * seq + j][c];
        }
      }
      t.probs.push_back(std::move(probs));
    }
  }
  t.h_m = matmul(context, to_mat(p.output_weight));

  t.h_l = Mat(h.size(), std::vector<double>(d));
  for (std::size_t r = 0; r < h.size(); ++r) {
    std::vector<double> x(d);
    double mean = 0.0, var = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += x[c] = h[r][c] + t.h_m[r][c];
    mean /= static_cast<double>(d);
    for (double xv : x) var += (xv - mean) * (xv - mean);
    var /= static_cast<double>(d);
    for (std::size_t c = 0; c < d; ++c) {
      t.h_l[r][c] = p.norm_gamma[c] * (x[c] - mean) / std::sqrt(var + 1e-12) + p.norm_beta[c];
    }
  }

  Mat hidden = matmul(t.h_l, to_mat(p.ffn_in_weight));
  for (auto& row : hidden) {
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = std::max(0.0, row[c] + p.ffn_in_bias[c]);
  }
  t.h_out = matmul(hidden, to_mat(p.ffn_out_weight));
  for (auto& row : t.h_out) {
    for (std::size_t c = 0; c < d; ++c) row[c] += p.ffn_out_bias[c];
  }
  return t;
}

}  // namespace fan::testing
