/*
 * Copyright 2026 The tpgnn Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tpgnn/common.hpp"

namespace tpgnn {

/// Row-major matrix of doubles. Rows are vertices, columns feature dims.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("DenseMatrix: data length " + std::to_string(data_.size()) +
                       " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }
  DenseMatrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeError("DenseMatrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
  }

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// A column range of a wider matrix, held by one worker.
struct FeatureSlice {
  WorkerId owner = 0;
  Range cols;                   // [lo, hi) within the parent dimension
  std::size_t parent_cols = 0;  // D
  DenseMatrix data;             // rows x cols.size()

  std::size_t rows() const noexcept { return data.rows(); }
  bool is_full_width() const noexcept { return cols.begin == 0 && cols.end == parent_cols; }
};

namespace detail {
inline void require_same_shape(const DenseMatrix& a, const DenseMatrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
}
}  // namespace detail

// Every product below accumulates each output entry over the inner index in
// ascending order starting from 0.0, so results depend only on operand order.

/// a * b
inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " * " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  DenseMatrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out = c.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      auto brow = b.row(k);
      for (std::size_t j = 0; j < out.size(); ++j) out[j] += aik * brow[j];
    }
  }
  return c;
}

/// transpose(a) * b
inline DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows()) throw ShapeError("matmul_tn: row counts differ");
  DenseMatrix c(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto brow = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      auto out = c.row(i);
      for (std::size_t j = 0; j < out.size(); ++j) out[j] += aki * brow[j];
    }
  }
  return c;
}

/// a * transpose(b)
inline DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_nt: column counts differ");
  DenseMatrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto arow = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto brow = b.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < arow.size(); ++k) acc += arow[k] * brow[k];
      c(i, j) = acc;
    }
  }
  return c;
}

inline DenseMatrix identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

inline DenseMatrix relu(const DenseMatrix& m) {
  DenseMatrix out = m;
  for (double& x : out.data()) x = x > 0.0 ? x : 0.0;
  return out;
}

inline DenseMatrix leaky_relu(const DenseMatrix& m, double slope) {
  DenseMatrix out = m;
  for (double& x : out.data()) x = x > 0.0 ? x : slope * x;
  return out;
}

/// Upstream gradient masked by the ReLU derivative at `pre`.
inline DenseMatrix relu_grad(const DenseMatrix& pre, const DenseMatrix& upstream) {
  detail::require_same_shape(pre, upstream, "relu_grad");
  DenseMatrix out = upstream;
  auto p = pre.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = p[i] > 0.0 ? o[i] : 0.0;
  return out;
}

inline DenseMatrix leaky_relu_grad(const DenseMatrix& pre, const DenseMatrix& upstream,
                                   double slope) {
  detail::require_same_shape(pre, upstream, "leaky_relu_grad");
  DenseMatrix out = upstream;
  auto p = pre.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = p[i] > 0.0 ? o[i] : slope * o[i];
  return out;
}

inline DenseMatrix row_softmax(const DenseMatrix& m) {
  DenseMatrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto in = m.row(r);
    auto o = out.row(r);
    if (in.empty()) continue;
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = std::exp(in[c] - mx);
      sum += o[c];
    }
    for (double& x : o) x /= sum;
  }
  return out;
}

struct LossAndGrad {
  double loss = 0.0;
  DenseMatrix grad;
};

/// Summed negative log-likelihood over masked rows. Gradient rows are
/// (softmax - onehot) / normalizer; unmasked rows get zero gradient. Engines
/// that hold only part of the rows use this with the global masked count.
inline LossAndGrad softmax_xent_sum(const DenseMatrix& logits, std::span<const int> labels,
                                    std::span<const std::uint8_t> mask, double normalizer) {
  if (labels.size() != logits.rows() || mask.size() != logits.rows()) {
    throw ShapeError("softmax_xent: labels/mask length must equal logits rows");
  }
  LossAndGrad out{0.0, DenseMatrix(logits.rows(), logits.cols())};
  const auto classes = static_cast<int>(logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    if (!mask[r]) continue;
    const int y = labels[r];
    if (y < 0 || y >= classes) {
      throw ConfigError("softmax_xent: label " + std::to_string(y) + " outside [0, " +
                        std::to_string(classes) + ")");
    }
    auto in = logits.row(r);
    auto g = out.grad.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      g[c] = std::exp(in[c] - mx);
      sum += g[c];
    }
    out.loss += -(in[static_cast<std::size_t>(y)] - mx - std::log(sum));
    for (std::size_t c = 0; c < g.size(); ++c) {
      const double p = g[c] / sum;
      g[c] = (p - (static_cast<int>(c) == y ? 1.0 : 0.0)) / normalizer;
    }
  }
  return out;
}

/// Mean negative log-likelihood over the masked rows.
inline LossAndGrad softmax_xent_loss(const DenseMatrix& logits, std::span<const int> labels,
                                     std::span<const std::uint8_t> mask) {
  const auto count = static_cast<std::size_t>(std::count_if(
      mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; }));
  if (count == 0) throw ConfigError("softmax_xent_loss: empty mask, loss undefined");
  LossAndGrad out = softmax_xent_sum(logits, labels, mask, static_cast<double>(count));
  out.loss /= static_cast<double>(count);
  return out;
}

/// Index of the largest entry of each row; first wins on ties.
inline std::vector<int> row_argmax(const DenseMatrix& m) {
  std::vector<int> out(m.rows(), 0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto in = m.row(r);
    out[r] = static_cast<int>(std::max_element(in.begin(), in.end()) - in.begin());
  }
  return out;
}

inline FeatureSlice col_slice(const DenseMatrix& m, Range cols, WorkerId owner = 0) {
  if (cols.begin > cols.end || cols.end > m.cols()) {
    throw ShapeError("col_slice: range [" + std::to_string(cols.begin) + ", " +
                     std::to_string(cols.end) + ") outside " + std::to_string(m.cols()) +
                     " columns");
  }
  FeatureSlice s{owner, cols, m.cols(), DenseMatrix(m.rows(), cols.size())};
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto src = m.row(r).subspan(cols.begin, cols.size());
    std::copy(src.begin(), src.end(), s.data.row(r).begin());
  }
  return s;
}

/// Reassembles slices in ascending owner order. Their column ranges must tile
/// [0, D) exactly.
inline DenseMatrix col_concat(std::span<const FeatureSlice> slices) {
  if (slices.empty()) throw ShapeError("col_concat: no slices");
  std::vector<const FeatureSlice*> order;
  for (const auto& s : slices) order.push_back(&s);
  std::stable_sort(order.begin(), order.end(),
                   [](const FeatureSlice* a, const FeatureSlice* b) { return a->owner < b->owner; });
  const std::size_t rows = order.front()->rows();
  const std::size_t total = order.front()->parent_cols;
  std::size_t next = 0;
  for (const FeatureSlice* s : order) {
    if (s->rows() != rows) throw ShapeError("col_concat: slices disagree on row count");
    if (s->parent_cols != total) throw ShapeError("col_concat: slices disagree on width");
    if (s->cols.begin != next) {
      throw ShapeError(s->cols.begin < next ? "col_concat: overlapping column ranges"
                                            : "col_concat: gap in column ranges");
    }
    if (s->data.cols() != s->cols.size()) throw ShapeError("col_concat: slice data width");
    next = s->cols.end;
  }
  if (next != total) throw ShapeError("col_concat: column ranges do not reach parent width");
  DenseMatrix out(rows, total);
  for (const FeatureSlice* s : order) {
    for (std::size_t r = 0; r < rows; ++r) {
      auto src = s->data.row(r);
      std::copy(src.begin(), src.end(), out.row(r).begin() + static_cast<long>(s->cols.begin));
    }
  }
  return out;
}

/// Uniform in +-sqrt(6 / (rows + cols)), deterministic per seed.
inline DenseMatrix glorot_init(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  DenseMatrix m(rows, cols);
  if (rows + cols == 0) return m;
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& x : m.data()) x = dist(rng);
  return m;
}

inline DenseMatrix select_rows(const DenseMatrix& m, std::span<const VertexId> rows) {
  DenseMatrix out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto src = m.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

inline void axpy_inplace(DenseMatrix& y, double alpha, const DenseMatrix& x) {
  detail::require_same_shape(y, x, "axpy");
  auto yd = y.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] += alpha * xd[i];
}

inline double frobenius_norm(const DenseMatrix& m) {
  double s = 0.0;
  for (double x : m.data()) s += x * x;
  return std::sqrt(s);
}

inline double dot(const DenseMatrix& a, const DenseMatrix& b) {
  detail::require_same_shape(a, b, "dot");
  double s = 0.0;
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) s += ad[i] * bd[i];
  return s;
}

inline double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  detail::require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) m = std::max(m, std::abs(ad[i] - bd[i]));
  return m;
}

}  // namespace tpgnn
