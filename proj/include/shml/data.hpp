#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "shml/error.hpp"

namespace shml {

// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {values.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }

  std::vector<double> column(std::size_t c) const {
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) out[r] = (*this)(r, c);
    return out;
  }

  bool empty() const noexcept { return rows == 0; }
  friend bool operator==(const Matrix&, const Matrix&) = default;
};

// Ordered feature names. Lookups ignore case and whitespace so that text
// produced by a language model ("Blood Pressure", "age") resolves.
struct Schema {
  std::vector<std::string> names;

  std::size_t size() const noexcept { return names.size(); }

  static std::string normalize(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
      if (c == ' ' || c == '_' || c == '\t') continue;
      out.push_back(static_cast<char>(c >= 'A' && c <= 'Z' ? c - 'A' + 'a' : c));
    }
    return out;
  }

  std::optional<std::size_t> find(std::string_view name) const {
    const std::string key = normalize(name);
    for (std::size_t i = 0; i < names.size(); ++i)
      if (normalize(names[i]) == key) return i;
    return std::nullopt;
  }

  std::size_t index_of(std::string_view name) const {
    if (auto i = find(name)) return *i;
    throw ConfigError("unknown feature '" + std::string(name) + "'");
  }

  friend bool operator==(const Schema&, const Schema&) = default;
};

// One batch of labelled observations observed at stream position t.
// corruption_mask, when present, is row-major with the same shape as X.
struct LabeledBatch {
  Matrix X;
  std::vector<int> y;
  std::size_t t = 0;
  std::optional<std::vector<std::uint8_t>> corruption_mask;

  std::size_t size() const noexcept { return y.size(); }
  bool empty() const noexcept { return y.empty(); }

  void validate() const {
    if (X.rows != y.size()) throw DimensionError("batch has " + std::to_string(X.rows) + " rows but " +
                                                 std::to_string(y.size()) + " labels");
    for (int v : y)
      if (v != 0 && v != 1) throw ConfigError("labels must be binary");
    if (corruption_mask && corruption_mask->size() != X.values.size())
      throw DimensionError("corruption mask shape does not match X");
  }
};

inline LabeledBatch select_rows(const LabeledBatch& b, std::span<const std::size_t> rows) {
  LabeledBatch out;
  out.t = b.t;
  out.X = Matrix(rows.size(), b.X.cols);
  out.y.resize(rows.size());
  if (b.corruption_mask) out.corruption_mask.emplace(rows.size() * b.X.cols, 0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = b.X.row(rows[i]);
    std::copy(src.begin(), src.end(), out.X.row(i).begin());
    out.y[i] = b.y[rows[i]];
    if (b.corruption_mask)
      std::copy_n(b.corruption_mask->begin() + static_cast<std::ptrdiff_t>(rows[i] * b.X.cols), b.X.cols,
                  out.corruption_mask->begin() + static_cast<std::ptrdiff_t>(i * b.X.cols));
  }
  return out;
}

inline LabeledBatch slice_rows(const LabeledBatch& b, std::size_t begin, std::size_t end) {
  std::vector<std::size_t> rows(end - begin);
  for (std::size_t i = begin; i < end; ++i) rows[i - begin] = i;
  return select_rows(b, rows);
}

// Row-wise concatenation. t of the result is the t of the last batch.
inline LabeledBatch concat(std::span<const LabeledBatch> batches) {
  LabeledBatch out;
  if (batches.empty()) return out;
  std::size_t rows = 0;
  const std::size_t cols = batches.front().X.cols;
  bool any_mask = false;
  for (const auto& b : batches) {
    if (b.X.cols != cols && b.X.rows > 0) throw DimensionError("cannot concatenate batches of different width");
    rows += b.size();
    any_mask = any_mask || b.corruption_mask.has_value();
  }
  out.X = Matrix(0, cols);
  out.X.rows = rows;
  out.X.values.reserve(rows * cols);
  out.y.reserve(rows);
  if (any_mask) out.corruption_mask.emplace();
  for (const auto& b : batches) {
    out.X.values.insert(out.X.values.end(), b.X.values.begin(), b.X.values.end());
    out.y.insert(out.y.end(), b.y.begin(), b.y.end());
    if (any_mask) {
      if (b.corruption_mask)
        out.corruption_mask->insert(out.corruption_mask->end(), b.corruption_mask->begin(), b.corruption_mask->end());
      else
        out.corruption_mask->insert(out.corruption_mask->end(), b.X.values.size(), 0);
    }
  }
  out.t = batches.back().t;
  return out;
}

// Keeps the most recent `cap` rows.
inline LabeledBatch tail_rows(const LabeledBatch& b, std::size_t cap) {
  if (b.size() <= cap) return b;
  return slice_rows(b, b.size() - cap, b.size());
}

}  // namespace shml
