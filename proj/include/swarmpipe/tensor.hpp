#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace swarmpipe {

/// Dense row-major float matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  float& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<float> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const float> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }

  // Appends the rows of `other`; column counts must agree (an empty matrix
  // adopts the other's width).
  void append_rows(const Matrix& other);
  // Copy of rows [begin, end).
  Matrix slice_rows(std::size_t begin, std::size_t end) const;
  void truncate_rows(std::size_t rows);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

/// Activations for consecutive positions of one sequence.
struct HiddenStates {
  Matrix values;                  // [tokens x hidden]
  std::size_t position_offset = 0;

  std::size_t tokens() const noexcept { return values.rows(); }
  std::size_t hidden() const noexcept { return values.cols(); }

  friend bool operator==(const HiddenStates&, const HiddenStates&) = default;
};

/// Attention history of one block for one sequence.
struct KVCache {
  Matrix keys;    // [t x hidden], heads laid out contiguously
  Matrix values;  // [t x hidden]

  std::size_t length() const noexcept { return keys.rows(); }
  void append(const KVCache& delta) {
    keys.append_rows(delta.keys);
    values.append_rows(delta.values);
  }
  friend bool operator==(const KVCache&, const KVCache&) = default;
};

/// 64-bit FNV-1a.
constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t h = kFnvOffset) noexcept;
std::uint64_t fnv1a_floats(std::span<const float> values, std::uint64_t h = kFnvOffset) noexcept;

float max_abs_diff(const Matrix& a, const Matrix& b);

}  // namespace swarmpipe
