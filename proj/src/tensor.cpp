#include "swarmpipe/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "swarmpipe/errors.hpp"

namespace swarmpipe {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) throw ProtocolError("matrix data does not match its shape");
}

void Matrix::append_rows(const Matrix& other) {
  if (other.rows_ == 0) return;
  if (rows_ == 0) cols_ = other.cols_;
  if (other.cols_ != cols_) throw ProtocolError("append_rows: column mismatch");
  data_.insert(data_.end(), other.data_.begin(), other.data_.end());
  rows_ += other.rows_;
}

Matrix Matrix::slice_rows(std::size_t begin, std::size_t end) const {
  if (begin > end || end > rows_) throw ProtocolError("slice_rows: out of range");
  Matrix out(end - begin, cols_);
  std::copy(data_.begin() + static_cast<std::ptrdiff_t>(begin * cols_),
            data_.begin() + static_cast<std::ptrdiff_t>(end * cols_), out.data_.begin());
  return out;
}

void Matrix::truncate_rows(std::size_t rows) {
  if (rows >= rows_) return;
  rows_ = rows;
  data_.resize(rows_ * cols_);
}

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t h) noexcept {
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a_floats(std::span<const float> values, std::uint64_t h) noexcept {
  return fnv1a({reinterpret_cast<const std::uint8_t*>(values.data()), values.size_bytes()}, h);
}

float max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return INFINITY;
  float worst = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::fabs(a.data()[i] - b.data()[i]));
  return worst;
}

}  // namespace swarmpipe
