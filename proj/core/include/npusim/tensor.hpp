#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace npusim {

// Error taxonomy shared across the library. The CLI maps these onto exit
// codes: ShapeError/ValueError/InvariantError -> 2, IoError -> 3.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ValueError : std::runtime_error {
  explicit ValueError(const std::string& msg) : std::runtime_error(msg) {}
};
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};
struct InvariantError : std::runtime_error {
  explicit InvariantError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dense row-major float32 matrix. Rows are the sequence axis, columns the
/// feature/channel axis.
class Tensor {
public:
  Tensor() = default;
  Tensor(int rows, int cols, float fill = 0.0f)
      : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, fill) {
    if (rows < 0 || cols < 0) throw ShapeError("Tensor: negative dimension");
  }
  Tensor(int rows, int cols, std::vector<float> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != static_cast<size_t>(rows) * cols)
      throw ShapeError("Tensor: data length does not match shape");
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  size_t size() const { return data_.size(); }

  float* row(int r) { return data_.data() + static_cast<size_t>(r) * cols_; }
  const float* row(int r) const { return data_.data() + static_cast<size_t>(r) * cols_; }
  float& at(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
  float at(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }

  std::vector<float>& data() { return data_; }
  const std::vector<float>& data() const { return data_; }

  /// Appends the rows of `other` (column counts must match).
  void append_rows(const Tensor& other) {
    if (rows_ == 0 && cols_ == 0) cols_ = other.cols();
    if (other.cols() != cols_) throw ShapeError("append_rows: column mismatch");
    data_.insert(data_.end(), other.data_.begin(), other.data_.end());
    rows_ += other.rows();
  }

  /// Copy of rows [begin, end).
  Tensor slice_rows(int begin, int end) const {
    if (begin < 0 || end > rows_ || begin > end)
      throw ShapeError("slice_rows: range out of bounds");
    Tensor out(end - begin, cols_);
    std::copy(row(begin), row(begin) + static_cast<size_t>(end - begin) * cols_,
              out.data_.begin());
    return out;
  }

  bool all_finite() const {
    for (float v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const Tensor& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
  }

private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<float> data_;
};

/// Signed 8-bit tensor with one symmetric per-tensor scale. Elements stay in
/// [-127, 127]; dequantized value of q is scale * q.
class QTensor {
public:
  QTensor() = default;
  QTensor(int rows, int cols, float scale)
      : rows_(rows), cols_(cols), scale_(scale),
        data_(static_cast<size_t>(rows) * cols, 0) {
    if (scale <= 0.0f || !std::isfinite(scale))
      throw ValueError("QTensor: scale must be positive and finite");
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  float scale() const { return scale_; }
  size_t size() const { return data_.size(); }

  int8_t* row(int r) { return data_.data() + static_cast<size_t>(r) * cols_; }
  const int8_t* row(int r) const { return data_.data() + static_cast<size_t>(r) * cols_; }
  int8_t& at(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
  int8_t at(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }

  std::vector<int8_t>& data() { return data_; }
  const std::vector<int8_t>& data() const { return data_; }

  /// Dequantized float copy (scale * q per element).
  Tensor dequantize() const {
    Tensor out(rows_, cols_);
    for (size_t i = 0; i < data_.size(); ++i)
      out.data()[i] = scale_ * static_cast<float>(data_[i]);
    return out;
  }

private:
  int rows_ = 0;
  int cols_ = 0;
  float scale_ = 1.0f;
  std::vector<int8_t> data_;
};

}  // namespace npusim
