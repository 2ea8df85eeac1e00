#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ebnet/errors.hpp"

namespace ebnet {

/// Dense row-major tensor of doubles. The canonical activation layout is
/// channels x height x width with the batch dimension fixed at one; weight
/// tensors are 4-d (out x in x kh x kw) and vectors are 1-d.
class Tensor {
 public:
  Tensor() = default;

  /// Zero-filled tensor. Every extent must be >= 1.
  explicit Tensor(std::vector<int> shape);

  Tensor(std::vector<int> shape, std::vector<double> data);

  static Tensor full(std::vector<int> shape, double value);

  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // 3-d (c,y,x) and 4-d (o,c,y,x) accessors for the canonical layouts.
  double& at3(int c, int y, int x) {
    return data_[static_cast<std::size_t>((static_cast<std::int64_t>(c) * shape_[1] + y) * shape_[2] + x)];
  }
  double at3(int c, int y, int x) const {
    return data_[static_cast<std::size_t>((static_cast<std::int64_t>(c) * shape_[1] + y) * shape_[2] + x)];
  }
  double& at4(int o, int c, int y, int x) {
    return data_[static_cast<std::size_t>(
        (((static_cast<std::int64_t>(o) * shape_[1]) + c) * shape_[2] + y) * shape_[3] + x)];
  }
  double at4(int o, int c, int y, int x) const {
    return data_[static_cast<std::size_t>(
        (((static_cast<std::int64_t>(o) * shape_[1]) + c) * shape_[2] + y) * shape_[3] + x)];
  }

  /// Same data, new shape; element count must match.
  Tensor reshaped(std::vector<int> shape) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  double sum() const;
  double max_value() const;
  /// Index of the maximum entry; ties resolve to the lowest flat index.
  std::int64_t argmax() const;
  double min_value() const;

  std::string shape_str() const;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

/// Formats a shape like "3x8x8" for error messages.
std::string shape_to_string(const std::vector<int>& shape);
std::int64_t shape_numel(const std::vector<int>& shape);

// Elementwise algebra. Shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
void add_into(Tensor& acc, const Tensor& contribution);
/// max(0, x) per element.
Tensor clamp_non_negative(const Tensor& a);

}  // namespace ebnet
