#include "ebnet/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace ebnet {

std::string shape_to_string(const std::vector<int>& shape) {
  std::ostringstream os;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  return os.str();
}

std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int e : shape) n *= e;
  return n;
}

namespace {

void check_shape(const std::vector<int>& shape) {
  if (shape.empty()) throw ShapeMismatch("tensor shape must have at least one dimension");
  for (int e : shape) {
    if (e < 1) throw ShapeMismatch("tensor extent must be >= 1, got shape " + shape_to_string(shape));
  }
}

}  // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(static_cast<std::size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_)) {
    throw ShapeMismatch("data length " + std::to_string(data_.size()) +
                        " does not match shape " + shape_to_string(shape_));
  }
}

Tensor Tensor::full(std::vector<int> shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
  check_shape(shape);
  if (shape_numel(shape) != numel()) {
    throw ShapeMismatch("reshape " + shape_str() + " -> " + shape_to_string(shape) +
                        " changes element count");
  }
  return Tensor(std::move(shape), data_);
}

double Tensor::sum() const {
  double s = 0.0;
  for (double v : data_) s += v;
  return s;
}

double Tensor::max_value() const {
  double m = data_[0];
  for (double v : data_) m = std::max(m, v);
  return m;
}

double Tensor::min_value() const {
  double m = data_[0];
  for (double v : data_) m = std::min(m, v);
  return m;
}

std::int64_t Tensor::argmax() const {
  std::int64_t best = 0;
  double m = data_[0];
  for (std::int64_t i = 1; i < numel(); ++i) {
    if (data_[static_cast<std::size_t>(i)] > m) {
      m = data_[static_cast<std::size_t>(i)];
      best = i;
    }
  }
  return best;
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeMismatch(std::string(op) + ": shape " + a.shape_str() + " vs " + b.shape_str());
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += b[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= b[i];
  return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  Tensor out = a;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= b[i];
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = a;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= s;
  return out;
}

Tensor add_scalar(const Tensor& a, double s) {
  Tensor out = a;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += s;
  return out;
}

void add_into(Tensor& acc, const Tensor& contribution) {
  require_same_shape(acc, contribution, "add_into");
  for (std::int64_t i = 0; i < acc.numel(); ++i) acc[i] += contribution[i];
}

Tensor clamp_non_negative(const Tensor& a) {
  Tensor out = a;
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    if (out[i] < 0.0) out[i] = 0.0;
  }
  return out;
}

}  // namespace ebnet
