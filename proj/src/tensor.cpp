#include "cada/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace cada {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (shape_size(shape_) != data_.size()) {
    throw std::invalid_argument("tensor shape " + shape_string(shape_) + " does not match " +
                                std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor(Shape{values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor(Shape{rows, cols}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw std::invalid_argument("ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw std::out_of_range("axis " + std::to_string(axis) + " out of range for shape " +
                            shape_string(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::rows() const {
  switch (shape_.size()) {
    case 0:
    case 1:
      return 1;
    case 2:
      return shape_[0];
    default:
      throw std::logic_error("rows() requires rank <= 2, got " + shape_string(shape_));
  }
}

std::size_t Tensor::cols() const {
  switch (shape_.size()) {
    case 0:
      return 1;
    case 1:
      return shape_[0];
    case 2:
      return shape_[1];
    default:
      throw std::logic_error("cols() requires rank <= 2, got " + shape_string(shape_));
  }
}

std::span<const double> Tensor::row(std::size_t r) const {
  const std::size_t c = cols();
  return std::span<const double>(data_).subspan(r * c, c);
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw std::logic_error("item() on tensor of shape " + shape_string(shape_));
  }
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
  if (t.rank() != 2 || begin > end || end > t.rows()) {
    throw std::out_of_range("slice_rows out of range");
  }
  const std::size_t c = t.cols();
  std::vector<double> values(t.values().begin() + static_cast<std::ptrdiff_t>(begin * c),
                             t.values().begin() + static_cast<std::ptrdiff_t>(end * c));
  return Tensor(Shape{end - begin, c}, std::move(values));
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> indices) {
  if (t.rank() != 2) throw std::invalid_argument("gather_rows requires a rank-2 tensor");
  const std::size_t c = t.cols();
  std::vector<double> values;
  values.reserve(indices.size() * c);
  for (std::size_t i : indices) {
    if (i >= t.rows()) throw std::out_of_range("gather_rows index out of range");
    auto r = t.row(i);
    values.insert(values.end(), r.begin(), r.end());
  }
  return Tensor(Shape{indices.size(), c}, std::move(values));
}

Tensor concat_rows(const Tensor& top, const Tensor& bottom) {
  if (top.rank() != 2 || bottom.rank() != 2 || top.cols() != bottom.cols()) {
    throw std::invalid_argument("concat_rows requires rank-2 tensors of equal width");
  }
  std::vector<double> values(top.data());
  values.insert(values.end(), bottom.data().begin(), bottom.data().end());
  return Tensor(Shape{top.rows() + bottom.rows(), top.cols()}, std::move(values));
}

}  // namespace cada
