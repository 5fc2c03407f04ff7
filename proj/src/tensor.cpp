#include "vfg/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "vfg/error.hpp"

namespace vfg {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
  if (rank() > 2) throw NumericError("tensor rank > 2 unsupported: " + shape_string(shape_));
}

Tensor::Tensor(Shape shape, const std::vector<double>& data)
    : Tensor(std::move(shape), Storage(data.begin(), data.end())) {}

Tensor::Tensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (rank() > 2) throw NumericError("tensor rank > 2 unsupported: " + shape_string(shape_));
  if (shape_size(shape_) != data_.size()) {
    throw NumericError("tensor shape " + shape_string(shape_) + " does not match " +
                       std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::vector(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor(Shape{n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
  return Tensor(Shape{rows, cols}, std::move(v));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  std::vector<double> values;
  std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  for (const auto& r : rows) {
    if (r.size() != cols) throw NumericError("ragged matrix literal");
    values.insert(values.end(), r.begin(), r.end());
  }
  return Tensor(Shape{rows.size(), cols}, std::move(values));
}

double Tensor::item() const {
  if (size() != 1) throw NumericError("item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor Tensor::columns(std::size_t begin, std::size_t end) const {
  const std::size_t n = cols();
  if (begin > end || end > n) throw NumericError("column range out of bounds");
  const std::size_t width = end - begin;
  Storage out;
  out.reserve(rows() * width);
  for (std::size_t r = 0; r < rows(); ++r) {
    const auto first = data_.begin() + static_cast<std::ptrdiff_t>(r * n + begin);
    out.insert(out.end(), first, first + static_cast<std::ptrdiff_t>(width));
  }
  if (rank() == 2) return Tensor(Shape{rows(), width}, std::move(out));
  return Tensor(Shape{width}, std::move(out));
}

Tensor Tensor::row(std::size_t r) const {
  const std::size_t n = cols();
  if (r >= rows()) throw NumericError("row index out of bounds");
  return Tensor(Shape{n}, Storage(data_.begin() + static_cast<std::ptrdiff_t>(r * n),
                                              data_.begin() + static_cast<std::ptrdiff_t>((r + 1) * n)));
}

}  // namespace vfg
