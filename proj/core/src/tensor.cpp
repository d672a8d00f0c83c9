#include "mcs/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mcs {

std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int e : shape) {
    if (e <= 0) throw std::invalid_argument("tensor shape extents must be positive");
    n *= e;
  }
  return n;
}

Tensor Tensor::zeros(std::vector<int> shape) {
  Tensor t;
  auto n = shape_numel(shape);
  t.d_ = std::make_shared<Data>();
  t.d_->shape = std::move(shape);
  t.d_->values.assign(static_cast<std::size_t>(n), 0.0);
  return t;
}

Tensor Tensor::full(std::vector<int> shape, double value) {
  Tensor t = zeros(std::move(shape));
  for (auto& v : t.d_->values) v = value;
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values) {
  auto n = shape_numel(shape);
  if (n != static_cast<std::int64_t>(values.size())) {
    throw std::invalid_argument("tensor value count does not match shape product");
  }
  Tensor t;
  t.d_ = std::make_shared<Data>();
  t.d_->shape = std::move(shape);
  t.d_->values = std::move(values);
  return t;
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

double Tensor::item() const {
  if (size() != 1) throw std::runtime_error("item() on non-scalar tensor " + shape_str());
  return d_->values[0];
}

void Tensor::zero_grad() const {
  if (d_ && !d_->grad.empty()) d_->grad.assign(d_->values.size(), 0.0);
}

void Tensor::check_finite(const std::string& what) const {
  for (double v : d_->values) {
    if (!std::isfinite(v)) {
      throw std::runtime_error("non-finite value in " + what + " (shape " + shape_str() + ")");
    }
  }
}

std::string Tensor::shape_str() const {
  if (!d_) return "[undefined]";
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < d_->shape.size(); ++i) {
    if (i) os << 'x';
    os << d_->shape[i];
  }
  os << ']';
  return os.str();
}

}  // namespace mcs
