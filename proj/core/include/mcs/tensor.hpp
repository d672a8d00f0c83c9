#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mcs {

// Dense row-major tensor of doubles with handle semantics: copies share
// storage. Gradient storage lives next to the values so every handle to the
// same tensor sees accumulated gradients. Constness of a handle does not
// protect the shared buffer.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double value);
  static Tensor from(std::vector<int> shape, std::vector<double> values);
  static Tensor scalar(double value);

  bool defined() const { return d_ != nullptr; }
  const std::vector<int>& shape() const { return d_->shape; }
  int rank() const { return static_cast<int>(d_->shape.size()); }
  int dim(int i) const { return d_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(d_->values.size()); }
  // Rows/cols of a rank-2 tensor; a rank-1 tensor counts as a single row.
  int rows() const { return rank() == 2 ? dim(0) : 1; }
  int cols() const { return rank() == 2 ? dim(1) : dim(0); }

  std::span<double> values() const { return d_->values; }
  double item() const;
  double& at(int r, int c) const { return d_->values[static_cast<std::size_t>(r) * cols() + c]; }
  double& at(int i) const { return d_->values[static_cast<std::size_t>(i)]; }

  bool requires_grad() const { return d_ && d_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    d_->requires_grad = v;
    return *this;
  }
  // Gradient buffer, allocated (zeroed) on first access.
  std::span<double> grad() const {
    if (d_->grad.empty()) d_->grad.assign(d_->values.size(), 0.0);
    return d_->grad;
  }
  bool has_grad() const { return d_ && !d_->grad.empty(); }
  void zero_grad() const;

  // Identity of the underlying storage (stable across copies).
  const void* id() const { return d_.get(); }

  // Tag marking the tape this tensor was produced on (nullptr for leaves).
  const void* tape_tag() const { return d_ ? d_->tape_tag : nullptr; }
  void set_tape_tag(const void* tag) { d_->tape_tag = tag; }

  // Throws if any value is non-finite.
  void check_finite(const std::string& what) const;

  std::string shape_str() const;

 private:
  struct Data {
    std::vector<int> shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until first touched
    bool requires_grad = false;
    const void* tape_tag = nullptr;
  };
  std::shared_ptr<Data> d_;
};

std::int64_t shape_numel(const std::vector<int>& shape);

}  // namespace mcs
