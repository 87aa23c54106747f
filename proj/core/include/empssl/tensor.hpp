#pragma once

#include <cstddef>
#include <vector>

namespace empssl {

/// Dense n-dimensional array, double precision, C-order. Activations use
/// (N, C, H, W) for convolutional stages and (N, F) after pooling.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.dims_); }

  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t dim(std::size_t i) const { return dims_[i]; }
  std::size_t rank() const { return dims_.size(); }
  std::size_t size() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  bool all_finite() const;
  void fill(double v);

  /// Narrows every element through IEEE f32; used to emulate single-precision
  /// activation/parameter storage while keeping one double code path.
  void round_to_f32();

 private:
  std::vector<std::size_t> dims_;
  std::vector<double> data_;
};

}  // namespace empssl
