#include "empssl/tensor.hpp"

#include <cmath>

namespace empssl {

Tensor::Tensor(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  std::size_t total = 1;
  for (std::size_t d : dims_) total *= d;
  data_.assign(total, 0.0);
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::fill(double v) {
  for (double& x : data_) x = v;
}

void Tensor::round_to_f32() {
  for (double& x : data_) x = static_cast<double>(static_cast<float>(x));
}

}  // namespace empssl
