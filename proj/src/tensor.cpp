#include "sarsgs/tensor.hpp"

#include "sarsgs/error.hpp"

#include <numeric>

namespace sarsgs {

Tensor::Tensor(int channels, int height, int width, double fill)
  : c_(channels)
  , h_(height)
  , w_(width)
{
  if (channels < 0 || height < 0 || width < 0) {
    throw DimensionError("tensor dimensions must be non-negative");
  }
  data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
}

Tensor &Tensor::operator+=(Tensor const &rhs)
{
  if (!same_shape(rhs)) { throw DimensionError("tensor shape mismatch in +="); }
  for (std::size_t k = 0; k < data_.size(); ++k) { data_[k] += rhs.data_[k]; }
  return *this;
}

Tensor &Tensor::operator-=(Tensor const &rhs)
{
  if (!same_shape(rhs)) { throw DimensionError("tensor shape mismatch in -="); }
  for (std::size_t k = 0; k < data_.size(); ++k) { data_[k] -= rhs.data_[k]; }
  return *this;
}

Tensor &Tensor::operator*=(double s)
{
  for (auto &v : data_) { v *= s; }
  return *this;
}

double Tensor::squared_norm() const
{
  return std::inner_product(data_.begin(), data_.end(), data_.begin(), 0.0);
}

Tensor operator+(Tensor lhs, Tensor const &rhs) { return lhs += rhs; }
Tensor operator-(Tensor lhs, Tensor const &rhs) { return lhs -= rhs; }
Tensor operator*(double s, Tensor t) { return t *= s; }

double dot(Tensor const &a, Tensor const &b)
{
  if (!a.same_shape(b)) { throw DimensionError("tensor shape mismatch in dot"); }
  return std::inner_product(a.values().begin(), a.values().end(), b.values().begin(), 0.0);
}

} // namespace sarsgs
