#pragma once

#include <cstddef>
#include <vector>

namespace sarsgs {

/// Dense real C×H×W tensor in row-major (channel, row, column) order. This is
/// the representation the priors and the denoiser network operate on.
class Tensor
{
public:
  Tensor() = default;
  Tensor(int channels, int height, int width, double fill = 0.0);

  int channels() const { return c_; }
  int height() const { return h_; }
  int width() const { return w_; }
  std::size_t size() const { return data_.size(); }

  double &operator()(int c, int i, int j) { return data_[index(c, i, j)]; }
  double  operator()(int c, int i, int j) const { return data_[index(c, i, j)]; }
  double &operator[](std::size_t k) { return data_[k]; }
  double  operator[](std::size_t k) const { return data_[k]; }

  double       *data() { return data_.data(); }
  double const *data() const { return data_.data(); }

  std::vector<double>       &values() { return data_; }
  std::vector<double> const &values() const { return data_; }

  bool same_shape(Tensor const &other) const { return c_ == other.c_ && h_ == other.h_ && w_ == other.w_; }

  Tensor &operator+=(Tensor const &rhs);
  Tensor &operator-=(Tensor const &rhs);
  Tensor &operator*=(double s);

  double squared_norm() const;

private:
  std::size_t index(int c, int i, int j) const
  {
    return (static_cast<std::size_t>(c) * h_ + i) * w_ + j;
  }

  int                 c_ = 0;
  int                 h_ = 0;
  int                 w_ = 0;
  std::vector<double> data_;
};

Tensor operator+(Tensor lhs, Tensor const &rhs);
Tensor operator-(Tensor lhs, Tensor const &rhs);
Tensor operator*(double s, Tensor t);

/// Sum of elementwise products.
double dot(Tensor const &a, Tensor const &b);

} // namespace sarsgs
