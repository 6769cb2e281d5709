#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace stlt {

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> sh, double fill = 0.0)
      : shape(std::move(sh)), v(count(shape), fill) {}
  Tensor(std::vector<std::size_t> sh, std::vector<double> data)
      : shape(std::move(sh)), v(std::move(data)) {
    if (v.size() != count(shape))
      throw std::invalid_argument("Tensor: shape/data size mismatch");
  }

  static std::size_t count(const std::vector<std::size_t>& sh) {
    std::size_t c = 1;
    for (std::size_t s : sh) c *= s;
    return c;
  }
  static Tensor scalar(double x) { return Tensor({std::size_t{1}}, {x}); }

  std::size_t size() const { return v.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  double& operator[](std::size_t i) { return v[i]; }
  double operator[](std::size_t i) const { return v[i]; }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

}  // namespace stlt
