#pragma once

#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

namespace tlt {

struct Shape3 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;

  std::size_t size() const { return height * width * channels; }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

// Dense row-major tensor. Images and conv activations are rank 3 in
// height x width x channels order; dense activations are rank 1.
template <typename Real>
struct BasicTensor {
  std::vector<std::size_t> shape;
  std::vector<Real> data;

  BasicTensor() = default;
  explicit BasicTensor(std::vector<std::size_t> dims, Real fill = Real(0))
      : shape(std::move(dims)),
        data(std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                             std::multiplies<>()),
             fill) {}
  explicit BasicTensor(Shape3 s, Real fill = Real(0))
      : BasicTensor(std::vector<std::size_t>{s.height, s.width, s.channels}, fill) {}

  std::size_t rank() const { return shape.size(); }
  std::size_t size() const { return data.size(); }
  Shape3 shape3() const {
    return rank() == 3 ? Shape3{shape[0], shape[1], shape[2]} : Shape3{};
  }

  Real& at(std::size_t y, std::size_t x, std::size_t c) {
    return data[(y * shape[1] + x) * shape[2] + c];
  }
  Real at(std::size_t y, std::size_t x, std::size_t c) const {
    return data[(y * shape[1] + x) * shape[2] + c];
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;
};

using Tensor = BasicTensor<float>;

// Row-major real matrix used for feature tables.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

}  // namespace tlt
