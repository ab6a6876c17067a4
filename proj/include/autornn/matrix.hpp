#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace autornn {

// Dense row-major float64 matrix. The only tensor rank in this project.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {
    if (r < 0 || c < 0) throw std::invalid_argument("Matrix: negative dims");
  }

  static Matrix zeros(int r, int c) { return Matrix(r, c); }
  static Matrix filled(int r, int c, double v) {
    Matrix m(r, c);
    for (auto& x : m.data) x = v;
    return m;
  }

  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

  size_t size() const { return data.size(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline void require_shape(const Matrix& m, int r, int c, const std::string& what) {
  if (m.rows != r || m.cols != c)
    throw std::invalid_argument(what + ": expected " + std::to_string(r) + "x" + std::to_string(c) +
                                ", got " + std::to_string(m.rows) + "x" + std::to_string(m.cols));
}

}  // namespace autornn
