#pragma once

#include "autornn/matrix.hpp"

namespace autornn {

// C = A * B. OpenMP-parallel over output rows; each element is a plain
// sequential dot product, so results are bitwise identical to the serial
// kernel for any thread count.
void matmul(const Matrix& a, const Matrix& b, Matrix& c);
// C = A * B^T
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c);
// C = A^T * B
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c);

// Serial reference kernels, kept for testing and benchmarking.
void matmul_serial(const Matrix& a, const Matrix& b, Matrix& c);
void matmul_nt_serial(const Matrix& a, const Matrix& b, Matrix& c);
void matmul_tn_serial(const Matrix& a, const Matrix& b, Matrix& c);

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c;
  matmul(a, b, c);
  return c;
}

}  // namespace autornn
