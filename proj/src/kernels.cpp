#include "autornn/kernels.hpp"

namespace autornn {

namespace {

void check_mm(const Matrix& a, const Matrix& b, int ak, int bk) {
  if (ak != bk)
    throw std::invalid_argument("matmul: inner dims mismatch (" + std::to_string(ak) + " vs " +
                                std::to_string(bk) + ")");
}

}  // namespace

void matmul(const Matrix& a, const Matrix& b, Matrix& c) {
  check_mm(a, b, a.cols, b.rows);
  c = Matrix(a.rows, b.cols);
  const int m = a.rows, k = a.cols, n = b.cols;
#pragma omp parallel for schedule(static) if (static_cast<long long>(m) * k * n > 8192)
  for (int i = 0; i < m; ++i) {
    const double* ar = &a.data[static_cast<size_t>(i) * k];
    double* cr = &c.data[static_cast<size_t>(i) * n];
    for (int p = 0; p < k; ++p) {
      const double av = ar[p];
      const double* br = &b.data[static_cast<size_t>(p) * n];
      for (int j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c) {
  check_mm(a, b, a.cols, b.cols);
  c = Matrix(a.rows, b.rows);
  const int m = a.rows, k = a.cols, n = b.rows;
#pragma omp parallel for schedule(static) if (static_cast<long long>(m) * k * n > 8192)
  for (int i = 0; i < m; ++i) {
    const double* ar = &a.data[static_cast<size_t>(i) * k];
    double* cr = &c.data[static_cast<size_t>(i) * n];
    for (int j = 0; j < n; ++j) {
      const double* br = &b.data[static_cast<size_t>(j) * k];
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += ar[p] * br[p];
      cr[j] = s;
    }
  }
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c) {
  check_mm(a, b, a.rows, b.rows);
  c = Matrix(a.cols, b.cols);
  const int m = a.cols, k = a.rows, n = b.cols;
#pragma omp parallel for schedule(static) if (static_cast<long long>(m) * k * n > 8192)
  for (int i = 0; i < m; ++i) {
    double* cr = &c.data[static_cast<size_t>(i) * n];
    for (int p = 0; p < k; ++p) {
      const double av = a.data[static_cast<size_t>(p) * m + i];
      const double* br = &b.data[static_cast<size_t>(p) * n];
      for (int j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

void matmul_serial(const Matrix& a, const Matrix& b, Matrix& c) {
  check_mm(a, b, a.cols, b.rows);
  c = Matrix(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int p = 0; p < a.cols; ++p) {
      const double av = a.at(i, p);
      for (int j = 0; j < b.cols; ++j) c.at(i, j) += av * b.at(p, j);
    }
}

void matmul_nt_serial(const Matrix& a, const Matrix& b, Matrix& c) {
  check_mm(a, b, a.cols, b.cols);
  c = Matrix(a.rows, b.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < b.rows; ++j) {
      double s = 0.0;
      for (int p = 0; p < a.cols; ++p) s += a.at(i, p) * b.at(j, p);
      c.at(i, j) = s;
    }
}

void matmul_tn_serial(const Matrix& a, const Matrix& b, Matrix& c) {
  check_mm(a, b, a.rows, b.rows);
  c = Matrix(a.cols, b.cols);
  for (int p = 0; p < a.rows; ++p)
    for (int i = 0; i < a.cols; ++i) {
      const double av = a.at(p, i);
      for (int j = 0; j < b.cols; ++j) c.at(i, j) += av * b.at(p, j);
    }
}

}  // namespace autornn
