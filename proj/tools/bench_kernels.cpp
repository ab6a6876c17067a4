// Timing comparison between the OpenMP matmul kernels and their serial
// reference implementations, plus a bitwise-equality check at each size.
#include <chrono>
#include <cstdio>
#include <cstring>

#include "autornn/kernels.hpp"
#include "autornn/rng.hpp"

using namespace autornn;

namespace {

template <typename F>
double time_best_of(F&& fn, int reps) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const double dt =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    best = std::min(best, dt);
  }
  return best;
}

}  // namespace

int main(int argc, char** argv) {
  int reps = 5;
  if (argc > 1) reps = std::atoi(argv[1]);
  Rng rng(1);

  std::printf("%8s %12s %12s %8s %s\n", "size", "serial(ms)", "openmp(ms)", "speedup", "bitwise");
  for (int n : {32, 64, 128, 256, 512, 1024}) {
    Matrix a = rng.uniform_matrix(n, n, -1.0, 1.0);
    Matrix b = rng.uniform_matrix(n, n, -1.0, 1.0);
    Matrix serial_out(n, n), omp_out(n, n);
    const double ts = time_best_of([&] { matmul_serial(a, b, serial_out); }, reps);
    const double tp = time_best_of([&] { matmul(a, b, omp_out); }, reps);
    const bool same = serial_out.data == omp_out.data;
    std::printf("%8d %12.3f %12.3f %7.2fx %s\n", n, ts * 1e3, tp * 1e3, ts / tp,
                same ? "yes" : "NO");
    if (!same) return 1;
  }
  return 0;
}
