// Compares serial and OpenMP kernel throughput on the shapes the encoder
// actually uses. Run with an optional thread count argument (default: all).
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include <omp.h>

#include "after/kernels.hpp"
#include "after/rng.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double time_ms(const std::function<void()>& fn, int iters) {
  fn();  // warm up
  const auto t0 = Clock::now();
  for (int i = 0; i < iters; ++i) fn();
  const auto t1 = Clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / iters;
}

struct Shape {
  int m, k, n;
};

}  // namespace

int main(int argc, char** argv) {
  int threads = omp_get_max_threads();
  if (argc > 1) threads = std::atoi(argv[1]);
  if (threads < 1) threads = 1;

  after::Rng rng(1234);
  const std::vector<Shape> shapes = {
      {560, 64, 64},    // per-batch hidden projection (28 x len 20)
      {560, 64, 128},   // feed-forward expand
      {560, 128, 64},   // feed-forward contract
      {84, 64, 605},    // mlm head on masked rows
      {1024, 256, 256}, // square-ish stress case
  };

  std::printf("%-18s %10s %10s %8s\n", "shape (m k n)", "serial ms",
              "omp ms", "speedup");
  for (const auto& s : shapes) {
    std::vector<double> a(static_cast<std::size_t>(s.m) * s.k);
    std::vector<double> b(static_cast<std::size_t>(s.k) * s.n);
    std::vector<double> c(static_cast<std::size_t>(s.m) * s.n);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();

    const int iters = s.m * s.k * s.n > 10'000'000 ? 3 : 20;
    after::kernels::set_threads(1);
    const double t_serial = time_ms(
        [&] {
          after::kernels::serial::matmul_nn(a.data(), b.data(), c.data(), s.m,
                                            s.k, s.n);
        },
        iters);
    after::kernels::set_threads(threads);
    const double t_omp = time_ms(
        [&] {
          after::kernels::openmp::matmul_nn(a.data(), b.data(), c.data(), s.m,
                                            s.k, s.n);
        },
        iters);
    const std::string label = std::to_string(s.m) + " " + std::to_string(s.k) +
                              " " + std::to_string(s.n);
    std::printf("%-18s %10.3f %10.3f %7.2fx\n", label.c_str(), t_serial, t_omp,
                t_serial / t_omp);
  }
  std::printf("threads used: %d\n", threads);
  return 0;
}
