#include "after/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <cmath>

namespace after::kernels {

namespace {

std::atomic<int> g_threads{1};

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

inline double norm_cdf(double x) { return 0.5 * (1.0 + std::erf(x * kInvSqrt2)); }
inline double norm_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

inline void matmul_nn_row(const double* a, const double* b, double* c, int i,
                          int k, int n) {
  double* ci = c + static_cast<std::size_t>(i) * n;
  std::fill(ci, ci + n, 0.0);
  const double* ai = a + static_cast<std::size_t>(i) * k;
  for (int p = 0; p < k; ++p) {
    const double aip = ai[p];
    const double* bp = b + static_cast<std::size_t>(p) * n;
    for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
  }
}

inline void matmul_nt_row(const double* a, const double* b, double* c, int i,
                          int k, int n) {
  const double* ai = a + static_cast<std::size_t>(i) * k;
  double* ci = c + static_cast<std::size_t>(i) * n;
  for (int j = 0; j < n; ++j) {
    const double* bj = b + static_cast<std::size_t>(j) * k;
    double acc = 0.0;
    for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
    ci[j] += acc;
  }
}

inline void matmul_tn_row(const double* a, const double* b, double* c, int r,
                          int m, int k, int n) {
  // c row r (of k rows) += sum_i a[i,r] * b[i,:]
  double* cr = c + static_cast<std::size_t>(r) * n;
  for (int i = 0; i < m; ++i) {
    const double air = a[static_cast<std::size_t>(i) * k + r];
    const double* bi = b + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) cr[j] += air * bi[j];
  }
}

inline void softmax_row(const double* xi, double* yi, int cols) {
  double mx = xi[0];
  for (int j = 1; j < cols; ++j) mx = std::max(mx, xi[j]);
  double sum = 0.0;
  for (int j = 0; j < cols; ++j) {
    yi[j] = std::exp(xi[j] - mx);
    sum += yi[j];
  }
  const double inv = 1.0 / sum;
  for (int j = 0; j < cols; ++j) yi[j] *= inv;
}

}  // namespace

void set_threads(int n) {
  g_threads.store(n < 1 ? 1 : n);
  omp_set_num_threads(n < 1 ? 1 : n);
}

int threads() { return g_threads.load(); }

namespace serial {

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) matmul_nn_row(a, b, c, i, k, n);
}

void matmul_nt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) matmul_nt_row(a, b, c, i, k, n);
}

void matmul_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int r = 0; r < k; ++r) matmul_tn_row(a, b, c, r, m, k, n);
}

void gelu(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] * norm_cdf(x[i]);
}

void gelu_backward(const double* x, const double* dy, double* dx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    dx[i] += dy[i] * (norm_cdf(x[i]) + x[i] * norm_pdf(x[i]));
}

void softmax_rows(const double* x, double* y, int rows, int cols) {
  for (int i = 0; i < rows; ++i)
    softmax_row(x + static_cast<std::size_t>(i) * cols,
                y + static_cast<std::size_t>(i) * cols, cols);
}

}  // namespace serial

namespace openmp {

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) matmul_nn_row(a, b, c, i, k, n);
}

void matmul_nt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) matmul_nt_row(a, b, c, i, k, n);
}

void matmul_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < k; ++r) matmul_tn_row(a, b, c, r, m, k, n);
}

void gelu(const double* x, double* y, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] * norm_cdf(x[i]);
}

void gelu_backward(const double* x, const double* dy, double* dx, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i)
    dx[i] += dy[i] * (norm_cdf(x[i]) + x[i] * norm_pdf(x[i]));
}

void softmax_rows(const double* x, double* y, int rows, int cols) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < rows; ++i)
    softmax_row(x + static_cast<std::size_t>(i) * cols,
                y + static_cast<std::size_t>(i) * cols, cols);
}

}  // namespace openmp

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n) {
  if (threads() > 1) openmp::matmul_nn(a, b, c, m, k, n);
  else serial::matmul_nn(a, b, c, m, k, n);
}

void matmul_nt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  if (threads() > 1) openmp::matmul_nt_acc(a, b, c, m, k, n);
  else serial::matmul_nt_acc(a, b, c, m, k, n);
}

void matmul_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  if (threads() > 1) openmp::matmul_tn_acc(a, b, c, m, k, n);
  else serial::matmul_tn_acc(a, b, c, m, k, n);
}

void gelu(const double* x, double* y, std::size_t n) {
  if (threads() > 1) openmp::gelu(x, y, n);
  else serial::gelu(x, y, n);
}

void gelu_backward(const double* x, const double* dy, double* dx, std::size_t n) {
  if (threads() > 1) openmp::gelu_backward(x, dy, dx, n);
  else serial::gelu_backward(x, dy, dx, n);
}

void softmax_rows(const double* x, double* y, int rows, int cols) {
  if (threads() > 1) openmp::softmax_rows(x, y, rows, cols);
  else serial::softmax_rows(x, y, rows, cols);
}

}  // namespace after::kernels
