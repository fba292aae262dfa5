#pragma once

#include <cstddef>

namespace after::kernels {

// The hot inner loops exist twice: a plain serial reference and an OpenMP
// version parallelized over output rows. Both compute each output element
// with the same accumulation order, so results are bit-identical; tests
// assert that and the bench tool compares throughput. The active variant
// is a process-wide runtime switch.
void set_threads(int n);
int threads();

namespace serial {

// c[m x n] = a[m x k] * b[k x n]
void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n);

// c[m x n] += a[m x k] * b[n x k]^T
void matmul_nt_acc(const double* a, const double* b, double* c, int m, int k, int n);

// c[k x n] += a[m x k]^T * b[m x n]
void matmul_tn_acc(const double* a, const double* b, double* c, int m, int k, int n);

// y = x * Phi(x), exact-erf form
void gelu(const double* x, double* y, std::size_t n);

// dx += dy * (Phi(x) + x * phi(x))
void gelu_backward(const double* x, const double* dy, double* dx, std::size_t n);

// row-wise softmax with max subtraction
void softmax_rows(const double* x, double* y, int rows, int cols);

}  // namespace serial

namespace openmp {

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt_acc(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn_acc(const double* a, const double* b, double* c, int m, int k, int n);
void gelu(const double* x, double* y, std::size_t n);
void gelu_backward(const double* x, const double* dy, double* dx, std::size_t n);
void softmax_rows(const double* x, double* y, int rows, int cols);

}  // namespace openmp

// Dispatching wrappers; pick serial or openmp based on set_threads().
void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt_acc(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn_acc(const double* a, const double* b, double* c, int m, int k, int n);
void gelu(const double* x, double* y, std::size_t n);
void gelu_backward(const double* x, const double* dy, double* dx, std::size_t n);
void softmax_rows(const double* x, double* y, int rows, int cols);

}  // namespace after::kernels
