#pragma once

// Dense double-precision kernels. Each kernel exists in a serial reference
// form and an OpenMP form that partitions independent output elements, so
// both produce bitwise-identical results. The unsuffixed entry points
// dispatch on the process-wide parallel flag.

namespace peftsearch::kernels {

bool parallel_enabled();
void set_parallel(bool on);

// C[m,n] = A[m,k] * B[k,n]
void matmul_serial(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_omp(const double* a, const double* b, double* c, int m, int k, int n);
void matmul(const double* a, const double* b, double* c, int m, int k, int n);

// C[m,k] = A[m,n] * B[k,n]^T
void matmul_nt_serial(const double* a, const double* b, double* c, int m, int n, int k);
void matmul_nt_omp(const double* a, const double* b, double* c, int m, int n, int k);
void matmul_nt(const double* a, const double* b, double* c, int m, int n, int k);

// C[k,n] = A[m,k]^T * B[m,n]
void matmul_tn_serial(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn_omp(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n);

void add_serial(const double* a, const double* b, double* c, int n);
void add_omp(const double* a, const double* b, double* c, int n);
void add(const double* a, const double* b, double* c, int n);

void mul_serial(const double* a, const double* b, double* c, int n);
void mul_omp(const double* a, const double* b, double* c, int n);
void mul(const double* a, const double* b, double* c, int n);

double gelu_value(double x);
double gelu_grad_value(double x);
void gelu_serial(const double* x, double* y, int n);
void gelu_omp(const double* x, double* y, int n);
void gelu(const double* x, double* y, int n);

// row-wise softmax with max subtraction, rows x cols
void softmax_rows_serial(const double* x, double* y, int rows, int cols);
void softmax_rows_omp(const double* x, double* y, int rows, int cols);
void softmax_rows(const double* x, double* y, int rows, int cols);

// row-wise layer normalization without affine, epsilon 1e-5
inline constexpr double kLayerNormEps = 1e-5;
void layernorm_rows_serial(const double* x, double* y, int rows, int cols);
void layernorm_rows_omp(const double* x, double* y, int rows, int cols);
void layernorm_rows(const double* x, double* y, int rows, int cols);

}  // namespace peftsearch::kernels
