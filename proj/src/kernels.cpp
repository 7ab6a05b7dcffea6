#include "peftsearch/kernels.hpp"

#include <atomic>
#include <cmath>

namespace peftsearch::kernels {

namespace {
std::atomic<bool> g_parallel{true};
// below this many output elements the fork/join overhead dominates
constexpr int kParallelCutoff = 4096;
}  // namespace

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }
void set_parallel(bool on) { g_parallel.store(on, std::memory_order_relaxed); }

void matmul_serial(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<long>(i) * n;
    for (int j = 0; j < n; ++j) ci[j] = 0.0;
    const double* ai = a + static_cast<long>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + static_cast<long>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void matmul_omp(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static) if (static_cast<long>(m) * n >= kParallelCutoff)
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<long>(i) * n;
    for (int j = 0; j < n; ++j) ci[j] = 0.0;
    const double* ai = a + static_cast<long>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + static_cast<long>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
  if (parallel_enabled()) matmul_omp(a, b, c, m, k, n);
  else matmul_serial(a, b, c, m, k, n);
}

void matmul_nt_serial(const double* a, const double* b, double* c, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<long>(i) * n;
    double* ci = c + static_cast<long>(i) * k;
    for (int j = 0; j < k; ++j) {
      const double* bj = b + static_cast<long>(j) * n;
      double acc = 0.0;
      for (int p = 0; p < n; ++p) acc += ai[p] * bj[p];
      ci[j] = acc;
    }
  }
}

void matmul_nt_omp(const double* a, const double* b, double* c, int m, int n, int k) {
#pragma omp parallel for schedule(static) if (static_cast<long>(m) * k >= kParallelCutoff)
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<long>(i) * n;
    double* ci = c + static_cast<long>(i) * k;
    for (int j = 0; j < k; ++j) {
      const double* bj = b + static_cast<long>(j) * n;
      double acc = 0.0;
      for (int p = 0; p < n; ++p) acc += ai[p] * bj[p];
      ci[j] = acc;
    }
  }
}

void matmul_nt(const double* a, const double* b, double* c, int m, int n, int k) {
  if (parallel_enabled()) matmul_nt_omp(a, b, c, m, n, k);
  else matmul_nt_serial(a, b, c, m, n, k);
}

void matmul_tn_serial(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < k; ++i) {
    double* ci = c + static_cast<long>(i) * n;
    for (int j = 0; j < n; ++j) ci[j] = 0.0;
  }
  for (int p = 0; p < m; ++p) {
    const double* ap = a + static_cast<long>(p) * k;
    const double* bp = b + static_cast<long>(p) * n;
    for (int i = 0; i < k; ++i) {
      const double av = ap[i];
      double* ci = c + static_cast<long>(i) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void matmul_tn_omp(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static) if (static_cast<long>(k) * n >= kParallelCutoff)
  for (int i = 0; i < k; ++i) {
    double* ci = c + static_cast<long>(i) * n;
    for (int j = 0; j < n; ++j) ci[j] = 0.0;
    for (int p = 0; p < m; ++p) {
      const double av = a[static_cast<long>(p) * k + i];
      const double* bp = b + static_cast<long>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
  if (parallel_enabled()) matmul_tn_omp(a, b, c, m, k, n);
  else matmul_tn_serial(a, b, c, m, k, n);
}

void add_serial(const double* a, const double* b, double* c, int n) {
  for (int i = 0; i < n; ++i) c[i] = a[i] + b[i];
}

void add_omp(const double* a, const double* b, double* c, int n) {
#pragma omp parallel for schedule(static) if (n >= kParallelCutoff)
  for (int i = 0; i < n; ++i) c[i] = a[i] + b[i];
}

void add(const double* a, const double* b, double* c, int n) {
  if (parallel_enabled()) add_omp(a, b, c, n);
  else add_serial(a, b, c, n);
}

void mul_serial(const double* a, const double* b, double* c, int n) {
  for (int i = 0; i < n; ++i) c[i] = a[i] * b[i];
}

void mul_omp(const double* a, const double* b, double* c, int n) {
#pragma omp parallel for schedule(static) if (n >= kParallelCutoff)
  for (int i = 0; i < n; ++i) c[i] = a[i] * b[i];
}

void mul(const double* a, const double* b, double* c, int n) {
  if (parallel_enabled()) mul_omp(a, b, c, n);
  else mul_serial(a, b, c, n);
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double gelu_grad_value(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return cdf + x * pdf;
}

void gelu_serial(const double* x, double* y, int n) {
  for (int i = 0; i < n; ++i) y[i] = gelu_value(x[i]);
}

void gelu_omp(const double* x, double* y, int n) {
#pragma omp parallel for schedule(static) if (n >= kParallelCutoff)
  for (int i = 0; i < n; ++i) y[i] = gelu_value(x[i]);
}

void gelu(const double* x, double* y, int n) {
  if (parallel_enabled()) gelu_omp(x, y, n);
  else gelu_serial(x, y, n);
}

namespace {
inline void softmax_row(const double* x, double* y, int cols) {
  double mx = x[0];
  for (int j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
  double sum = 0.0;
  for (int j = 0; j < cols; ++j) {
    y[j] = std::exp(x[j] - mx);
    sum += y[j];
  }
  const double inv = 1.0 / sum;
  for (int j = 0; j < cols; ++j) y[j] *= inv;
}

inline void layernorm_row(const double* x, double* y, int cols) {
  double mean = 0.0;
  for (int j = 0; j < cols; ++j) mean += x[j];
  mean /= cols;
  double var = 0.0;
  for (int j = 0; j < cols; ++j) {
    const double d = x[j] - mean;
    var += d * d;
  }
  var /= cols;
  const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
  for (int j = 0; j < cols; ++j) y[j] = (x[j] - mean) * inv;
}
}  // namespace

void softmax_rows_serial(const double* x, double* y, int rows, int cols) {
  for (int i = 0; i < rows; ++i)
    softmax_row(x + static_cast<long>(i) * cols, y + static_cast<long>(i) * cols, cols);
}

void softmax_rows_omp(const double* x, double* y, int rows, int cols) {
#pragma omp parallel for schedule(static) if (static_cast<long>(rows) * cols >= kParallelCutoff)
  for (int i = 0; i < rows; ++i)
    softmax_row(x + static_cast<long>(i) * cols, y + static_cast<long>(i) * cols, cols);
}

void softmax_rows(const double* x, double* y, int rows, int cols) {
  if (parallel_enabled()) softmax_rows_omp(x, y, rows, cols);
  else softmax_rows_serial(x, y, rows, cols);
}

void layernorm_rows_serial(const double* x, double* y, int rows, int cols) {
  for (int i = 0; i < rows; ++i)
    layernorm_row(x + static_cast<long>(i) * cols, y + static_cast<long>(i) * cols, cols);
}

void layernorm_rows_omp(const double* x, double* y, int rows, int cols) {
#pragma omp parallel for schedule(static) if (static_cast<long>(rows) * cols >= kParallelCutoff)
  for (int i = 0; i < rows; ++i)
    layernorm_row(x + static_cast<long>(i) * cols, y + static_cast<long>(i) * cols, cols);
}

void layernorm_rows(const double* x, double* y, int rows, int cols) {
  if (parallel_enabled()) layernorm_rows_omp(x, y, rows, cols);
  else layernorm_rows_serial(x, y, rows, cols);
}

}  // namespace peftsearch::kernels
