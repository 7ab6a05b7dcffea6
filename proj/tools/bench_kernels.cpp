// Times the serial kernels against their OpenMP counterparts and checks that
// the results stay bitwise identical while it is at it.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <random>
#include <vector>

#include "peftsearch/kernels.hpp"

using namespace peftsearch;
using clk = std::chrono::steady_clock;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm-up
  const auto t0 = clk::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = clk::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

std::vector<double> randn(size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

void report(const char* name, double serial_ms, double omp_ms, bool identical) {
  std::printf("%-16s serial %8.3f ms   omp %8.3f ms   speedup %5.2fx   %s\n", name, serial_ms,
              omp_ms, serial_ms / omp_ms, identical ? "bitwise-identical" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
  int dim = argc > 1 ? std::atoi(argv[1]) : 256;
  int reps = argc > 2 ? std::atoi(argv[2]) : 10;
  std::mt19937_64 rng(7);

  const auto a = randn(static_cast<size_t>(dim) * dim, rng);
  const auto b = randn(static_cast<size_t>(dim) * dim, rng);
  std::vector<double> cs(static_cast<size_t>(dim) * dim), cp(cs.size());

  std::printf("square size %d, %d reps per kernel\n\n", dim, reps);

  {
    const double ts = time_ms([&] { kernels::matmul_serial(a.data(), b.data(), cs.data(), dim, dim, dim); }, reps);
    const double tp = time_ms([&] { kernels::matmul_omp(a.data(), b.data(), cp.data(), dim, dim, dim); }, reps);
    report("matmul", ts, tp, bitwise_equal(cs, cp));
  }
  {
    const double ts = time_ms([&] { kernels::matmul_nt_serial(a.data(), b.data(), cs.data(), dim, dim, dim); }, reps);
    const double tp = time_ms([&] { kernels::matmul_nt_omp(a.data(), b.data(), cp.data(), dim, dim, dim); }, reps);
    report("matmul_nt", ts, tp, bitwise_equal(cs, cp));
  }
  {
    const double ts = time_ms([&] { kernels::matmul_tn_serial(a.data(), b.data(), cs.data(), dim, dim, dim); }, reps);
    const double tp = time_ms([&] { kernels::matmul_tn_omp(a.data(), b.data(), cp.data(), dim, dim, dim); }, reps);
    report("matmul_tn", ts, tp, bitwise_equal(cs, cp));
  }
  {
    const double ts = time_ms([&] { kernels::add_serial(a.data(), b.data(), cs.data(), static_cast<int>(a.size())); }, reps);
    const double tp = time_ms([&] { kernels::add_omp(a.data(), b.data(), cp.data(), static_cast<int>(a.size())); }, reps);
    report("add", ts, tp, bitwise_equal(cs, cp));
  }
  {
    const double ts = time_ms([&] { kernels::mul_serial(a.data(), b.data(), cs.data(), static_cast<int>(a.size())); }, reps);
    const double tp = time_ms([&] { kernels::mul_omp(a.data(), b.data(), cp.data(), static_cast<int>(a.size())); }, reps);
    report("mul", ts, tp, bitwise_equal(cs, cp));
  }
  {
    const double ts = time_ms([&] { kernels::gelu_serial(a.data(), cs.data(), static_cast<int>(a.size())); }, reps);
    const double tp = time_ms([&] { kernels::gelu_omp(a.data(), cp.data(), static_cast<int>(a.size())); }, reps);
    report("gelu", ts, tp, bitwise_equal(cs, cp));
  }
  {
    const double ts = time_ms([&] { kernels::softmax_rows_serial(a.data(), cs.data(), dim, dim); }, reps);
    const double tp = time_ms([&] { kernels::softmax_rows_omp(a.data(), cp.data(), dim, dim); }, reps);
    report("softmax_rows", ts, tp, bitwise_equal(cs, cp));
  }
  {
    const double ts = time_ms([&] { kernels::layernorm_rows_serial(a.data(), cs.data(), dim, dim); }, reps);
    const double tp = time_ms([&] { kernels::layernorm_rows_omp(a.data(), cp.data(), dim, dim); }, reps);
    report("layernorm_rows", ts, tp, bitwise_equal(cs, cp));
  }
  return 0;
}
