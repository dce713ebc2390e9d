#include "conked/simd/kernels.hpp"

namespace conked::simd::detail {

namespace {

float dot_f32(const float* a, const float* b, std::size_t n) {
  float s = 0.0f;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double dot_f64(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_f64(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

constexpr KernelTable kScalar{dot_f32, dot_f64, axpy_f64};

}  // namespace

const KernelTable& scalar_table() noexcept { return kScalar; }

}  // namespace conked::simd::detail
