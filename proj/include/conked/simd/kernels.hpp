#pragma once

#include <cstddef>
#include <span>
#include <string_view>

// Data-parallel inner loops of the descriptor network and the similarity
// matrix. Every kernel has a scalar reference implementation; vector
// variants are chosen once at startup from the CPU feature set and can be
// overridden (tests, or CONKED_SIMD=scalar|avx2|neon in the environment).
//
// Each backend uses a fixed summation order, so results are deterministic
// per backend. Backends agree to rounding, not bitwise.
namespace conked::simd {

enum class Backend { scalar, avx2, neon };

std::string_view backend_name(Backend b) noexcept;
bool backend_supported(Backend b) noexcept;
Backend active_backend() noexcept;
// Throws conked::Error(invalid_argument) when b is not supported here.
void set_backend(Backend b);

float dot(std::span<const float> a, std::span<const float> b);
double dot(std::span<const double> a, std::span<const double> b);
// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

struct KernelTable {
  float (*dot_f32)(const float*, const float*, std::size_t);
  double (*dot_f64)(const double*, const double*, std::size_t);
  void (*axpy_f64)(double, const double*, double*, std::size_t);
};

namespace detail {
const KernelTable& scalar_table() noexcept;
const KernelTable* avx2_table() noexcept;  // nullptr when not compiled in
const KernelTable* neon_table() noexcept;
}  // namespace detail

// Scoped override used by the equivalence tests.
class ScopedBackend {
 public:
  explicit ScopedBackend(Backend b) : previous_(active_backend()) { set_backend(b); }
  ~ScopedBackend() { set_backend(previous_); }
  ScopedBackend(const ScopedBackend&) = delete;
  ScopedBackend& operator=(const ScopedBackend&) = delete;

 private:
  Backend previous_;
};

}  // namespace conked::simd
