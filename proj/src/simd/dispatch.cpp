#include "conked/simd/kernels.hpp"

#include <atomic>
#include <cassert>
#include <cstdlib>
#include <string>

#include "conked/error.hpp"

namespace conked::simd {

namespace detail {
#if !defined(CONKED_HAVE_AVX2)
const KernelTable* avx2_table() noexcept { return nullptr; }
#endif
#if !defined(CONKED_HAVE_NEON)
const KernelTable* neon_table() noexcept { return nullptr; }
#endif
}  // namespace detail

namespace {

bool cpu_has_avx2() noexcept {
#if defined(CONKED_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* table_for(Backend b) noexcept {
  switch (b) {
    case Backend::scalar: return &detail::scalar_table();
    case Backend::avx2: return cpu_has_avx2() ? detail::avx2_table() : nullptr;
    case Backend::neon: return detail::neon_table();
  }
  return nullptr;
}

Backend detect_backend() noexcept {
  if (const char* env = std::getenv("CONKED_SIMD")) {
    const std::string want(env);
    for (Backend b : {Backend::scalar, Backend::avx2, Backend::neon}) {
      if (want == backend_name(b) && table_for(b) != nullptr) return b;
    }
  }
  if (table_for(Backend::avx2)) return Backend::avx2;
  if (table_for(Backend::neon)) return Backend::neon;
  return Backend::scalar;
}

struct State {
  std::atomic<Backend> backend;
  std::atomic<const KernelTable*> table;
  State() {
    const Backend b = detect_backend();
    backend.store(b);
    table.store(table_for(b));
  }
};

State& state() {
  static State s;
  return s;
}

const KernelTable& table() { return *state().table.load(std::memory_order_relaxed); }

}  // namespace

std::string_view backend_name(Backend b) noexcept {
  switch (b) {
    case Backend::scalar: return "scalar";
    case Backend::avx2: return "avx2";
    case Backend::neon: return "neon";
  }
  return "unknown";
}

bool backend_supported(Backend b) noexcept { return table_for(b) != nullptr; }

Backend active_backend() noexcept { return state().backend.load(); }

void set_backend(Backend b) {
  const KernelTable* t = table_for(b);
  if (t == nullptr) {
    throw Error(Errc::invalid_argument,
                "SIMD backend '" + std::string(backend_name(b)) + "' is not available");
  }
  state().table.store(t);
  state().backend.store(b);
}

float dot(std::span<const float> a, std::span<const float> b) {
  assert(a.size() == b.size());
  return table().dot_f32(a.data(), b.data(), a.size());
}

double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  return table().dot_f64(a.data(), b.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  assert(x.size() == y.size());
  table().axpy_f64(alpha, x.data(), y.data(), x.size());
}

}  // namespace conked::simd
