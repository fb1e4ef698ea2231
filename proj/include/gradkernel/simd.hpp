#pragma once

// Data-parallel inner loops used by every structured operator. Each kernel has
// a scalar reference and an AVX2/FMA variant; the variant is chosen once at
// startup from CPUID and can be overridden with GRADKERNEL_SIMD=scalar or
// set_backend(). All kernels bump a thread-local multiply counter by the
// number of logical multiplies they perform, independent of the backend.

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace gradkernel::simd {

enum class Backend { Scalar, Avx2 };

struct KernelTable {
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // y = alpha * x
  void (*scale)(double alpha, const double* x, double* y, std::size_t n);
  // y += x .* z
  void (*hadamard_acc)(const double* x, const double* z, double* y, std::size_t n);
};

const KernelTable& scalar_table();
/// Null when the binary was built without AVX2 support.
const KernelTable* avx2_table();

bool avx2_available();
Backend backend();
void set_backend(Backend b);
std::string_view backend_name(Backend b);

namespace detail {
extern const KernelTable* active;
extern thread_local std::uint64_t mult_count;
}  // namespace detail

inline double dot(const double* a, const double* b, std::size_t n) {
  detail::mult_count += n;
  return detail::active->dot(a, b, n);
}
inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  detail::mult_count += n;
  detail::active->axpy(alpha, x, y, n);
}
inline void scale(double alpha, const double* x, double* y, std::size_t n) {
  detail::mult_count += n;
  detail::active->scale(alpha, x, y, n);
}
inline void hadamard_acc(const double* x, const double* z, double* y, std::size_t n) {
  detail::mult_count += n;
  detail::active->hadamard_acc(x, z, y, n);
}
/// Records multiplies done by small hand-written loops (r×r cores and the like).
inline void count(std::uint64_t n) { detail::mult_count += n; }

std::uint64_t multiplies();
void reset_multiplies();

/// Scoped backend override, restores the previous backend on destruction.
class BackendGuard {
 public:
  explicit BackendGuard(Backend b) : previous_(backend()) { set_backend(b); }
  ~BackendGuard() { set_backend(previous_); }
  BackendGuard(const BackendGuard&) = delete;
  BackendGuard& operator=(const BackendGuard&) = delete;

 private:
  Backend previous_;
};

}  // namespace gradkernel::simd
