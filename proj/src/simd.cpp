#include "gradkernel/simd.hpp"

#include <cstdlib>
#include <cstring>

namespace gradkernel::simd {
namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* select_default() {
  const char* env = std::getenv("GRADKERNEL_SIMD");
  if (env != nullptr && std::strcmp(env, "scalar") == 0) return &scalar_table();
  if (avx2_available()) return avx2_table();
  return &scalar_table();
}

}  // namespace

namespace detail {
const KernelTable* active = select_default();
thread_local std::uint64_t mult_count = 0;
}  // namespace detail

bool avx2_available() { return avx2_table() != nullptr && cpu_has_avx2(); }

Backend backend() { return detail::active == &scalar_table() ? Backend::Scalar : Backend::Avx2; }

void set_backend(Backend b) {
  if (b == Backend::Avx2 && avx2_available()) {
    detail::active = avx2_table();
  } else {
    detail::active = &scalar_table();
  }
}

std::string_view backend_name(Backend b) { return b == Backend::Avx2 ? "avx2" : "scalar"; }

std::uint64_t multiplies() { return detail::mult_count; }
void reset_multiplies() { detail::mult_count = 0; }

}  // namespace gradkernel::simd
