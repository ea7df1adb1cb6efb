#include "nplab/kernels.hpp"

#include <cstdlib>
#include <cstring>

#include "nplab/common.hpp"

namespace nplab::kernels {
namespace {

Backend detect_backend() {
  if (const char* env = std::getenv("NPLAB_KERNEL_BACKEND")) {
    if (std::strcmp(env, "scalar") == 0) return Backend::scalar;
    if (std::strcmp(env, "avx2") == 0) return Backend::avx2;
    if (std::strcmp(env, "neon") == 0) return Backend::neon;
    throw ConfigError(format_msg("NPLAB_KERNEL_BACKEND: unknown backend '", env,
                                 "' (expected scalar, avx2, or neon)"));
  }
#if defined(__x86_64__) || defined(_M_X64)
  if (avx2_table() != nullptr && __builtin_cpu_supports("avx2")) return Backend::avx2;
#endif
  if (neon_table() != nullptr) return Backend::neon;
  return Backend::scalar;
}

Backend& active_slot() {
  static Backend b = detect_backend();
  return b;
}

}  // namespace

bool backend_available(Backend b) {
  switch (b) {
    case Backend::scalar:
      return true;
    case Backend::avx2:
#if defined(__x86_64__) || defined(_M_X64)
      return avx2_table() != nullptr && __builtin_cpu_supports("avx2");
#else
      return false;
#endif
    case Backend::neon:
      return neon_table() != nullptr;
  }
  return false;
}

Backend active_backend() { return active_slot(); }

void force_backend(Backend b) {
  check<ConfigError>(backend_available(b), "kernel backend '", backend_name(b),
                     "' is not available on this machine");
  active_slot() = b;
}

const char* backend_name(Backend b) {
  switch (b) {
    case Backend::scalar: return "scalar";
    case Backend::avx2:   return "avx2";
    case Backend::neon:   return "neon";
  }
  return "?";
}

const KernelTable& table() {
  switch (active_slot()) {
    case Backend::avx2:
      return *avx2_table();
    case Backend::neon:
      return *neon_table();
    case Backend::scalar:
    default:
      return scalar_table();
  }
}

}  // namespace nplab::kernels
