#include "sidkit/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace sidkit::kernels {

namespace {

std::atomic<const Backend*> g_active{nullptr};

const Backend* resolve_auto() {
#if defined(SIDKIT_WITH_AVX2)
  if (avx2_available()) return &avx2_backend();
#endif
  return &scalar_backend();
}

const Backend* resolve_named(const std::string& name) {
  if (name == "auto") return resolve_auto();
  if (name == "scalar") return &scalar_backend();
  if (name == "avx2") {
#if defined(SIDKIT_WITH_AVX2)
    if (avx2_available()) return &avx2_backend();
    throw std::runtime_error("kernel backend 'avx2' requested but this CPU lacks AVX2/FMA");
#else
    throw std::runtime_error("kernel backend 'avx2' requested but this build has no AVX2 support");
#endif
  }
  throw std::runtime_error("unknown kernel backend '" + name + "' (expected scalar|avx2|auto)");
}

}  // namespace

bool avx2_available() {
#if defined(SIDKIT_WITH_AVX2)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const Backend& active() {
  const Backend* b = g_active.load(std::memory_order_acquire);
  if (b) return *b;
  const char* env = std::getenv("SIDKIT_KERNELS");
  b = env ? resolve_named(env) : resolve_auto();
  g_active.store(b, std::memory_order_release);
  return *b;
}

const Backend& select(const std::string& name) {
  const Backend* b = resolve_named(name);
  g_active.store(b, std::memory_order_release);
  return *b;
}

}  // namespace sidkit::kernels
