#include "mvnet/parallel.hpp"

#include <atomic>
#include <cstdlib>

#include <omp.h>

namespace mvnet {
namespace {

int read_env_threads() {
  const char* env = std::getenv("MVNET_THREADS");
  if (env == nullptr || *env == '\0') return omp_get_max_threads();
  char* end = nullptr;
  long v = std::strtol(env, &end, 10);
  if (end == env || v < 0) return omp_get_max_threads();
  return static_cast<int>(v);
}

std::atomic<int>& thread_setting() {
  static std::atomic<int> value{read_env_threads()};
  return value;
}

}  // namespace

int configured_threads() { return thread_setting().load(); }

void set_threads(int n) { thread_setting().store(n < 0 ? 0 : n); }

bool deterministic_mode() { return configured_threads() == 0; }

int kernel_threads() {
  int n = configured_threads();
  return n <= 0 ? 1 : n;
}

}  // namespace mvnet
