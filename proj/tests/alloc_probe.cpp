#include "alloc_probe.hpp"

#include <malloc.h>

#include <atomic>
#include <cstring>

extern "C" {
void* __libc_malloc(std::size_t);
void __libc_free(void*);
void* __libc_calloc(std::size_t, std::size_t);
void* __libc_realloc(void*, std::size_t);
}

namespace {

std::atomic<long long> live{0};
std::atomic<long long> high{0};
std::atomic<long long> base{0};
std::atomic<bool> tracking{false};

void note_alloc(void* p) {
  if (p == nullptr) return;
  const long long now = live.fetch_add(static_cast<long long>(malloc_usable_size(p))) +
                        static_cast<long long>(malloc_usable_size(p));
  if (tracking.load(std::memory_order_relaxed)) {
    long long h = high.load();
    while (now > h && !high.compare_exchange_weak(h, now)) {
    }
  }
}

void note_free(void* p) {
  if (p == nullptr) return;
  live.fetch_sub(static_cast<long long>(malloc_usable_size(p)));
}

}  // namespace

extern "C" {

void* malloc(std::size_t n) {
  void* p = __libc_malloc(n);
  note_alloc(p);
  return p;
}

void free(void* p) {
  note_free(p);
  __libc_free(p);
}

void* calloc(std::size_t a, std::size_t b) {
  void* p = __libc_calloc(a, b);
  note_alloc(p);
  return p;
}

void* realloc(void* old, std::size_t n) {
  note_free(old);
  void* p = __libc_realloc(old, n);
  note_alloc(p);
  return p;
}

}  // extern "C"

namespace alloc_probe {

void start() {
  base = live.load();
  high = live.load();
  tracking = true;
}

std::size_t peak() { return static_cast<std::size_t>(high.load() - base.load()); }

void stop() { tracking = false; }

}  // namespace alloc_probe
