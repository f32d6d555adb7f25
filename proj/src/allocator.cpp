#include <algorithm>
#include <cstdlib>
#include <new>

// Every heap block starts on a 64-byte boundary. Vectorized kernels choose
// between packet and scalar paths by address alignment, so this makes results
// depend on shapes only, not on where the allocator placed a buffer.
namespace {

constexpr std::size_t kHeapAlign = 64;

void* aligned_heap_alloc(std::size_t size) {
  const std::size_t rounded = (std::max<std::size_t>(size, 1) + kHeapAlign - 1) / kHeapAlign * kHeapAlign;
  return std::aligned_alloc(kHeapAlign, rounded);
}

}  // namespace

void* operator new(std::size_t size) {
  if (void* p = aligned_heap_alloc(size)) return p;
  throw std::bad_alloc();
}
void* operator new[](std::size_t size) { return ::operator new(size); }
void* operator new(std::size_t size, const std::nothrow_t&) noexcept { return aligned_heap_alloc(size); }
void* operator new[](std::size_t size, const std::nothrow_t&) noexcept { return aligned_heap_alloc(size); }
void operator delete(void* p) noexcept { std::free(p); }
void operator delete[](void* p) noexcept { std::free(p); }
void operator delete(void* p, std::size_t) noexcept { std::free(p); }
void operator delete[](void* p, std::size_t) noexcept { std::free(p); }
void operator delete(void* p, const std::nothrow_t&) noexcept { std::free(p); }
void operator delete[](void* p, const std::nothrow_t&) noexcept { std::free(p); }
