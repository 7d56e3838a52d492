#pragma once
// Heap buffers on 64-byte boundaries.
//
// Eigen's vectorized reductions peel a scalar head up to the first aligned
// address, so the summation order of a mapped buffer depends on where it
// lives. With every buffer on a fixed boundary the order, and so the result,
// is the same on every run.
#include <cstddef>
#include <new>
#include <vector>

namespace sapm {

inline constexpr std::size_t kBufferAlignment = 64;

template <class T>
struct AlignedAllocator {
  using value_type = T;
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kBufferAlignment}));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{kBufferAlignment}); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

}  // namespace sapm
