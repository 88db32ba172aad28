#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace cxr {

// Training allocates and frees the same large activation buffers every
// step. glibc's defaults hand blocks above the mmap threshold back to the
// kernel, so each step page-faults its activations in again. Keeping them on
// the heap is worth roughly a third of step time on small models.
inline void tune_allocator() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 32 << 20);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 64 << 20);
    return true;
  }();
  (void)done;
#endif
}

}  // namespace cxr
