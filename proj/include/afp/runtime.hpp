// Process-level tuning for the training loops.

#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace afp {

// Every graph step allocates and frees multi-megabyte buffers (im2col
// columns, activations). Keeping them on the heap instead of fresh mmap
// pages avoids a page-fault storm per convolution.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
}

}  // namespace afp
