#pragma once

#if defined(__GLIBC__) || defined(__linux__)
#include <malloc.h>
#endif

namespace proxflow {

/// Training allocates many short-lived matrices around glibc's default mmap
/// threshold (128 KiB); keeping them on the heap avoids a page-fault storm.
inline void configure_allocator() {
#if defined(M_MMAP_THRESHOLD)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

}  // namespace proxflow
