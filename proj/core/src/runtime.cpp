#include "lumenseg/runtime.hpp"

#include <cstdlib>  // defines __GLIBC__

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace lumenseg {

void configure_allocator() {
#if defined(__GLIBC__)
  // glibc rejects mmap thresholds above 32 MiB on 64-bit targets.
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace lumenseg
