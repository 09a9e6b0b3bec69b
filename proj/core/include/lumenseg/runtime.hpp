#pragma once

namespace lumenseg {

// Keeps large tensor buffers on the heap instead of fresh mmap regions, which
// otherwise dominate system time during training. Call once at startup; a
// no-op outside glibc.
void configure_allocator();

}  // namespace lumenseg
