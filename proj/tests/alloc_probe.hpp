#pragma once

// Byte-level heap accounting for one test binary. Overrides the C allocator
// (Eigen allocates through malloc, not operator new) and forwards to glibc.

#include <cstddef>

namespace alloc_probe {

void start();          // begin tracking; the peak is measured relative to this point
std::size_t peak();    // highest live byte count above the starting level
void stop();

}  // namespace alloc_probe
