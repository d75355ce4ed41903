#pragma once

namespace epic {

/// Keeps glibc from serving the per-cloud activation matrices (a few hundred
/// KB each) with fresh mmap/munmap pairs, which otherwise dominates forward
/// pass time. Call once from main(); a no-op on other C libraries.
void configure_allocator();

}  // namespace epic
