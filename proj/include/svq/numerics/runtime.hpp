#pragma once

namespace svq {

// Keeps freed tensor buffers in the heap instead of returning them to the OS
// on every free; training allocates and drops many large same-sized buffers
// per step. Call once at process start.
void tune_allocator();

}  // namespace svq
