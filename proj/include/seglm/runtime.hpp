#pragma once

namespace seglm {

// Pins BLAS to one thread. Parallelism is managed at the batch level with
// per-thread gradient buffers reduced in a fixed order, so results do not
// depend on the thread count.
void init_runtime();

}  // namespace seglm
