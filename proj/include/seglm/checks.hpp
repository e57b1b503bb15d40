#pragma once

#include <ostream>

#include "seglm/config.hpp"

namespace seglm {

// Oracle cross-checks plus a finite-difference gradient check on a reduced
// model derived from `cfg`. Prints one line per check; returns false if any
// check fails.
bool run_check_suite(const ModelConfig& cfg, std::uint64_t seed, std::ostream& out);

}  // namespace seglm
