#pragma once

#include <functional>
#include <vector>

#include "evtrack/tape.hpp"

namespace evtrack::ad {

// Central-difference verification of reverse-mode gradients. `f` rebuilds the
// graph from the same live tensors on the tape it is given and must be
// deterministic across calls. Returns the maximum over all coordinates of
// |analytic - numeric| / max(1e-8, |numeric|).
double grad_check(const std::function<TensorPtr(Tape&)>& f,
                  const std::vector<TensorPtr>& wiggle, double step);

}  // namespace evtrack::ad
