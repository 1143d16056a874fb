#pragma once

#include <string>
#include <vector>

#include "cpl/diff/grad_check.hpp"
#include "cpl/random.hpp"

namespace cpl::diff {

// Randomized finite-difference trials for each tape op in isolation. Every
// op's output is contracted with a random projection so the checked loss is
// scalar. Trials whose forward pass sits within 10 steps of a relu/max-pool
// kink are redrawn.
const std::vector<std::string>& op_names();

GradCheckResult run_op_trial(const std::string& op, Rng& rng, double step = 1e-3);

}  // namespace cpl::diff
