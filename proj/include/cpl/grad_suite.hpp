#pragma once

#include <string>
#include <vector>

#include "cpl/diff/grad_check.hpp"
#include "cpl/random.hpp"

namespace cpl {

// Finite-difference trials of whole networks on tiny random instances:
// "reasoner" checks the REINFORCE surrogate sum_t G_t log pi(a_t) of a sampled
// rollout (boosted or not), "extractor" checks the supervised bag loss plus
// weighted extraction log-probs.
const std::vector<std::string>& network_names();

diff::GradCheckResult run_network_trial(const std::string& net, Rng& rng, double step = 1e-3);

}  // namespace cpl
