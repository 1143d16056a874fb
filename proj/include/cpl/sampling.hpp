#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cpl/random.hpp"

namespace cpl {

std::vector<double> softmax(std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);

// Index drawn from a probability vector by inverse CDF.
std::size_t sample_index(std::span<const double> probs, Rng& rng);

// First index of the maximum.
std::size_t argmax(std::span<const double> values);

struct SampledAction {
  std::size_t index = 0;
  double log_prob = 0.0;  // under the distribution actually sampled from
  std::vector<double> probs;
};

// When active, suggested logits get +boost before renormalising; the
// returned log-prob belongs to that boosted distribution.
SampledAction adaptive_sample(std::span<const double> logits, const std::vector<bool>& suggested,
                              double boost, bool active, Rng& rng);

// Same distribution without drawing.
std::vector<double> boosted_distribution(std::span<const double> logits,
                                         const std::vector<bool>& suggested, double boost);

}  // namespace cpl
