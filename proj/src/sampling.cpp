#include "cpl/sampling.hpp"

#include <algorithm>
#include <cmath>

#include "cpl/errors.hpp"

namespace cpl {

std::vector<double> log_softmax(std::span<const double> logits) {
  if (logits.empty()) throw DimensionError("softmax over an empty vector");
  const double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double x : logits) s += std::exp(x - m);
  const double lse = m + std::log(s);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  auto out = log_softmax(logits);
  for (auto& x : out) x = std::exp(x);
  return out;
}

std::size_t sample_index(std::span<const double> probs, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  // u landed in the rounding gap; take the last index with mass
  for (std::size_t i = probs.size(); i-- > 0;)
    if (probs[i] > 0.0) return i;
  return 0;
}

std::size_t argmax(std::span<const double> values) {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

std::vector<double> boosted_distribution(std::span<const double> logits,
                                         const std::vector<bool>& suggested, double boost) {
  std::vector<double> z(logits.begin(), logits.end());
  for (std::size_t i = 0; i < z.size() && i < suggested.size(); ++i)
    if (suggested[i]) z[i] += boost;
  return softmax(z);
}

SampledAction adaptive_sample(std::span<const double> logits, const std::vector<bool>& suggested,
                              double boost, bool active, Rng& rng) {
  std::vector<double> z(logits.begin(), logits.end());
  if (active)
    for (std::size_t i = 0; i < z.size() && i < suggested.size(); ++i)
      if (suggested[i]) z[i] += boost;
  const auto logp = log_softmax(z);
  SampledAction out;
  out.probs.resize(logp.size());
  for (std::size_t i = 0; i < logp.size(); ++i) out.probs[i] = std::exp(logp[i]);
  out.index = sample_index(out.probs, rng);
  out.log_prob = logp[out.index];
  return out;
}

}  // namespace cpl
