#pragma once

#include <functional>
#include <string>

#include "cpl/diff/parameter_store.hpp"
#include "cpl/diff/tape.hpp"

namespace cpl::diff {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t entries_checked = 0;
  double kink_margin = 0.0;  // of the unperturbed forward pass
};

using LossFn = std::function<Var(Tape&)>;

// Compares backward() against central finite differences
// (f(w + h) - f(w - h)) / 2h for every parameter entry of `store`.
// The error of a tensor is ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-8).
// Grads in `store` are zeroed before and after.
GradCheckResult check_gradients(ParameterStore& store, const LossFn& loss, double step = 1e-3);

}  // namespace cpl::diff
