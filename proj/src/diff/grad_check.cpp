#include "cpl/diff/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace cpl::diff {

namespace {

double evaluate(const ParameterStore& store, const LossFn& loss) {
  Tape tape(store);
  return tape.scalar(loss(tape));
}

}  // namespace

GradCheckResult check_gradients(ParameterStore& store, const LossFn& loss, double step) {
  GradCheckResult result;
  store.zero_grad();
  {
    Tape tape(store);
    const Var out = loss(tape);
    result.kink_margin = tape.kink_margin();
    tape.backward(out, store);
  }
  for (ParamId id = 0; id < store.size(); ++id) {
    const Matrix analytic = store.grad(id);
    auto& values = store.value(id).data;
    double diff2 = 0.0;
    double a2 = 0.0;
    double n2 = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = evaluate(store, loss);
      values[i] = saved - step;
      const double down = evaluate(store, loss);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
      ++result.entries_checked;
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-8});
    const double err = std::sqrt(diff2) / denom;
    if (result.worst_parameter.empty() || err > result.max_relative_error) {
      result.max_relative_error = err;
      result.worst_parameter = store.name(id);
    }
  }
  store.zero_grad();
  return result;
}

}  // namespace cpl::diff
