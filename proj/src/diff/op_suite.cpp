#include "cpl/diff/op_suite.hpp"

#include <array>

#include "cpl/errors.hpp"

namespace cpl::diff {

namespace {

std::size_t dim(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

void randomize(ParameterStore& store, Rng& rng, double scale = 1.0) {
  for (ParamId id = 0; id < store.size(); ++id)
    for (auto& x : store.value(id).data) x = rng.uniform(-scale, scale);
}

// Random fixed projection turning any node into a scalar loss.
Var project(Tape& tape, Var v, Rng& rng) {
  const auto& m = tape.value(v);
  Matrix w(m.rows, m.cols);
  for (auto& x : w.data) x = rng.uniform(-1.0, 1.0);
  return tape.dot(tape.constant(std::move(w)), v);
}

struct Trial {
  ParameterStore store;
  LossFn loss;
};

Trial build(const std::string& op, Rng& rng) {
  Trial t;
  auto& s = t.store;
  const std::uint64_t proj_seed = rng.next();
  auto projected = [proj_seed](auto body) {
    return [proj_seed, body](Tape& tape) {
      Rng proj(proj_seed);
      return project(tape, body(tape), proj);
    };
  };

  if (op == "embed_lookup") {
    const auto rows = dim(rng, 2, 5);
    const auto table = s.add("table", rows, dim(rng, 1, 4));
    const auto row = static_cast<std::int32_t>(rng.below(rows));
    t.loss = projected([=](Tape& tape) { return tape.embed_lookup(table, row); });
  } else if (op == "gather_rows") {
    const auto rows = dim(rng, 2, 5);
    const auto table = s.add("table", rows, dim(rng, 1, 4));
    std::vector<std::int32_t> ids(dim(rng, 1, 4));
    for (auto& i : ids) i = static_cast<std::int32_t>(rng.below(rows));
    t.loss = projected([=](Tape& tape) { return tape.gather_rows(table, ids); });
  } else if (op == "affine") {
    const auto m = dim(rng, 1, 4), n = dim(rng, 1, 4);
    const auto w = s.add("W", m, n), x = s.add("x", n, 1), b = s.add("b", m, 1);
    t.loss = projected([=](Tape& tape) { return tape.affine(tape.param(w), tape.param(x), tape.param(b)); });
  } else if (op == "matvec_t") {
    const auto m = dim(rng, 1, 4), n = dim(rng, 1, 4);
    const auto w = s.add("M", m, n), x = s.add("x", m, 1);
    t.loss = projected([=](Tape& tape) { return tape.matvec_t(tape.param(w), tape.param(x)); });
  } else if (op == "relu" || op == "tanh" || op == "sigmoid") {
    const auto x = s.add("x", dim(rng, 1, 6), 1);
    t.loss = projected([=](Tape& tape) {
      const Var v = tape.param(x);
      return op == "relu" ? tape.relu(v) : op == "tanh" ? tape.tanh(v) : tape.sigmoid(v);
    });
  } else if (op == "add" || op == "mul" || op == "dot") {
    const auto n = dim(rng, 1, 5);
    const auto a = s.add("a", n, 1), b = s.add("b", n, 1);
    t.loss = projected([=](Tape& tape) {
      const Var va = tape.param(a), vb = tape.param(b);
      return op == "add" ? tape.add(va, vb) : op == "mul" ? tape.mul(va, vb) : tape.dot(va, vb);
    });
  } else if (op == "concat" || op == "slice") {
    const auto n1 = dim(rng, 1, 3), n2 = dim(rng, 1, 3);
    const auto a = s.add("a", n1, 1), b = s.add("b", n2, 1);
    const auto off = static_cast<std::size_t>(rng.below(n1 + n2));
    const auto len = 1 + static_cast<std::size_t>(rng.below(n1 + n2 - off));
    t.loss = projected([=](Tape& tape) {
      const std::array<Var, 2> parts{tape.param(a), tape.param(b)};
      const Var c = tape.concat(parts);
      return op == "concat" ? c : tape.slice(c, off, len);
    });
  } else if (op == "softmax" || op == "log_softmax") {
    const auto x = s.add("logits", dim(rng, 1, 6), 1);
    t.loss = projected([=](Tape& tape) {
      return op == "softmax" ? tape.softmax(tape.param(x)) : tape.log_softmax(tape.param(x));
    });
  } else if (op == "categorical_log_prob") {
    const auto n = dim(rng, 1, 6);
    const auto x = s.add("logits", n, 1);
    const auto idx = static_cast<std::size_t>(rng.below(n));
    t.loss = [=](Tape& tape) { return tape.categorical_log_prob(tape.param(x), idx); };
  } else if (op == "recurrent_step") {
    const auto h = dim(rng, 1, 3), in = dim(rng, 1, 3);
    LstmParams p{s.add("Wx", 4 * h, in), s.add("Wh", 4 * h, h), s.add("b", 4 * h, 1)};
    const auto x = s.add("x", in, 1), h0 = s.add("h0", h, 1), c0 = s.add("c0", h, 1);
    t.loss = projected([=](Tape& tape) {
      const auto next = tape.recurrent_step(p, LstmState{tape.param(h0), tape.param(c0)}, tape.param(x));
      const std::array<Var, 2> parts{next.h, next.c};
      return tape.concat(parts);
    });
  } else if (op == "conv1d_pool") {
    const auto len = dim(rng, 1, 7), in = dim(rng, 1, 3), nf = dim(rng, 1, 3);
    const std::size_t width = rng.bernoulli(0.5) ? 3 : 1;
    const auto x = s.add("X", len, in), w = s.add("filters", nf, width * in), b = s.add("bias", nf, 1);
    const auto c1 = static_cast<std::size_t>(rng.below(len));
    const auto c2 = c1 + static_cast<std::size_t>(rng.below(len - c1));
    t.loss = projected([=](Tape& tape) {
      return tape.tanh(tape.piecewise_max_pool(
          tape.conv1d(tape.param(x), tape.param(w), tape.param(b), width), c1, c2));
    });
  } else {
    throw ConfigError("unknown op trial '" + op + "'");
  }
  randomize(s, rng);
  return t;
}

}  // namespace

const std::vector<std::string>& op_names() {
  static const std::vector<std::string> names{
      "embed_lookup", "gather_rows", "affine",  "matvec_t",    "relu",
      "tanh",         "sigmoid",     "add",     "mul",         "dot",
      "concat",       "slice",       "softmax", "log_softmax", "categorical_log_prob",
      "recurrent_step", "conv1d_pool"};
  return names;
}

GradCheckResult run_op_trial(const std::string& op, Rng& rng, double step) {
  for (int attempt = 0; attempt < 50; ++attempt) {
    auto trial = build(op, rng);
    {
      Tape probe(trial.store);
      trial.loss(probe);
      if (probe.kink_margin() < 10.0 * step) continue;
    }
    return check_gradients(trial.store, trial.loss, step);
  }
  throw NumericError("could not draw a kink-free trial for op '" + op + "'");
}

}  // namespace cpl::diff
