#include "cpl/diff/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cpl/errors.hpp"

namespace cpl::diff {

namespace {

constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();

double log_sum_exp(std::span<const double> x) {
  const double m = *std::max_element(x.begin(), x.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace

Tape::Tape(const ParameterStore& store) : store_(&store), version_(store.version()) {
  nodes_.reserve(64);
}

void Tape::require(bool ok, const char* what) const {
  if (!ok) throw DimensionError(what);
}

Var Tape::push(Node node) {
  for (double x : node.value.data) {
    if (!std::isfinite(x)) {
      throw NumericError("non-finite value produced by tape op " +
                         std::to_string(static_cast<int>(node.op)));
    }
  }
  nodes_.push_back(std::move(node));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.index >= nodes_.size()) throw LifecycleError("invalid tape variable");
  return nodes_[v.index];
}

const Matrix& Tape::value(Var v) const { return node(v).value; }

double Tape::scalar(Var v) const {
  const auto& m = value(v);
  require(m.size() == 1, "scalar() on a non-scalar node");
  return m[0];
}

// ---------------------------------------------------------------------------
// Leaves

Var Tape::param(ParamId id) {
  Node n{Op::param, store_->value(id), {}};
  n.param = id;
  return push(std::move(n));
}

Var Tape::constant(Matrix value) { return push(Node{Op::constant, std::move(value), {}}); }

Var Tape::constant_vector(std::span<const double> values) {
  return constant(Matrix::vector(values));
}

Var Tape::zeros(std::size_t n) { return constant(Matrix(n, 1)); }

Var Tape::embed_lookup(ParamId table, std::int32_t row) {
  const auto& t = store_->value(table);
  if (row < 0 || static_cast<std::size_t>(row) >= t.rows)
    throw LookupError("embedding row " + std::to_string(row) + " out of range for '" +
                      store_->name(table) + "'");
  Node n{Op::lookup, Matrix(t.cols, 1), {}};
  const auto src = t.row(static_cast<std::size_t>(row));
  std::copy(src.begin(), src.end(), n.value.data.begin());
  n.param = table;
  n.ids = {row};
  return push(std::move(n));
}

Var Tape::gather_rows(ParamId table, std::span<const std::int32_t> rows) {
  const auto& t = store_->value(table);
  Node n{Op::gather, Matrix(rows.size(), t.cols), {}};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || static_cast<std::size_t>(rows[i]) >= t.rows)
      throw LookupError("embedding row " + std::to_string(rows[i]) + " out of range for '" +
                        store_->name(table) + "'");
    const auto src = t.row(static_cast<std::size_t>(rows[i]));
    std::copy(src.begin(), src.end(), n.value.row(i).begin());
  }
  n.param = table;
  n.ids.assign(rows.begin(), rows.end());
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// Linear algebra

Var Tape::affine(Var weights, Var x, Var bias) {
  const auto& w = value(weights);
  const auto& xv = value(x);
  require(xv.cols == 1 && w.cols == xv.rows, "affine: W cols must equal x rows");
  Matrix y(w.rows, 1);
  if (bias.valid()) {
    const auto& b = value(bias);
    require(b.rows == w.rows && b.cols == 1, "affine: bias shape");
    y.data = b.data;
  }
  for (std::size_t i = 0; i < w.rows; ++i) {
    double s = 0.0;
    const auto row = w.row(i);
    for (std::size_t j = 0; j < w.cols; ++j) s += row[j] * xv[j];
    y[i] += s;
  }
  Node n{Op::affine, std::move(y), {weights.index, x.index, bias.valid() ? bias.index : kNone}};
  return push(std::move(n));
}

Var Tape::matvec(Var m, Var x) { return affine(m, x, Var{}); }

Var Tape::matvec_t(Var m, Var x) {
  const auto& mv = value(m);
  const auto& xv = value(x);
  require(xv.cols == 1 && mv.rows == xv.rows, "matvec_t: M rows must equal x rows");
  Matrix y(mv.cols, 1);
  for (std::size_t i = 0; i < mv.rows; ++i) {
    const auto row = mv.row(i);
    for (std::size_t j = 0; j < mv.cols; ++j) y[j] += row[j] * xv[i];
  }
  return push(Node{Op::matvec_t, std::move(y), {m.index, x.index}});
}

Var Tape::dot(Var a, Var b) {
  const auto& av = value(a);
  const auto& bv = value(b);
  require(av.same_shape(bv), "dot: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  return push(Node{Op::dot, Matrix(1, 1, s), {a.index, b.index}});
}

// ---------------------------------------------------------------------------
// Elementwise

Var Tape::relu(Var x) {
  Matrix y = value(x);
  for (auto& v : y.data) {
    kink_margin_ = std::min(kink_margin_, std::abs(v));
    v = v > 0.0 ? v : 0.0;
  }
  return push(Node{Op::relu, std::move(y), {x.index}});
}

Var Tape::tanh(Var x) {
  Matrix y = value(x);
  for (auto& v : y.data) v = std::tanh(v);
  return push(Node{Op::tanh, std::move(y), {x.index}});
}

Var Tape::sigmoid(Var x) {
  Matrix y = value(x);
  for (auto& v : y.data) v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  return push(Node{Op::sigmoid, std::move(y), {x.index}});
}

Var Tape::add(Var a, Var b) {
  const auto& av = value(a);
  const auto& bv = value(b);
  require(av.same_shape(bv), "add: shape mismatch");
  Matrix y = av;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return push(Node{Op::add, std::move(y), {a.index, b.index}});
}

Var Tape::mul(Var a, Var b) {
  const auto& av = value(a);
  const auto& bv = value(b);
  require(av.same_shape(bv), "mul: shape mismatch");
  Matrix y = av;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  return push(Node{Op::mul, std::move(y), {a.index, b.index}});
}

Var Tape::scale(Var x, double factor) {
  Matrix y = value(x);
  for (auto& v : y.data) v *= factor;
  Node n{Op::scale, std::move(y), {x.index}};
  n.factor = factor;
  return push(std::move(n));
}

Var Tape::sum(Var x) {
  double s = 0.0;
  for (double v : value(x).data) s += v;
  return push(Node{Op::sum, Matrix(1, 1, s), {x.index}});
}

// ---------------------------------------------------------------------------
// Shape

Var Tape::concat(std::span<const Var> parts) {
  std::size_t total = 0;
  for (auto p : parts) {
    require(value(p).cols == 1, "concat: inputs must be column vectors");
    total += value(p).rows;
  }
  Matrix y(total, 1);
  Node n{Op::concat, {}, {}};
  std::size_t off = 0;
  for (auto p : parts) {
    const auto& v = value(p);
    std::copy(v.data.begin(), v.data.end(), y.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += v.rows;
    n.inputs.push_back(p.index);
  }
  n.value = std::move(y);
  return push(std::move(n));
}

Var Tape::concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const auto rows = value(parts[0]).rows;
  std::size_t total = 0;
  for (auto p : parts) {
    require(value(p).rows == rows, "concat_cols: row mismatch");
    total += value(p).cols;
  }
  Matrix y(rows, total);
  Node n{Op::concat_cols, {}, {}};
  std::size_t off = 0;
  for (auto p : parts) {
    const auto& v = value(p);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < v.cols; ++c) y(r, off + c) = v(r, c);
    off += v.cols;
    n.inputs.push_back(p.index);
  }
  n.value = std::move(y);
  return push(std::move(n));
}

Var Tape::stack_rows(std::span<const Var> rows) {
  require(!rows.empty(), "stack_rows: no inputs");
  const auto d = value(rows[0]).size();
  Matrix y(rows.size(), d);
  Node n{Op::stack_rows, {}, {}};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& v = value(rows[i]);
    require(v.size() == d, "stack_rows: length mismatch");
    std::copy(v.data.begin(), v.data.end(), y.row(i).begin());
    n.inputs.push_back(rows[i].index);
  }
  n.value = std::move(y);
  return push(std::move(n));
}

Var Tape::slice(Var x, std::size_t offset, std::size_t length) {
  const auto& v = value(x);
  require(v.cols == 1 && offset + length <= v.rows, "slice: out of range");
  Matrix y(length, 1);
  std::copy_n(v.data.begin() + static_cast<std::ptrdiff_t>(offset), length, y.data.begin());
  Node n{Op::slice, std::move(y), {x.index}};
  n.a = offset;
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// Distributions

Var Tape::softmax(Var logits) {
  const auto& x = value(logits);
  require(x.cols == 1 && x.rows > 0, "softmax: expects a nonempty column vector");
  const double lse = log_sum_exp(x.data);
  Matrix y(x.rows, 1);
  for (std::size_t i = 0; i < x.rows; ++i) y[i] = std::exp(x[i] - lse);
  return push(Node{Op::softmax, std::move(y), {logits.index}});
}

Var Tape::log_softmax(Var logits) {
  const auto& x = value(logits);
  require(x.cols == 1 && x.rows > 0, "log_softmax: expects a nonempty column vector");
  const double lse = log_sum_exp(x.data);
  Matrix y(x.rows, 1);
  for (std::size_t i = 0; i < x.rows; ++i) y[i] = x[i] - lse;
  return push(Node{Op::log_softmax, std::move(y), {logits.index}});
}

Var Tape::pick(Var x, std::size_t index) {
  const auto& v = value(x);
  if (index >= v.size()) throw DimensionError("pick: index outside the support");
  Node n{Op::pick, Matrix(1, 1, v[index]), {x.index}};
  n.a = index;
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// Sentence encoder ops

Var Tape::conv1d(Var x, Var filters, Var bias, std::size_t width) {
  const auto& xv = value(x);
  const auto& w = value(filters);
  const auto& b = value(bias);
  require(width % 2 == 1, "conv1d: width must be odd");
  require(w.cols == width * xv.cols, "conv1d: filter width mismatch");
  require(b.rows == w.rows && b.cols == 1, "conv1d: bias shape");
  const auto length = xv.rows;
  const auto in = xv.cols;
  const auto pad = static_cast<std::ptrdiff_t>(width / 2);
  Matrix y(length, w.rows);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t f = 0; f < w.rows; ++f) {
      double s = b[f];
      const auto wrow = w.row(f);
      for (std::size_t k = 0; k < width; ++k) {
        const auto src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(k) - pad;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(length)) continue;
        const auto xrow = xv.row(static_cast<std::size_t>(src));
        const double* wk = wrow.data() + k * in;
        for (std::size_t d = 0; d < in; ++d) s += wk[d] * xrow[d];
      }
      y(t, f) = s;
    }
  }
  Node n{Op::conv1d, std::move(y), {x.index, filters.index, bias.index}};
  n.a = width;
  return push(std::move(n));
}

Var Tape::piecewise_max_pool(Var y, std::size_t cut1, std::size_t cut2) {
  const auto& yv = value(y);
  require(cut1 <= cut2, "piecewise_max_pool: cuts out of order");
  const auto length = yv.rows;
  const auto nf = yv.cols;
  const std::size_t bounds[4] = {0, std::min(cut1 + 1, length), std::min(cut2 + 1, length), length};
  Matrix out(3 * nf, 1);
  Node n{Op::pool, {}, {y.index}};
  n.ids.assign(3 * nf, -1);
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t f = 0; f < nf; ++f) {
      double best = 0.0;
      double runner_up = -std::numeric_limits<double>::infinity();
      std::int32_t arg = -1;
      for (std::size_t t = bounds[s]; t < bounds[s + 1]; ++t) {
        if (arg < 0 || yv(t, f) > best) {
          runner_up = arg < 0 ? runner_up : best;
          best = yv(t, f);
          arg = static_cast<std::int32_t>(t);
        } else {
          runner_up = std::max(runner_up, yv(t, f));
        }
      }
      kink_margin_ = std::min(kink_margin_, best - runner_up);
      out[s * nf + f] = best;
      n.ids[s * nf + f] = arg;
    }
  }
  n.value = std::move(out);
  return push(std::move(n));
}

LstmState Tape::recurrent_step(const LstmParams& params, LstmState prev, Var x) {
  const auto hidden = value(prev.h).rows;
  const Var wx = param(params.input_weights);
  const Var wh = param(params.hidden_weights);
  const Var b = param(params.bias);
  require(value(wx).rows == 4 * hidden && value(wh).rows == 4 * hidden &&
              value(wh).cols == hidden,
          "recurrent_step: weight shapes do not match the hidden size");
  const Var z = add(affine(wx, x, b), matvec(wh, prev.h));
  const Var i = sigmoid(slice(z, 0, hidden));
  const Var f = sigmoid(slice(z, hidden, hidden));
  const Var o = sigmoid(slice(z, 2 * hidden, hidden));
  const Var g = tanh(slice(z, 3 * hidden, hidden));
  const Var c = add(mul(f, prev.c), mul(i, g));
  const Var h = mul(o, tanh(c));
  return LstmState{h, c};
}

// ---------------------------------------------------------------------------
// Backward

void Tape::backward(Var loss, ParameterStore& target, double seed) {
  if (consumed_) throw LifecycleError("backward already run on this tape");
  if (&target != store_) throw LifecycleError("backward target differs from the recording store");
  if (target.version() != version_) throw LifecycleError("stale tape: parameters changed since recording");
  if (nodes_.empty() || !loss.valid() || loss.index >= nodes_.size())
    throw LifecycleError("backward without a recorded forward pass");
  consumed_ = true;

  std::vector<Matrix> grads(loss.index + 1);
  for (std::uint32_t k = 0; k <= loss.index; ++k)
    grads[k] = Matrix(nodes_[k].value.rows, nodes_[k].value.cols);
  for (auto& g : grads[loss.index].data) g = seed;

  for (std::int64_t k = loss.index; k >= 0; --k) {
    const auto& n = nodes_[static_cast<std::size_t>(k)];
    const auto& g = grads[static_cast<std::size_t>(k)];
    bool any = false;
    for (double v : g.data) {
      if (v != 0.0) {
        any = true;
        break;
      }
    }
    if (!any) continue;
    auto in = [&](std::size_t i) -> Matrix& { return grads[n.inputs[i]]; };
    auto val = [&](std::size_t i) -> const Matrix& { return nodes_[n.inputs[i]].value; };

    switch (n.op) {
      case Op::constant:
        break;
      case Op::param: {
        auto& dst = target.grad(n.param).data;
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
        break;
      }
      case Op::lookup: {
        auto row = target.grad(n.param).row(static_cast<std::size_t>(n.ids[0]));
        for (std::size_t i = 0; i < row.size(); ++i) row[i] += g[i];
        break;
      }
      case Op::gather: {
        auto& table = target.grad(n.param);
        for (std::size_t r = 0; r < n.ids.size(); ++r) {
          auto row = table.row(static_cast<std::size_t>(n.ids[r]));
          const auto src = g.row(r);
          for (std::size_t i = 0; i < row.size(); ++i) row[i] += src[i];
        }
        break;
      }
      case Op::affine: {
        const auto& w = val(0);
        const auto& x = val(1);
        auto& gw = in(0);
        auto& gx = in(1);
        for (std::size_t i = 0; i < w.rows; ++i) {
          const double gi = g[i];
          if (gi == 0.0) continue;
          auto gwr = gw.row(i);
          const auto wr = w.row(i);
          for (std::size_t j = 0; j < w.cols; ++j) {
            gwr[j] += gi * x[j];
            gx[j] += gi * wr[j];
          }
        }
        if (n.inputs[2] != kNone) {
          auto& gb = in(2);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
        break;
      }
      case Op::matvec_t: {
        const auto& m = val(0);
        const auto& x = val(1);
        auto& gm = in(0);
        auto& gx = in(1);
        for (std::size_t i = 0; i < m.rows; ++i) {
          auto gmr = gm.row(i);
          const auto mr = m.row(i);
          double acc = 0.0;
          for (std::size_t j = 0; j < m.cols; ++j) {
            gmr[j] += x[i] * g[j];
            acc += mr[j] * g[j];
          }
          gx[i] += acc;
        }
        break;
      }
      case Op::dot: {
        const auto& a = val(0);
        const auto& b = val(1);
        auto& ga = in(0);
        auto& gb = in(1);
        for (std::size_t i = 0; i < a.size(); ++i) {
          ga[i] += g[0] * b[i];
          gb[i] += g[0] * a[i];
        }
        break;
      }
      case Op::relu: {
        const auto& x = val(0);
        auto& gx = in(0);
        for (std::size_t i = 0; i < x.size(); ++i)
          if (x[i] > 0.0) gx[i] += g[i];
        break;
      }
      case Op::tanh: {
        auto& gx = in(0);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
        break;
      }
      case Op::sigmoid: {
        auto& gx = in(0);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * n.value[i] * (1.0 - n.value[i]);
        break;
      }
      case Op::add: {
        auto& ga = in(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        auto& gb = in(1);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        break;
      }
      case Op::mul: {
        const auto& a = val(0);
        const auto& b = val(1);
        auto& ga = in(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
        auto& gb = in(1);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
        break;
      }
      case Op::scale: {
        auto& gx = in(0);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * n.factor;
        break;
      }
      case Op::sum: {
        auto& gx = in(0);
        for (auto& v : gx.data) v += g[0];
        break;
      }
      case Op::concat: {
        std::size_t off = 0;
        for (std::size_t p = 0; p < n.inputs.size(); ++p) {
          auto& gp = in(p);
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
          off += gp.size();
        }
        break;
      }
      case Op::concat_cols: {
        std::size_t off = 0;
        for (std::size_t p = 0; p < n.inputs.size(); ++p) {
          auto& gp = in(p);
          for (std::size_t r = 0; r < gp.rows; ++r)
            for (std::size_t c = 0; c < gp.cols; ++c) gp(r, c) += g(r, off + c);
          off += gp.cols;
        }
        break;
      }
      case Op::stack_rows: {
        for (std::size_t r = 0; r < n.inputs.size(); ++r) {
          auto& gp = in(r);
          const auto src = g.row(r);
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += src[i];
        }
        break;
      }
      case Op::slice: {
        auto& gx = in(0);
        for (std::size_t i = 0; i < g.size(); ++i) gx[n.a + i] += g[i];
        break;
      }
      case Op::softmax: {
        double gy = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) gy += g[i] * n.value[i];
        auto& gx = in(0);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += n.value[i] * (g[i] - gy);
        break;
      }
      case Op::log_softmax: {
        double gs = 0.0;
        for (double v : g.data) gs += v;
        auto& gx = in(0);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] - std::exp(n.value[i]) * gs;
        break;
      }
      case Op::pick: {
        in(0)[n.a] += g[0];
        break;
      }
      case Op::conv1d: {
        const auto& x = val(0);
        const auto& w = val(1);
        auto& gx = in(0);
        auto& gw = in(1);
        auto& gb = in(2);
        const auto width = n.a;
        const auto length = x.rows;
        const auto channels = x.cols;
        const auto pad = static_cast<std::ptrdiff_t>(width / 2);
        for (std::size_t t = 0; t < length; ++t) {
          for (std::size_t f = 0; f < w.rows; ++f) {
            const double gy = g(t, f);
            if (gy == 0.0) continue;
            gb[f] += gy;
            const auto wrow = w.row(f);
            auto gwrow = gw.row(f);
            for (std::size_t k = 0; k < width; ++k) {
              const auto src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(k) - pad;
              if (src < 0 || src >= static_cast<std::ptrdiff_t>(length)) continue;
              const auto xrow = x.row(static_cast<std::size_t>(src));
              auto gxrow = gx.row(static_cast<std::size_t>(src));
              for (std::size_t d = 0; d < channels; ++d) {
                gwrow[k * channels + d] += gy * xrow[d];
                gxrow[d] += gy * wrow[k * channels + d];
              }
            }
          }
        }
        break;
      }
      case Op::pool: {
        auto& gy = in(0);
        const auto nf = gy.cols;
        for (std::size_t i = 0; i < n.ids.size(); ++i) {
          if (n.ids[i] < 0) continue;
          gy(static_cast<std::size_t>(n.ids[i]), i % nf) += g[i];
        }
        break;
      }
      case Op::matvec:
        break;  // matvec is recorded as affine
    }
  }
}

}  // namespace cpl::diff
