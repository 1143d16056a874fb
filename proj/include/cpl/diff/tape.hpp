#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "cpl/diff/matrix.hpp"
#include "cpl/diff/parameter_store.hpp"

namespace cpl::diff {

// Handle to a node recorded on a Tape.
struct Var {
  std::uint32_t index = std::numeric_limits<std::uint32_t>::max();
  bool valid() const { return index != std::numeric_limits<std::uint32_t>::max(); }
};

struct LstmParams {
  ParamId input_weights;   // 4h x input
  ParamId hidden_weights;  // 4h x h
  ParamId bias;            // 4h x 1
};

struct LstmState {
  Var h;
  Var c;
};

// Reverse-mode tape. Forward ops read parameter values from the store given
// at construction; backward() accumulates into that store's gradient slots.
// Gate order inside recurrent_step is (input, forget, output, candidate).
class Tape {
 public:
  explicit Tape(const ParameterStore& store);

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;

  // Leaves.
  Var param(ParamId id);
  Var constant(Matrix value);
  Var constant_vector(std::span<const double> values);
  Var zeros(std::size_t n);
  Var embed_lookup(ParamId table, std::int32_t row);
  Var gather_rows(ParamId table, std::span<const std::int32_t> rows);

  // Linear algebra.
  Var affine(Var weights, Var x, Var bias);  // W x + b; bias may be invalid
  Var matvec(Var m, Var x);                  // M x
  Var matvec_t(Var m, Var x);                // M^T x
  Var dot(Var a, Var b);

  // Elementwise.
  Var relu(Var x);
  Var tanh(Var x);
  Var sigmoid(Var x);
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var x, double factor);
  Var sum(Var x);

  // Shape.
  Var concat(std::span<const Var> parts);       // column vectors
  Var concat_cols(std::span<const Var> parts);  // matrices with equal rows
  Var stack_rows(std::span<const Var> rows);    // vectors -> n x d
  Var slice(Var x, std::size_t offset, std::size_t length);

  // Distributions.
  Var softmax(Var logits);
  Var log_softmax(Var logits);
  Var pick(Var x, std::size_t index);
  Var categorical_log_prob(Var logits, std::size_t index) {
    return pick(log_softmax(logits), index);
  }

  // Sentence encoder ops: same-padded 1-D convolution over rows of x
  // (L x in) with filters (n_filters x width*in) and piecewise max pooling
  // over row segments [0, cut1], (cut1, cut2], (cut2, L).
  Var conv1d(Var x, Var filters, Var bias, std::size_t width);
  Var piecewise_max_pool(Var y, std::size_t cut1, std::size_t cut2);

  LstmState recurrent_step(const LstmParams& params, LstmState prev, Var x);

  const Matrix& value(Var v) const;
  double scalar(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  // Smallest distance of any relu input from 0 or of any pooled maximum from
  // the runner-up in its segment. Finite differences are only meaningful when
  // this exceeds the step size.
  double kink_margin() const { return kink_margin_; }
  const ParameterStore& store() const { return *store_; }

  // Seeds d(loss) = seed and walks the tape in reverse. Throws LifecycleError
  // if the store changed since recording or when called twice.
  void backward(Var loss, ParameterStore& target, double seed = 1.0);

 private:
  enum class Op : std::uint8_t {
    param, constant, lookup, gather, affine, matvec, matvec_t, dot, relu, tanh, sigmoid, add,
    mul, scale, sum, concat, concat_cols, stack_rows, slice, softmax, log_softmax, pick, conv1d,
    pool
  };

  struct Node {
    Op op;
    Matrix value;
    std::vector<std::uint32_t> inputs;
    ParamId param = 0;
    std::vector<std::int32_t> ids;  // lookup/gather rows, pool argmax
    std::size_t a = 0;              // op-specific integer arguments
    std::size_t b = 0;
    double factor = 0.0;
  };

  Var push(Node node);
  const Node& node(Var v) const;
  void require(bool ok, const char* what) const;

  const ParameterStore* store_;
  std::uint64_t version_;
  std::vector<Node> nodes_;
  bool consumed_ = false;
  double kink_margin_ = std::numeric_limits<double>::infinity();
};

}  // namespace cpl::diff
