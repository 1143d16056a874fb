#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cpl/diff/matrix.hpp"
#include "cpl/random.hpp"

namespace cpl::diff {

using ParamId = std::size_t;

// Named differentiable tensors with gradient slots and Adam moments.
class ParameterStore {
 public:
  ParamId add(std::string name, std::size_t rows, std::size_t cols);

  // Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], fan_in = cols.
  void init_uniform(Rng& rng);
  void init_uniform(ParamId id, Rng& rng);

  ParamId id(std::string_view name) const;
  bool contains(std::string_view name) const;
  const std::string& name(ParamId id) const { return entries_.at(id).name; }
  std::size_t size() const { return entries_.size(); }

  Matrix& value(ParamId id) { return entries_.at(id).value; }
  const Matrix& value(ParamId id) const { return entries_.at(id).value; }
  Matrix& grad(ParamId id) { return entries_.at(id).grad; }
  const Matrix& grad(ParamId id) const { return entries_.at(id).grad; }
  Matrix& first_moment(ParamId id) { return entries_.at(id).m; }
  Matrix& second_moment(ParamId id) { return entries_.at(id).v; }
  const Matrix& first_moment(ParamId id) const { return entries_.at(id).m; }
  const Matrix& second_moment(ParamId id) const { return entries_.at(id).v; }

  std::uint64_t optimizer_step() const { return step_; }
  void set_optimizer_step(std::uint64_t s) { step_ = s; }

  // Incremented by every value mutation made through the optimizer; tapes
  // recorded against an older version refuse to backpropagate.
  std::uint64_t version() const { return version_; }
  void bump_version() { ++version_; }

  void zero_grad();
  void scale_grad(double factor);
  double grad_norm() const;
  void check_finite() const;  // throws NumericError
  std::uint64_t fingerprint() const;

 private:
  struct Entry {
    std::string name;
    Matrix value;
    Matrix grad;
    Matrix m;
    Matrix v;
  };

  std::vector<Entry> entries_;
  std::unordered_map<std::string, ParamId> index_;
  std::uint64_t step_ = 0;
  std::uint64_t version_ = 0;
};

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam step over every tensor, then grads are zeroed.
void adam_update(ParameterStore& store, const AdamConfig& config);

// Binary checkpoint; layout documented in docs/checkpoint_format.md.
void save_checkpoint(const ParameterStore& store, const std::filesystem::path& path,
                     std::uint64_t config_hash);
// Loads values and optimizer state into a store with identical tensor names
// and shapes. Throws ConfigError when the header hash differs.
void load_checkpoint(ParameterStore& store, const std::filesystem::path& path,
                     std::uint64_t expected_config_hash);
std::uint64_t read_checkpoint_hash(const std::filesystem::path& path);

}  // namespace cpl::diff
