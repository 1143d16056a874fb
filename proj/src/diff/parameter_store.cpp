#include "cpl/diff/parameter_store.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "cpl/errors.hpp"

namespace cpl::diff {

ParamId ParameterStore::add(std::string name, std::size_t rows, std::size_t cols) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter '" + name + "'");
  const ParamId id = entries_.size();
  index_.emplace(name, id);
  entries_.push_back(Entry{std::move(name), Matrix(rows, cols), Matrix(rows, cols),
                           Matrix(rows, cols), Matrix(rows, cols)});
  return id;
}

void ParameterStore::init_uniform(Rng& rng) {
  for (ParamId id = 0; id < entries_.size(); ++id) init_uniform(id, rng);
}

void ParameterStore::init_uniform(ParamId id, Rng& rng) {
  auto& value = entries_.at(id).value;
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(value.cols, 1)));
  for (auto& x : value.data) x = rng.uniform(-bound, bound);
}

ParamId ParameterStore::id(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw LookupError("no parameter named '" + std::string(name) + "'");
  return it->second;
}

bool ParameterStore::contains(std::string_view name) const {
  return index_.contains(std::string(name));
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) e.grad.fill(0.0);
}

void ParameterStore::scale_grad(double factor) {
  for (auto& e : entries_)
    for (auto& g : e.grad.data) g *= factor;
}

double ParameterStore::grad_norm() const {
  double sum = 0.0;
  for (const auto& e : entries_)
    for (double g : e.grad.data) sum += g * g;
  return std::sqrt(sum);
}

void ParameterStore::check_finite() const {
  for (const auto& e : entries_) {
    for (double x : e.value.data)
      if (!std::isfinite(x)) throw NumericError("non-finite value in parameter '" + e.name + "'");
    for (double x : e.grad.data)
      if (!std::isfinite(x)) throw NumericError("non-finite gradient in parameter '" + e.name + "'");
  }
}

std::uint64_t ParameterStore::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& e : entries_) {
    mix(hash_name(e.name));
    for (double x : e.value.data) mix(std::bit_cast<std::uint64_t>(x));
  }
  return h;
}

void adam_update(ParameterStore& store, const AdamConfig& config) {
  if (!(config.lr > 0.0)) throw ConfigError("learning rate must be positive");
  store.check_finite();
  const auto step = store.optimizer_step() + 1;
  store.set_optimizer_step(step);
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
  for (ParamId id = 0; id < store.size(); ++id) {
    auto& w = store.value(id).data;
    auto& g = store.grad(id).data;
    auto& m = store.first_moment(id).data;
    auto& v = store.second_moment(id).data;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      w[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
      g[i] = 0.0;
    }
  }
  store.bump_version();
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'C', 'P', 'L', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void put(std::ostream& out, T value) {
  static_assert(std::is_integral_v<T>);
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((u >> (8 * i)) & 0xffU);
  out.write(bytes, sizeof(T));
}

void put_double(std::ostream& out, double v) { put(out, std::bit_cast<std::uint64_t>(v)); }

template <typename T>
T get(std::istream& in) {
  char bytes[sizeof(T)];
  if (!in.read(bytes, sizeof(T))) throw ParseError("truncated checkpoint");
  std::make_unsigned_t<T> u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    u |= static_cast<std::make_unsigned_t<T>>(static_cast<unsigned char>(bytes[i])) << (8 * i);
  return static_cast<T>(u);
}

double get_double(std::istream& in) { return std::bit_cast<double>(get<std::uint64_t>(in)); }

void write_matrix(std::ostream& out, const Matrix& m) {
  for (double x : m.data) put_double(out, x);
}

void read_matrix(std::istream& in, Matrix& m) {
  for (auto& x : m.data) x = get_double(in);
}

std::uint64_t read_header(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw ParseError("not a checkpoint file (bad magic)");
  const auto version = get<std::uint32_t>(in);
  if (version != kFormatVersion)
    throw ParseError("unsupported checkpoint version " + std::to_string(version));
  return get<std::uint64_t>(in);
}

}  // namespace

void save_checkpoint(const ParameterStore& store, const std::filesystem::path& path,
                     std::uint64_t config_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write checkpoint " + path.string());
  out.write(kMagic, 8);
  put(out, kFormatVersion);
  put(out, config_hash);
  put(out, store.optimizer_step());
  put(out, static_cast<std::uint32_t>(store.size()));
  for (ParamId id = 0; id < store.size(); ++id) {
    const auto& name = store.name(id);
    const auto& value = store.value(id);
    put(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put(out, static_cast<std::uint64_t>(value.rows));
    put(out, static_cast<std::uint64_t>(value.cols));
    write_matrix(out, value);
    write_matrix(out, store.first_moment(id));
    write_matrix(out, store.second_moment(id));
  }
}

std::uint64_t read_checkpoint_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint " + path.string());
  return read_header(in);
}

void load_checkpoint(ParameterStore& store, const std::filesystem::path& path,
                     std::uint64_t expected_config_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint " + path.string());
  const auto hash = read_header(in);
  if (hash != expected_config_hash) {
    throw ConfigError("checkpoint " + path.string() + " was written under a different config");
  }
  const auto step = get<std::uint64_t>(in);
  const auto count = get<std::uint32_t>(in);
  if (count != store.size()) throw ConfigError("checkpoint tensor count mismatch");
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = get<std::uint32_t>(in);
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw ParseError("truncated checkpoint");
    const auto id = store.id(name);
    const auto rows = get<std::uint64_t>(in);
    const auto cols = get<std::uint64_t>(in);
    auto& value = store.value(id);
    if (rows != value.rows || cols != value.cols)
      throw DimensionError("checkpoint shape mismatch for '" + name + "'");
    read_matrix(in, value);
    read_matrix(in, store.first_moment(id));
    read_matrix(in, store.second_moment(id));
  }
  store.set_optimizer_step(step);
  store.zero_grad();
  store.bump_version();
}

}  // namespace cpl::diff
