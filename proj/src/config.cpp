#include "cpl/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "cpl/errors.hpp"
#include "cpl/random.hpp"

namespace cpl {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string> split_list(std::string_view v) {
  std::vector<std::string> out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    const auto item = trim(v.substr(0, comma));
    if (!item.empty()) out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  return out;
}

std::string format_double(double x) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return {buf, r.ptr};
}

void parse_into(std::size_t& out, std::string_view key, std::string_view v) {
  std::size_t x = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("key '" + std::string(key) + "' expects a non-negative integer, got '" + std::string(v) + "'");
  out = x;
}

void parse_into(double& out, std::string_view key, std::string_view v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(std::string(v), &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    out = x;
  } catch (const std::exception&) {
    throw ConfigError("key '" + std::string(key) + "' expects a number, got '" + std::string(v) + "'");
  }
}

void parse_into(bool& out, std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") out = true;
  else if (v == "false" || v == "0") out = false;
  else throw ConfigError("key '" + std::string(key) + "' expects true or false");
}

void parse_into(HitsRule& out, std::string_view key, std::string_view v) {
  if (v == "strict") out = HitsRule::strict;
  else if (v == "inclusive") out = HitsRule::inclusive;
  else throw ConfigError("key '" + std::string(key) + "' expects strict or inclusive");
}

void parse_into(std::vector<std::string>& out, std::string_view, std::string_view v) {
  out = split_list(v);
}

void parse_into(std::vector<double>& out, std::string_view key, std::string_view v) {
  out.clear();
  for (const auto& item : split_list(v)) {
    double x = 0;
    parse_into(x, key, item);
    out.push_back(x);
  }
}

std::string show(std::size_t x) { return std::to_string(x); }
std::string show(double x) { return format_double(x); }
std::string show(bool x) { return x ? "true" : "false"; }
std::string show(HitsRule r) { return r == HitsRule::strict ? "strict" : "inclusive"; }
std::string show(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
  return s;
}
std::string show(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
  return s;
}

struct Field {
  bool architecture;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Access>
Field field(bool arch, std::string_view key, Access access) {
  return Field{arch,
               [access, key](RunConfig& c, std::string_view v) { parse_into(access(c), key, v); },
               [access](const RunConfig& c) { return show(access(const_cast<RunConfig&>(c))); }};
}

#define CPL_FIELD(arch, key, member) \
  {key, field(arch, key, [](RunConfig& c) -> auto& { return c.member; })}

const std::map<std::string, Field, std::less<>>& registry() {
  static const std::map<std::string, Field, std::less<>> fields{
      CPL_FIELD(true, "reasoner.embed_dim", reasoner.embed_dim),
      CPL_FIELD(true, "reasoner.hidden_dim", reasoner.hidden_dim),
      CPL_FIELD(true, "reasoner.mlp_dim", reasoner.mlp_dim),
      CPL_FIELD(false, "reasoner.max_actions", reasoner.max_actions),
      CPL_FIELD(true, "extractor.word_dim", extractor.word_dim),
      CPL_FIELD(true, "extractor.position_dim", extractor.position_dim),
      CPL_FIELD(true, "extractor.position_window", extractor.position_window),
      CPL_FIELD(true, "extractor.filters", extractor.filters),
      CPL_FIELD(true, "extractor.kernel_width", extractor.kernel_width),
      CPL_FIELD(false, "corpus.max_sentence_length", corpus.max_sentence_length),
      CPL_FIELD(false, "train.b_r", trainer.b_r),
      CPL_FIELD(false, "train.b_e", trainer.b_e),
      CPL_FIELD(false, "train.e_a", trainer.e_a),
      CPL_FIELD(false, "train.e_m", trainer.e_m),
      CPL_FIELD(false, "train.lr", trainer.lr),
      CPL_FIELD(false, "train.extractor_lr", trainer.extractor_lr),
      CPL_FIELD(false, "train.batch_size", trainer.batch_size),
      CPL_FIELD(false, "train.horizon", trainer.horizon),
      CPL_FIELD(false, "train.rollouts_per_query", trainer.rollouts_per_query),
      CPL_FIELD(false, "train.gamma_reasoner", trainer.gamma_reasoner),
      CPL_FIELD(false, "train.gamma_extractor", trainer.gamma_extractor),
      CPL_FIELD(false, "train.dropout_rate", trainer.dropout_rate),
      CPL_FIELD(false, "train.k_suggestions", trainer.k_suggestions),
      CPL_FIELD(false, "train.boost", trainer.boost),
      CPL_FIELD(false, "train.reasoner_memory", trainer.reasoner_memory),
      CPL_FIELD(false, "train.extractor_memory", trainer.extractor_memory),
      CPL_FIELD(false, "train.pretrain_reasoner_epochs", trainer.pretrain_reasoner_epochs),
      CPL_FIELD(false, "train.pretrain_extractor_epochs", trainer.pretrain_extractor_epochs),
      CPL_FIELD(false, "train.freeze_extractor", trainer.freeze_extractor),
      CPL_FIELD(false, "train.use_extractor", trainer.use_extractor),
      CPL_FIELD(false, "train.reinforce_baseline", trainer.reinforce_baseline),
      CPL_FIELD(false, "train.parallel", trainer.parallel),
      CPL_FIELD(false, "eval.beam_width", trainer.beam_width),
      CPL_FIELD(false, "eval.hits_rule", trainer.hits_rule),
      CPL_FIELD(false, "eval.report_paths", report_paths),
      CPL_FIELD(true, "data.add_inverse", add_inverse),
      CPL_FIELD(false, "data.eval_relations", eval_relations),
      CPL_FIELD(false, "data.split_train", split_train),
      CPL_FIELD(false, "data.split_valid", split_valid),
      CPL_FIELD(false, "data.split_test", split_test),
      CPL_FIELD(false, "data.train_ratio", train_ratio),
      CPL_FIELD(false, "baseline.thresholds", baseline_thresholds),
      CPL_FIELD(false, "synthetic.entities", synthetic.entities),
      CPL_FIELD(false, "synthetic.horizon", synthetic.horizon),
      CPL_FIELD(false, "synthetic.pattern_hops", synthetic.pattern_hops),
      CPL_FIELD(false, "synthetic.corpus_fraction", synthetic.corpus_fraction),
      CPL_FIELD(false, "synthetic.noise_prob", synthetic.noise_prob),
      CPL_FIELD(false, "synthetic.d_noise_edges", synthetic.d_noise_edges),
      CPL_FIELD(false, "synthetic.corpus_noise_prob", synthetic.corpus_noise_prob),
      CPL_FIELD(false, "synthetic.sentences_per_fact", synthetic.sentences_per_fact),
      CPL_FIELD(false, "synthetic.r2_sentence_prob", synthetic.r2_sentence_prob),
      CPL_FIELD(false, "synthetic.distractors_per_entity", synthetic.distractors_per_entity),
      CPL_FIELD(false, "synthetic.valid_fraction", synthetic.valid_fraction),
      CPL_FIELD(false, "synthetic.test_fraction", synthetic.test_fraction),
  };
  return fields;
}

#undef CPL_FIELD

}  // namespace

void apply_setting(RunConfig& config, std::string_view key, std::string_view value) {
  const auto& reg = registry();
  auto it = reg.find(key);
  if (it == reg.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  it->second.set(config, trim(value));
}

RunConfig parse_config(std::string_view text, RunConfig base) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    apply_setting(base, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  validate_config(base.trainer);
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string dump_config(const RunConfig& config) {
  std::string out;
  for (const auto& [key, f] : registry()) out += key + " = " + f.get(config) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [key, _] : registry()) keys.push_back(key);
  return keys;
}

std::uint64_t architecture_hash(const RunConfig& config, std::size_t entities,
                                std::size_t relations, std::size_t words) {
  std::string s;
  for (const auto& [key, f] : registry())
    if (f.architecture) s += key + "=" + f.get(config) + "\n";
  s += "entities=" + std::to_string(entities) + "\nrelations=" + std::to_string(relations) +
       "\nwords=" + std::to_string(words) + "\n";
  return hash_name(s);
}

}  // namespace cpl
