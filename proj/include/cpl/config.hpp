#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cpl/corpus_store.hpp"
#include "cpl/extractor.hpp"
#include "cpl/inference.hpp"
#include "cpl/reasoner.hpp"
#include "cpl/synthetic.hpp"
#include "cpl/trainer.hpp"

namespace cpl {

struct RunConfig {
  ReasonerConfig reasoner;
  ExtractorConfig extractor;
  TrainerConfig trainer;
  SyntheticSpec synthetic;
  CorpusOptions corpus;
  bool add_inverse = true;
  std::vector<std::string> eval_relations;  // empty = every relation
  double split_train = 8, split_valid = 1, split_test = 1;
  double train_ratio = 1.0;
  std::size_t report_paths = 5;
  std::vector<double> baseline_thresholds{0.0, 0.25, 0.5, 0.75, 0.9};
};

// Flat `key = value` text; '#' starts a comment. Unknown keys and malformed
// values throw ConfigError.
RunConfig parse_config(std::string_view text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
void apply_setting(RunConfig& config, std::string_view key, std::string_view value);

// Every key with its effective value, sorted by key.
std::string dump_config(const RunConfig& config);
std::vector<std::string> config_keys();

// Hash of the architecture keys and the vocabulary sizes the models are
// built for; written into checkpoint headers.
std::uint64_t architecture_hash(const RunConfig& config, std::size_t entities,
                                std::size_t relations, std::size_t words);

}  // namespace cpl
