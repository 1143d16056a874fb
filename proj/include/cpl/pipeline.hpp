#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cpl/config.hpp"
#include "cpl/corpus_store.hpp"
#include "cpl/extractor.hpp"
#include "cpl/graph_store.hpp"
#include "cpl/inference.hpp"
#include "cpl/reasoner.hpp"
#include "cpl/trainer.hpp"

namespace cpl {

struct Dataset {
  KnowledgeGraph kg;  // inverse edges added when configured
  std::optional<Corpus> corpus;
  std::vector<Query> train, valid, test;
  std::vector<std::filesystem::path> sources;
};

// `kg_path` is either a directory (graph.txt + *_queries.txt, or
// train.txt/valid.txt/test.txt) or a single triple file that gets split.
Dataset load_dataset(const RunConfig& config, const std::filesystem::path& kg_path,
                     const std::optional<std::filesystem::path>& corpus_path, std::uint64_t seed);

struct Models {
  std::unique_ptr<Reasoner> reasoner;
  std::unique_ptr<Extractor> extractor;  // null without a corpus

  Models clone() const;
};

Models make_models(const RunConfig& config, const Dataset& data, std::uint64_t seed);
std::uint64_t model_hash(const RunConfig& config, const Dataset& data);
void save_models(const Models& models, const std::filesystem::path& dir, std::uint64_t hash);
// Loads whichever of reasoner.ckpt / extractor.ckpt exist.
void load_models(Models& models, const std::filesystem::path& dir, std::uint64_t hash);

enum class Variant { cpl, frozen_extractor, no_adaptive, reasoner_only };
Variant parse_variant(std::string_view name);
const char* variant_name(Variant v);
TrainerConfig variant_config(const TrainerConfig& base, Variant v);

struct PretrainLog {
  TrainResult reasoner;
  ExtractorPretrainResult extractor;
};

// Each stage draws from its own child stream of `seed`.
TrainResult pretrain_reasoner_stage(const RunConfig& config, const Dataset& data, Models& models,
                                    std::uint64_t seed);
ExtractorPretrainResult pretrain_extractor_stage(const RunConfig& config, const Dataset& data,
                                                 Models& models, std::uint64_t seed);
PretrainLog pretrain_models(const RunConfig& config, const Dataset& data, Models& models,
                            std::uint64_t seed);

// subject TAB relation TAB object per line.
void write_triples(const std::filesystem::path& path, std::span<const Triple> triples,
                   const KnowledgeGraph& kg);
// Adds the listed triples as retained edges; returns how many were new.
std::size_t load_retained(KnowledgeGraph& kg, const std::filesystem::path& path);

struct TestReport {
  MetricSummary all;
  MetricSummary kg;      // queries labelled kg
  MetricSummary corpus;  // queries labelled corpus
  std::vector<QueryOutcome> outcomes;
};

TestReport evaluate_models(const RunConfig& config, const KnowledgeGraph& kg, const Models& models,
                           const Corpus* corpus, bool use_extractor, std::span<const Query> queries);

struct VariantRun {
  TrainResult train;
  TestReport test;
  std::vector<Triple> retained;
  std::size_t retained_forward = 0;  // excluding mirrored inverses
};

// Joint training from the given (pre-trained) models on a copy of the
// dataset graph; models are updated in place.
VariantRun run_variant(const RunConfig& config, const Dataset& data, Models& models, Variant v,
                       std::uint64_t seed,
                       const std::function<void(const EpochRecord&)>& on_epoch = {});

// Adds every bag's top non-NA relation scoring above `threshold` as a static
// edge (plus mirror). Returns the number of forward edges added.
std::size_t augment_two_step(KnowledgeGraph& kg, const Corpus& corpus, const Extractor& extractor,
                             double threshold);

struct TwoStepPoint {
  double threshold = 0.0;
  std::size_t edges_added = 0;
  MetricSummary valid;
};

struct TwoStepResult {
  std::vector<TwoStepPoint> grid;
  TwoStepPoint best;
  TestReport test;
};

// Static augmentation then reasoner-only training, for each threshold; the
// best one is chosen by validation MRR.
TwoStepResult run_two_step(const RunConfig& config, const Dataset& data, const Models& pretrained,
                           const std::vector<double>& thresholds, std::uint64_t seed);

// CSV helpers.
std::string metrics_csv_header();
std::string metrics_csv_row(const EpochRecord& r);
std::string report_csv(const std::map<std::uint64_t, TestReport>& by_seed, const KnowledgeGraph& kg,
                       HitsRule rule = HitsRule::strict);

std::uint64_t file_fingerprint(const std::filesystem::path& path);

}  // namespace cpl
