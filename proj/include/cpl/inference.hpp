#pragma once

#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cpl/corpus_store.hpp"
#include "cpl/extractor.hpp"
#include "cpl/graph_store.hpp"
#include "cpl/reasoner.hpp"

namespace cpl {

inline constexpr double kUnranked = std::numeric_limits<double>::infinity();

// strict counts rank < K, inclusive counts rank <= K.
enum class HitsRule { strict, inclusive };

struct Query {
  Triple triple;
  std::string label;  // "kg", "corpus" or empty
};

// subject TAB relation TAB object [TAB label] per line.
std::vector<Query> load_queries(const std::filesystem::path& path, const KnowledgeGraph& kg);
void write_queries(const std::filesystem::path& path, std::span<const Query> queries,
                   const KnowledgeGraph& kg);

struct BeamEntry {
  std::vector<Action> path;
  double log_prob = 0.0;
  ReasonerState state;
  AugmentationHandle handle;
};

struct BeamOptions {
  std::size_t width = 50;
  std::size_t horizon = 3;
};

// Final beam sorted by log-prob, ties broken by the path's (relation, entity)
// sequence. Suggestions come from `suggester` at every frontier entity and
// live only in the entries' own handles.
std::vector<BeamEntry> beam_search(const Triple& query, const KnowledgeGraph& kg,
                                   const Reasoner& reasoner, const Suggester& suggester,
                                   const BeamOptions& options);

struct RankResult {
  Triple query;
  std::vector<std::pair<EntityId, double>> candidates;  // (entity, max path log-prob)
  double rank = kUnranked;
};

RankResult rank_answers(const Triple& query, std::span<const BeamEntry> beam);

double hits_at_k(std::span<const double> ranks, std::size_t k, HitsRule rule = HitsRule::strict);
double mrr(std::span<const double> ranks);

struct MetricSummary {
  double hits1 = 0.0;
  double hits5 = 0.0;
  double hits10 = 0.0;
  double mrr = 0.0;
  std::size_t count = 0;
};

MetricSummary summarize(std::span<const double> ranks, HitsRule rule = HitsRule::strict);

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  // population
};

std::map<std::string, MeanStd> aggregate_seeds(std::span<const std::map<std::string, double>> runs);
std::map<std::string, double> to_map(const MetricSummary& m);

struct EvalOptions {
  BeamOptions beam;
  std::size_t k_suggestions = 5;
  bool parallel = true;
  std::size_t report_paths = 0;  // top paths kept per query
};

struct QueryOutcome {
  Query query;
  double rank = kUnranked;
  std::vector<BeamEntry> top_paths;
};

// Ranks every query. The graph is only read.
std::vector<QueryOutcome> evaluate_queries(std::span<const Query> queries,
                                           const KnowledgeGraph& kg, const Reasoner& reasoner,
                                           const Extractor* extractor, const Corpus* corpus,
                                           const EvalOptions& options);

std::vector<double> ranks_of(std::span<const QueryOutcome> outcomes,
                             const std::string& label = "");

// `entity -relation-> entity` chains with provenance tags and, for suggested
// edges, a supporting sentence.
std::string path_report(std::span<const QueryOutcome> outcomes, const KnowledgeGraph& kg,
                        const Reasoner& reasoner, const Corpus* corpus);

}  // namespace cpl
