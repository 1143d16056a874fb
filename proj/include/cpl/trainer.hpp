#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "cpl/corpus_store.hpp"
#include "cpl/diff/parameter_store.hpp"
#include "cpl/extractor.hpp"
#include "cpl/graph_store.hpp"
#include "cpl/inference.hpp"
#include "cpl/random.hpp"
#include "cpl/reasoner.hpp"

namespace cpl {

struct TrainerConfig {
  std::size_t b_r = 1;
  std::size_t b_e = 1;
  std::size_t e_a = 10;
  std::size_t e_m = 50;
  double lr = 0.001;
  double extractor_lr = 0.0;  // 0 = same as lr
  std::size_t batch_size = 64;
  std::size_t horizon = 3;
  std::size_t rollouts_per_query = 20;
  double gamma_reasoner = 1.0;
  double gamma_extractor = 0.0;
  double dropout_rate = 0.1;
  std::size_t k_suggestions = 5;
  double boost = 2.0;
  std::size_t reasoner_memory = 10000;
  std::size_t extractor_memory = 10000;
  std::size_t beam_width = 50;
  std::size_t pretrain_reasoner_epochs = 20;
  std::size_t pretrain_extractor_epochs = 20;
  bool freeze_extractor = false;
  bool use_extractor = true;
  bool reinforce_baseline = false;
  bool validate = true;
  bool parallel = true;
  HitsRule hits_rule = HitsRule::strict;
};

void validate_config(const TrainerConfig& config);

// Ring buffer; once full the oldest entry is overwritten.
template <typename T>
class ReplayMemory {
 public:
  explicit ReplayMemory(std::size_t capacity) : capacity_(capacity) {}

  void push(T item) {
    if (capacity_ == 0) return;
    if (items_.size() < capacity_) {
      items_.push_back(std::move(item));
    } else {
      items_[inserted_ % capacity_] = std::move(item);
    }
    ++inserted_;
  }

  // min(n, size()) distinct entries, uniformly.
  std::vector<const T*> sample(std::size_t n, Rng& rng) const {
    std::vector<std::size_t> idx(items_.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const auto m = std::min(n, idx.size());
    for (std::size_t i = 0; i < m; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
      std::swap(idx[i], idx[j]);
    }
    std::vector<const T*> out;
    out.reserve(m);
    for (std::size_t i = 0; i < m; ++i) out.push_back(&items_[idx[i]]);
    return out;
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t inserted() const { return inserted_; }
  const std::vector<T>& items() const { return items_; }

 private:
  std::size_t capacity_;
  std::vector<T> items_;
  std::uint64_t inserted_ = 0;
};

struct ExtractorRecord {
  EntityId entity = 0;
  RelationId relation = 0;
  EntityId object = 0;
  double reward = 0.0;
};

// G^t = sum_k gamma^(k-t) r^k.
std::vector<double> compute_returns(std::span<const double> rewards, double gamma);

struct PolicyTerm {
  diff::Var log_prob;
  double ret = 0.0;
};

// Backpropagates -sum(G * log pi) / normalizer into store grads. Returns false
// and touches nothing when every G is zero.
bool accumulate_policy_gradient(diff::Tape& tape, diff::ParameterStore& store,
                                std::span<const PolicyTerm> terms, double normalizer);

// accumulate_policy_gradient followed by one Adam step.
bool reinforce_update(diff::Tape& tape, diff::ParameterStore& store,
                      std::span<const PolicyTerm> terms, double normalizer,
                      const diff::AdamConfig& adam);

struct EpochRecord {
  std::size_t epoch = 0;
  bool adaptive = false;
  std::size_t rollouts = 0;
  std::size_t successes = 0;
  std::size_t suggested_on_positive = 0;  // corpus edges (suggested or retained) on successful paths
  std::size_t retained_total = 0;
  std::size_t reasoner_updates = 0;
  std::size_t extractor_updates = 0;
  MetricSummary valid;

  double success_rate() const {
    return rollouts ? static_cast<double>(successes) / static_cast<double>(rollouts) : 0.0;
  }
  double sug_edge_per_pos_path() const {
    return successes ? static_cast<double>(suggested_on_positive) / static_cast<double>(successes)
                     : 0.0;
  }
};

struct ModelSnapshot {
  std::vector<diff::Matrix> reasoner;
  std::vector<diff::Matrix> extractor;
  std::vector<Triple> retained;
};

struct TrainResult {
  std::vector<EpochRecord> epochs;
  std::size_t boosted_batches = 0;
  std::size_t best_epoch = 0;
  double best_mrr = -1.0;
};

struct Experience {
  std::vector<Trajectory> trajectories;
  std::vector<AugmentationHandle> handles;
};

struct BatchStats {
  std::size_t rollouts = 0;
  std::size_t successes = 0;
  std::size_t suggested_on_positive = 0;
  std::size_t retained = 0;
};

// Joint training loop. The graph's retained edges and both models are
// mutated in place; at the end the best validation snapshot is restored.
class Trainer {
 public:
  Trainer(const TrainerConfig& config, KnowledgeGraph& kg, const Corpus* corpus,
          Reasoner& reasoner, Extractor* extractor, std::uint64_t seed);

  bool extractor_active() const { return extractor_ != nullptr && config_.use_extractor; }

  // Rollouts for every (query, rollout) pair; parameters and graph are read only.
  Experience generate(std::span<const Query> queries, std::size_t epoch, std::size_t batch,
                      bool adaptive, bool parallel) const;
  // Serial: resolves episodes in order and fills both memories.
  BatchStats absorb(Experience& experience);

  bool update_reasoner(Rng& rng);
  bool update_extractor(Rng& rng);

  EpochRecord run_epoch(std::size_t epoch, std::span<const Query> train,
                        std::span<const Query> valid);
  TrainResult train(std::span<const Query> train, std::span<const Query> valid,
                    const std::function<void(const EpochRecord&)>& on_epoch = {});

  MetricSummary evaluate(std::span<const Query> queries) const;

  ModelSnapshot snapshot() const;
  void restore(const ModelSnapshot& s);

  const ReplayMemory<Trajectory>& reasoner_memory() const { return reasoner_memory_; }
  const ReplayMemory<ExtractorRecord>& extractor_memory() const { return extractor_memory_; }
  std::size_t boosted_batches() const { return boosted_batches_; }

 private:
  TrainerConfig config_;
  KnowledgeGraph* kg_;
  const Corpus* corpus_;
  Reasoner* reasoner_;
  Extractor* extractor_;
  Rng root_;
  std::unique_ptr<PolicyCache> cache_;
  ReplayMemory<Trajectory> reasoner_memory_;
  ReplayMemory<ExtractorRecord> extractor_memory_;
  std::size_t boosted_batches_ = 0;
};

// REINFORCE on the base graph with the extractor disabled.
TrainResult pretrain_reasoner(const TrainerConfig& config, KnowledgeGraph& kg,
                              std::span<const Query> queries, Reasoner& reasoner,
                              std::uint64_t seed);

struct ExtractorPretrainResult {
  std::vector<double> epoch_loss;
};

// Supervised cross-entropy over distant-supervision labels.
ExtractorPretrainResult pretrain_extractor(const TrainerConfig& config, const Corpus& corpus,
                                           std::span<const BagLabel> labels, Extractor& extractor,
                                           std::size_t epochs, std::uint64_t seed);

// Fraction of labels whose bag's most probable class equals the label.
double bag_label_accuracy(const Extractor& extractor, const Corpus& corpus,
                          std::span<const BagLabel> labels);

}  // namespace cpl
