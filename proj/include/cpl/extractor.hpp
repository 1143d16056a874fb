#pragma once

#include <cstddef>
#include <mutex>
#include <span>
#include <unordered_map>
#include <vector>

#include "cpl/corpus_store.hpp"
#include "cpl/diff/parameter_store.hpp"
#include "cpl/diff/tape.hpp"
#include "cpl/random.hpp"
#include "cpl/reasoner.hpp"

namespace cpl {

struct ExtractorConfig {
  std::size_t word_dim = 50;
  std::size_t position_dim = 5;
  std::size_t position_window = 30;
  std::size_t filters = 230;
  std::size_t kernel_width = 3;
};

struct ExtractionAction {
  RelationId relation = 0;
  EntityId object = 0;
  EntityPair bag_key;
  double score = 0.0;   // joint probability
  std::size_t bag = 0;  // position among the subject's bags
};

struct BagEncoding {
  std::vector<std::vector<double>> attention;  // per class, over sentences
  std::vector<std::vector<double>> attended;   // per class
  std::vector<double> relation_scores;         // distribution over classes
};

enum class SuggestMode { sample, top };

// PCNN sentence encoder, selective attention over bags and the bilinear
// extraction policy. Classes are the forward relations [0, F) plus the
// no-relation class F.
class Extractor {
 public:
  Extractor(const ExtractorConfig& config, std::size_t word_count, std::size_t forward_relations);

  const ExtractorConfig& config() const { return config_; }
  diff::ParameterStore& store() { return store_; }
  const diff::ParameterStore& store() const { return store_; }
  void init(Rng& rng);  // uniform, with the policy matrix set to identity

  std::size_t class_count() const { return forward_relations_ + 1; }
  RelationId no_relation() const { return static_cast<RelationId>(forward_relations_); }
  std::size_t encoding_dim() const { return 3 * config_.filters; }

  diff::Var tape_encode_sentence(diff::Tape& tape, const Sentence& s) const;
  diff::Var tape_bag_matrix(diff::Tape& tape, const SentenceBag& bag) const;  // n x D
  diff::Var tape_attend(diff::Tape& tape, diff::Var sentences, RelationId r) const;
  // M_r . s_r + d_r for every class.
  diff::Var tape_relation_logits(diff::Tape& tape, const SentenceBag& bag) const;
  // Cross-entropy with the labelled relation as attention query.
  diff::Var tape_supervised_loss(diff::Tape& tape, const SentenceBag& bag, RelationId label) const;

  struct PolicyTable {
    std::vector<std::pair<std::size_t, RelationId>> entries;  // (bag, relation)
    diff::Var logits;
  };
  PolicyTable tape_policy(diff::Tape& tape, std::span<const SentenceBag> bags) const;
  diff::Var tape_action_log_prob(diff::Tape& tape, const Corpus& corpus, EntityId subject,
                                 RelationId relation, EntityId object) const;

  std::vector<double> encode_sentence(const Sentence& s) const;
  BagEncoding encode_bag(const SentenceBag& bag) const;
  std::vector<double> relation_scores(const SentenceBag& bag) const;
  // Joint (bag, relation) distribution for the bags of `subject`, no-relation
  // masked out. Empty when the subject has no bags.
  std::vector<ExtractionAction> extraction_policy(const Corpus& corpus, EntityId subject) const;

 private:
  ExtractorConfig config_;
  std::size_t word_count_;
  std::size_t forward_relations_;
  diff::ParameterStore store_;
  diff::ParamId words_, pos_head_, pos_tail_, conv_w_, conv_b_, queries_, out_m_, out_d_, policy_w_;
};

// k distinct edges drawn without replacement (sample) or the k most probable
// (top, ties by table order).
std::vector<Triple> suggest_edges(std::span<const ExtractionAction> policy, EntityId subject,
                                  std::size_t k, SuggestMode mode, Rng* rng);

// Per-entity extraction policies for a fixed parameter snapshot. Entries are
// recomputed after the extractor's parameters change. Safe to share between
// threads.
class PolicyCache {
 public:
  PolicyCache(const Extractor& extractor, const Corpus& corpus)
      : extractor_(&extractor), corpus_(&corpus) {}

  const std::vector<ExtractionAction>& get(EntityId subject);
  void clear();

 private:
  const Extractor* extractor_;
  const Corpus* corpus_;
  std::mutex mutex_;
  std::uint64_t version_ = ~std::uint64_t{0};
  std::unordered_map<EntityId, std::vector<ExtractionAction>> entries_;
};

Suggester make_suggester(PolicyCache& cache, std::size_t k, SuggestMode mode);

// 1 at step t iff the episode succeeded and the chosen action was suggested.
std::vector<double> assign_extractor_rewards(const Trajectory& trajectory);

}  // namespace cpl
