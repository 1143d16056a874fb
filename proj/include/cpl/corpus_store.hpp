#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cpl/graph_store.hpp"

namespace cpl {

using TokenId = std::int32_t;
using EntityPair = std::pair<EntityId, EntityId>;

struct Sentence {
  std::vector<TokenId> tokens;
  std::int32_t head_pos = 0;
  std::int32_t tail_pos = 0;
  EntityPair pair;
  std::string text;  // original whitespace-tokenized sentence, for path reports
};

struct SentenceBag {
  EntityPair pair;
  std::vector<Sentence> sentences;
};

struct CorpusOptions {
  std::size_t max_sentence_length = 120;
};

class Corpus {
 public:
  static constexpr TokenId kUnknownToken = 0;

  // JSON-lines records {sentence, head, tail, head_pos, tail_pos}. Entities
  // must exist in `kg`. When `vocab_source` is given its word vocabulary is
  // reused (unseen words map to the unknown token).
  static Corpus load(const std::filesystem::path& path, const KnowledgeGraph& kg,
                     CorpusOptions options = {}, const Corpus* vocab_source = nullptr);
  static Corpus parse(std::istream& in, const KnowledgeGraph& kg, CorpusOptions options = {},
                      const Corpus* vocab_source = nullptr, std::string_view source_name = "<stream>");

  // Bags with pair.first == e, sorted by object entity.
  std::span<const SentenceBag> bags_for_subject(EntityId e) const;
  const SentenceBag* find_bag(EntityPair pair) const;

  std::span<const SentenceBag> bags() const { return bags_; }
  std::size_t bag_count() const { return bags_.size(); }
  std::size_t sentence_count() const { return sentence_count_; }
  const Vocabulary& words() const { return words_; }
  std::size_t word_count() const { return words_.size(); }

 private:
  void finalize(std::size_t entity_count);

  std::vector<SentenceBag> bags_;
  std::vector<std::pair<std::size_t, std::size_t>> subject_index_;  // [begin, end) into bags_
  Vocabulary words_;
  std::size_t sentence_count_ = 0;
};

struct BagLabel {
  std::size_t bag = 0;  // index into Corpus::bags()
  RelationId relation = 0;
};

// The no-relation class sits right after the forward relations.
inline RelationId no_relation_id(const KnowledgeGraph& kg) {
  return static_cast<RelationId>(kg.base_relation_count());
}

// One label per forward relation r with (h, r, t) in kg; unmatched bags get
// the no-relation label.
std::vector<BagLabel> distant_supervision_labels(const Corpus& corpus, const KnowledgeGraph& kg);

}  // namespace cpl
