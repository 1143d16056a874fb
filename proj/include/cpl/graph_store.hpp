#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace cpl {

using EntityId = std::int32_t;
using RelationId = std::int32_t;

struct Triple {
  EntityId subject = 0;
  RelationId relation = 0;
  EntityId object = 0;

  friend auto operator<=>(const Triple&, const Triple&) = default;
};

struct TripleHash {
  std::size_t operator()(const Triple& t) const noexcept {
    std::uint64_t h = static_cast<std::uint32_t>(t.subject);
    h = h * 0x9e3779b97f4a7c15ULL ^ static_cast<std::uint32_t>(t.relation);
    h = h * 0x9e3779b97f4a7c15ULL ^ static_cast<std::uint32_t>(t.object);
    return static_cast<std::size_t>(h ^ (h >> 29));
  }
};

using TripleSet = std::set<Triple>;

enum class Provenance : std::uint8_t { base, overlay };

struct Edge {
  RelationId relation = 0;
  EntityId target = 0;
  Provenance provenance = Provenance::base;

  friend bool operator==(const Edge&, const Edge&) = default;
};

enum class VocabMode { build, reuse };

// Dense string <-> id map.
class Vocabulary {
 public:
  std::int32_t add(std::string_view name);
  std::optional<std::int32_t> find(std::string_view name) const;
  std::int32_t at(std::string_view name) const;  // throws VocabularyError
  const std::string& name(std::int32_t id) const;
  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::int32_t> index_;
};

class KnowledgeGraph;

// Episode-local overlay of corpus-suggested edges. Owned by one rollout;
// the base graph is only read while the handle is live.
class AugmentationHandle {
 public:
  std::span<const Triple> live() const { return live_; }
  std::span<const Triple> skipped() const { return skipped_; }
  bool resolved() const { return resolved_; }
  bool contains(const Triple& t) const { return origin_.contains(t); }

  // Overlay edges whose subject is e, sorted by (relation, target).
  std::span<const Edge> live_out(EntityId e) const;

  // The suggestion that introduced `t` (itself, or the forward edge when t is
  // a mirrored inverse). Throws LookupError when t is not in the handle.
  const Triple& origin(const Triple& t) const;

 private:
  friend class KnowledgeGraph;

  void insert(const Triple& t, const Triple& origin);

  const KnowledgeGraph* graph_ = nullptr;
  std::vector<Triple> live_;
  std::vector<Triple> skipped_;
  std::unordered_map<Triple, Triple, TripleHash> origin_;
  std::unordered_map<EntityId, std::vector<Edge>> by_subject_;
  bool resolved_ = false;
};

class KnowledgeGraph {
 public:
  static constexpr std::string_view kInverseSuffix = "_inv";

  KnowledgeGraph() = default;
  // Empty graph that shares the given vocabularies.
  KnowledgeGraph(Vocabulary entities, Vocabulary relations);

  // subject TAB relation TAB object per line. Under VocabMode::reuse every
  // name must already exist in `vocab_source`; under build a given
  // `vocab_source` seeds the vocabularies, which may then grow.
  static KnowledgeGraph load_triples(const std::filesystem::path& path, VocabMode mode,
                                     const KnowledgeGraph* vocab_source = nullptr);
  static KnowledgeGraph parse_triples(std::istream& in, VocabMode mode,
                                      const KnowledgeGraph* vocab_source = nullptr,
                                      std::string_view source_name = "<stream>");

  // Reads triples against this graph's vocabulary without inserting them.
  std::vector<Triple> read_triples(const std::filesystem::path& path) const;

  EntityId add_entity(std::string_view name);
  RelationId add_relation(std::string_view name);
  // Inserts a base triple; returns false for a duplicate.
  bool add_triple(const Triple& t);
  bool add_triple(std::string_view subject, std::string_view relation, std::string_view object);

  // Doubles the relation vocabulary with `<name>_inv` and mirrors every base
  // triple. Throws LifecycleError when called twice.
  void add_inverse_edges();
  bool has_inverse_edges() const { return inverse_added_; }
  // Relations that existed before inversion occupy [0, base_relation_count()).
  std::size_t base_relation_count() const;
  RelationId inverse(RelationId r) const;
  bool is_inverse(RelationId r) const;

  // When true (default) every overlay edge (h, r, t) is accompanied by its
  // mirror (t, inv(r), h) whenever inverse edges are enabled.
  void set_mirror_overlay(bool on) { mirror_overlay_ = on; }
  bool mirror_overlay() const { return mirror_overlay_; }

  // Base edges first, then overlay (retained + live handle edges), each group
  // sorted by (relation, target).
  std::vector<Edge> out_edges(EntityId e, const AugmentationHandle* handle = nullptr) const;
  std::span<const Edge> base_out_edges(EntityId e) const;
  std::span<const Edge> retained_out_edges(EntityId e) const;

  bool has_base(const Triple& t) const { return base_set_.contains(t); }
  bool has_retained(const Triple& t) const { return retained_set_.contains(t); }
  bool contains(const Triple& t) const { return has_base(t) || has_retained(t); }

  AugmentationHandle augment_temporary(std::span<const Triple> edges) const;
  void augment_temporary(AugmentationHandle& handle, std::span<const Triple> edges) const;

  // Promotes the handle's edges that appear in `positive_edges` (and their
  // mirrors) to retained status and drops the rest. Returns the number of
  // newly retained edges.
  std::size_t resolve_episode(AugmentationHandle& handle, const TripleSet& positive_edges);

  // Static augmentation used by the Two-Step baseline and by checkpoint reload
  // of retained edges.
  bool add_retained(const Triple& t);
  // Replaces the retained set (used to restore a snapshot).
  void reset_retained(std::span<const Triple> retained);

  std::size_t triple_count() const { return triples_.size(); }
  std::size_t retained_count() const { return retained_.size(); }
  std::size_t edge_count(const AugmentationHandle* handle = nullptr) const;

  const std::vector<Triple>& triples() const { return triples_; }
  const std::vector<Triple>& retained() const { return retained_; }
  const Vocabulary& entities() const { return entities_; }
  const Vocabulary& relations() const { return relations_; }
  std::size_t entity_count() const { return entities_.size(); }
  std::size_t relation_count() const { return relations_.size(); }

  void check_entity(EntityId e) const;
  void check_relation(RelationId r) const;

  std::string format(const Triple& t) const;
  void write_triples(const std::filesystem::path& path, std::span<const Triple> triples) const;

 private:
  void ensure_entity_slots();

  Vocabulary entities_;
  Vocabulary relations_;
  std::vector<Triple> triples_;
  std::unordered_set<Triple, TripleHash> base_set_;
  std::vector<std::vector<Edge>> base_adj_;
  std::vector<Triple> retained_;
  std::unordered_set<Triple, TripleHash> retained_set_;
  std::vector<std::vector<Edge>> retained_adj_;
  bool inverse_added_ = false;
  bool mirror_overlay_ = true;
  std::size_t base_relations_ = 0;
};

// ---------------------------------------------------------------------------
// Dataset partitioning

struct SplitRatios {
  double train = 8;
  double valid = 1;
  double test = 1;
};

struct DatasetSplit {
  KnowledgeGraph train;
  std::vector<Triple> valid;
  std::vector<Triple> test;
};

// Random partition by `ratios`; valid/test keep only `eval_relations` triples
// and everything else is returned to train, so the three parts still cover
// the input exactly.
DatasetSplit split_dataset(const KnowledgeGraph& kg, SplitRatios ratios,
                           const std::set<RelationId>& eval_relations, std::uint64_t seed);

// Keeps round(ratio * |train|) triples chosen uniformly; vocabulary untouched.
KnowledgeGraph subsample_train(const KnowledgeGraph& train, double ratio, std::uint64_t seed);

// Writes train.txt / valid.txt / test.txt and split.json into `dir`.
void write_split(const DatasetSplit& split, const std::filesystem::path& dir, std::uint64_t seed,
                 SplitRatios ratios);

// Evaluation relations used for the two reference datasets.
inline constexpr std::string_view kUmlsEvalRelations[] = {
    "gene_associated_with_disease", "disease_has_associated_gene", "gene_mapped_to_disease",
    "disease_mapped_to_gene",       "may_be_treated_by",           "may_treat",
    "may_be_prevented_by",          "may_prevent",
};

inline constexpr std::string_view kFb60kEvalRelations[] = {
    "people/person/nationality",
    "location/location/contains",
    "people/person/place_lived",
    "people/person/place_of_birth",
    "people/deceased_person/place_of_death",
    "people/person/ethnicity",
    "people/ethnicity/people",
    "business/person/company",
    "people/person/religion",
    "location/neighborhood/neighborhood_of",
    "business/company/founders",
    "people/person/children",
    "location/administrative_division/country",
    "location/country/administrative_divisions",
    "business/company/place_founded",
    "location/us_county/county_seat",
};

}  // namespace cpl
