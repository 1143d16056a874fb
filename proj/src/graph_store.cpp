#include "cpl/graph_store.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "cpl/errors.hpp"
#include "cpl/random.hpp"

namespace cpl {

namespace {

bool edge_less(const Edge& a, const Edge& b) {
  return a.relation != b.relation ? a.relation < b.relation : a.target < b.target;
}

void insert_sorted(std::vector<Edge>& edges, const Edge& e) {
  edges.insert(std::upper_bound(edges.begin(), edges.end(), e, edge_less), e);
}

std::string_view trim_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocabulary

std::int32_t Vocabulary::add(std::string_view name) {
  if (auto it = index_.find(std::string(name)); it != index_.end()) return it->second;
  const auto id = static_cast<std::int32_t>(names_.size());
  names_.emplace_back(name);
  index_.emplace(names_.back(), id);
  return id;
}

std::optional<std::int32_t> Vocabulary::find(std::string_view name) const {
  if (auto it = index_.find(std::string(name)); it != index_.end()) return it->second;
  return std::nullopt;
}

std::int32_t Vocabulary::at(std::string_view name) const {
  if (auto id = find(name)) return *id;
  throw VocabularyError("unknown vocabulary entry '" + std::string(name) + "'");
}

const std::string& Vocabulary::name(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= names_.size())
    throw LookupError("vocabulary id " + std::to_string(id) + " out of range");
  return names_[static_cast<std::size_t>(id)];
}

// ---------------------------------------------------------------------------
// AugmentationHandle

std::span<const Edge> AugmentationHandle::live_out(EntityId e) const {
  if (auto it = by_subject_.find(e); it != by_subject_.end()) return it->second;
  return {};
}

const Triple& AugmentationHandle::origin(const Triple& t) const {
  auto it = origin_.find(t);
  if (it == origin_.end()) throw LookupError("edge is not part of this augmentation");
  return it->second;
}

void AugmentationHandle::insert(const Triple& t, const Triple& origin) {
  live_.push_back(t);
  origin_.emplace(t, origin);
  insert_sorted(by_subject_[t.subject], Edge{t.relation, t.object, Provenance::overlay});
}

// ---------------------------------------------------------------------------
// KnowledgeGraph

KnowledgeGraph::KnowledgeGraph(Vocabulary entities, Vocabulary relations)
    : entities_(std::move(entities)), relations_(std::move(relations)) {
  base_relations_ = relations_.size();
  ensure_entity_slots();
}

KnowledgeGraph KnowledgeGraph::load_triples(const std::filesystem::path& path, VocabMode mode,
                                            const KnowledgeGraph* vocab_source) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open triple file " + path.string());
  return parse_triples(in, mode, vocab_source, path.string());
}

KnowledgeGraph KnowledgeGraph::parse_triples(std::istream& in, VocabMode mode,
                                             const KnowledgeGraph* vocab_source,
                                             std::string_view source_name) {
  KnowledgeGraph kg;
  if (mode == VocabMode::reuse) {
    if (vocab_source == nullptr) throw ConfigError("vocab_mode=reuse requires a source graph");
    kg = KnowledgeGraph(vocab_source->entities_, vocab_source->relations_);
    kg.base_relations_ = vocab_source->base_relations_;
  } else if (vocab_source != nullptr) {
    kg = KnowledgeGraph(vocab_source->entities_, vocab_source->relations_);
  }
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto view = trim_cr(line);
    if (view.empty()) continue;
    const auto tab1 = view.find('\t');
    const auto tab2 = tab1 == std::string_view::npos ? tab1 : view.find('\t', tab1 + 1);
    if (tab2 == std::string_view::npos || view.find('\t', tab2 + 1) != std::string_view::npos) {
      throw ParseError(std::string(source_name) + ":" + std::to_string(line_no) +
                       ": expected subject<TAB>relation<TAB>object");
    }
    const auto subject = view.substr(0, tab1);
    const auto relation = view.substr(tab1 + 1, tab2 - tab1 - 1);
    const auto object = view.substr(tab2 + 1);
    if (subject.empty() || relation.empty() || object.empty()) {
      throw ParseError(std::string(source_name) + ":" + std::to_string(line_no) + ": empty field");
    }
    if (mode == VocabMode::reuse) {
      try {
        kg.add_triple(Triple{kg.entities_.at(subject), kg.relations_.at(relation),
                             kg.entities_.at(object)});
      } catch (const VocabularyError& e) {
        throw VocabularyError(std::string(source_name) + ":" + std::to_string(line_no) + ": " +
                              e.what());
      }
    } else {
      if (relation.ends_with(kInverseSuffix)) {
        throw VocabularyError(std::string(source_name) + ":" + std::to_string(line_no) +
                              ": relation '" + std::string(relation) +
                              "' collides with the reserved inverse suffix");
      }
      kg.add_triple(subject, relation, object);
    }
  }
  return kg;
}

std::vector<Triple> KnowledgeGraph::read_triples(const std::filesystem::path& path) const {
  const auto loaded = load_triples(path, VocabMode::reuse, this);
  return loaded.triples_;
}

void KnowledgeGraph::ensure_entity_slots() {
  base_adj_.resize(entities_.size());
  retained_adj_.resize(entities_.size());
}

EntityId KnowledgeGraph::add_entity(std::string_view name) {
  const auto id = entities_.add(name);
  ensure_entity_slots();
  return id;
}

RelationId KnowledgeGraph::add_relation(std::string_view name) {
  if (inverse_added_ && !relations_.find(name)) {
    throw LifecycleError("cannot add relations after inverse augmentation");
  }
  const auto id = relations_.add(name);
  base_relations_ = std::max(base_relations_, relations_.size());
  return id;
}

bool KnowledgeGraph::add_triple(std::string_view subject, std::string_view relation,
                                std::string_view object) {
  const auto s = add_entity(subject);
  const auto r = add_relation(relation);
  const auto o = add_entity(object);
  return add_triple(Triple{s, r, o});
}

bool KnowledgeGraph::add_triple(const Triple& t) {
  check_entity(t.subject);
  check_entity(t.object);
  check_relation(t.relation);
  if (!base_set_.insert(t).second) return false;
  triples_.push_back(t);
  insert_sorted(base_adj_[static_cast<std::size_t>(t.subject)],
                Edge{t.relation, t.object, Provenance::base});
  if (inverse_added_) {
    const Triple mirror{t.object, inverse(t.relation), t.subject};
    if (base_set_.insert(mirror).second) {
      triples_.push_back(mirror);
      insert_sorted(base_adj_[static_cast<std::size_t>(mirror.subject)],
                    Edge{mirror.relation, mirror.object, Provenance::base});
    }
  }
  return true;
}

void KnowledgeGraph::add_inverse_edges() {
  if (inverse_added_) throw LifecycleError("inverse edges already added");
  base_relations_ = relations_.size();
  for (std::size_t r = 0; r < base_relations_; ++r) {
    const auto& name = relations_.name(static_cast<RelationId>(r));
    if (name.ends_with(kInverseSuffix)) {
      throw VocabularyError("relation '" + name + "' already carries the inverse suffix");
    }
  }
  for (std::size_t r = 0; r < base_relations_; ++r) {
    const std::string inv_name = relations_.name(static_cast<RelationId>(r)) +
                                 std::string(kInverseSuffix);
    if (relations_.find(inv_name)) throw VocabularyError("inverse name collision: " + inv_name);
    relations_.add(inv_name);
  }
  inverse_added_ = true;
  const auto original = triples_;
  for (const auto& t : original) {
    const Triple mirror{t.object, inverse(t.relation), t.subject};
    if (base_set_.insert(mirror).second) {
      triples_.push_back(mirror);
      insert_sorted(base_adj_[static_cast<std::size_t>(mirror.subject)],
                    Edge{mirror.relation, mirror.object, Provenance::base});
    }
  }
  const auto retained = retained_;
  for (const auto& t : retained) add_retained(Triple{t.object, inverse(t.relation), t.subject});
}

std::size_t KnowledgeGraph::base_relation_count() const {
  return inverse_added_ ? base_relations_ : relations_.size();
}

RelationId KnowledgeGraph::inverse(RelationId r) const {
  check_relation(r);
  if (!inverse_added_) throw LifecycleError("graph has no inverse relations");
  const auto base = static_cast<RelationId>(base_relations_);
  return r < base ? r + base : r - base;
}

bool KnowledgeGraph::is_inverse(RelationId r) const {
  return inverse_added_ && r >= static_cast<RelationId>(base_relations_);
}

void KnowledgeGraph::check_entity(EntityId e) const {
  if (e < 0 || static_cast<std::size_t>(e) >= entities_.size())
    throw LookupError("entity id " + std::to_string(e) + " out of range");
}

void KnowledgeGraph::check_relation(RelationId r) const {
  if (r < 0 || static_cast<std::size_t>(r) >= relations_.size())
    throw LookupError("relation id " + std::to_string(r) + " out of range");
}

std::span<const Edge> KnowledgeGraph::base_out_edges(EntityId e) const {
  check_entity(e);
  return base_adj_[static_cast<std::size_t>(e)];
}

std::span<const Edge> KnowledgeGraph::retained_out_edges(EntityId e) const {
  check_entity(e);
  return retained_adj_[static_cast<std::size_t>(e)];
}

std::vector<Edge> KnowledgeGraph::out_edges(EntityId e, const AugmentationHandle* handle) const {
  const auto base = base_out_edges(e);
  std::vector<Edge> out(base.begin(), base.end());
  std::vector<Edge> overlay(retained_adj_[static_cast<std::size_t>(e)]);
  if (handle != nullptr) {
    if (handle->graph_ != this) throw LifecycleError("augmentation handle belongs to another graph");
    const auto live = handle->live_out(e);
    overlay.insert(overlay.end(), live.begin(), live.end());
    std::sort(overlay.begin(), overlay.end(), edge_less);
  }
  out.insert(out.end(), overlay.begin(), overlay.end());
  return out;
}

AugmentationHandle KnowledgeGraph::augment_temporary(std::span<const Triple> edges) const {
  AugmentationHandle handle;
  handle.graph_ = this;
  augment_temporary(handle, edges);
  return handle;
}

void KnowledgeGraph::augment_temporary(AugmentationHandle& handle,
                                       std::span<const Triple> edges) const {
  if (handle.graph_ == nullptr) handle.graph_ = this;
  if (handle.graph_ != this) throw LifecycleError("augmentation handle belongs to another graph");
  if (handle.resolved_) throw LifecycleError("augmentation handle already resolved");
  for (const auto& t : edges) {
    check_entity(t.subject);
    check_entity(t.object);
    check_relation(t.relation);
    if (contains(t)) {
      handle.skipped_.push_back(t);
      continue;
    }
    if (handle.contains(t)) continue;
    handle.insert(t, t);
    if (inverse_added_ && mirror_overlay_) {
      const Triple mirror{t.object, inverse(t.relation), t.subject};
      if (!contains(mirror) && !handle.contains(mirror)) handle.insert(mirror, t);
    }
  }
}

std::size_t KnowledgeGraph::resolve_episode(AugmentationHandle& handle,
                                            const TripleSet& positive_edges) {
  if (handle.graph_ != nullptr && handle.graph_ != this)
    throw LifecycleError("augmentation handle belongs to another graph");
  if (handle.resolved_) throw LifecycleError("augmentation handle already resolved");
  handle.resolved_ = true;
  std::size_t added = 0;
  TripleSet keep;
  for (const auto& p : positive_edges) {
    if (!handle.contains(p)) continue;
    const auto& origin = handle.origin(p);
    keep.insert(origin);
    if (inverse_added_ && mirror_overlay_) {
      const Triple mirror{origin.object, inverse(origin.relation), origin.subject};
      if (handle.contains(mirror)) keep.insert(mirror);
    }
  }
  for (const auto& t : keep) added += add_retained(t) ? 1 : 0;
  handle.live_.clear();
  handle.by_subject_.clear();
  handle.origin_.clear();
  return added;
}

bool KnowledgeGraph::add_retained(const Triple& t) {
  check_entity(t.subject);
  check_entity(t.object);
  check_relation(t.relation);
  if (contains(t)) return false;
  retained_set_.insert(t);
  retained_.push_back(t);
  insert_sorted(retained_adj_[static_cast<std::size_t>(t.subject)],
                Edge{t.relation, t.object, Provenance::overlay});
  return true;
}

void KnowledgeGraph::reset_retained(std::span<const Triple> retained) {
  retained_.clear();
  retained_set_.clear();
  for (auto& adj : retained_adj_) adj.clear();
  for (const auto& t : retained) add_retained(t);
}

std::size_t KnowledgeGraph::edge_count(const AugmentationHandle* handle) const {
  std::size_t n = triples_.size() + retained_.size();
  if (handle != nullptr && !handle->resolved_) n += handle->live_.size();
  return n;
}

std::string KnowledgeGraph::format(const Triple& t) const {
  return entities_.name(t.subject) + " -" + relations_.name(t.relation) + "-> " +
         entities_.name(t.object);
}

void KnowledgeGraph::write_triples(const std::filesystem::path& path,
                                   std::span<const Triple> triples) const {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path.string());
  for (const auto& t : triples) {
    out << entities_.name(t.subject) << '\t' << relations_.name(t.relation) << '\t'
        << entities_.name(t.object) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Splits

DatasetSplit split_dataset(const KnowledgeGraph& kg, SplitRatios ratios,
                           const std::set<RelationId>& eval_relations, std::uint64_t seed) {
  if (ratios.train < 0 || ratios.valid < 0 || ratios.test < 0 ||
      ratios.train + ratios.valid + ratios.test <= 0) {
    throw ConfigError("split ratios must be non-negative with a positive sum");
  }
  if (eval_relations.empty()) throw ConfigError("eval_relations must be nonempty");
  if (kg.has_inverse_edges()) throw ConfigError("split the graph before adding inverse edges");
  std::set<RelationId> present;
  for (const auto& t : kg.triples()) present.insert(t.relation);
  for (auto r : eval_relations) {
    if (!present.contains(r)) {
      throw ConfigError("eval relation '" +
                        (r >= 0 && static_cast<std::size_t>(r) < kg.relation_count()
                             ? kg.relations().name(r)
                             : std::to_string(r)) +
                        "' does not occur in the graph");
    }
  }

  std::vector<Triple> order = kg.triples();
  Rng rng(mix64(seed ^ hash_name("split")));
  rng.shuffle(order.begin(), order.end());

  const double total = ratios.train + ratios.valid + ratios.test;
  const auto n = order.size();
  const auto n_valid = static_cast<std::size_t>(std::llround(n * ratios.valid / total));
  const auto n_test =
      std::min(n - n_valid, static_cast<std::size_t>(std::llround(n * ratios.test / total)));
  const auto n_train = n - n_valid - n_test;

  DatasetSplit split{KnowledgeGraph(kg.entities(), kg.relations()), {}, {}};
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = order[i];
    if (i < n_train) {
      split.train.add_triple(t);
    } else if (!eval_relations.contains(t.relation)) {
      split.train.add_triple(t);
    } else if (i < n_train + n_valid) {
      split.valid.push_back(t);
    } else {
      split.test.push_back(t);
    }
  }
  return split;
}

KnowledgeGraph subsample_train(const KnowledgeGraph& train, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("subsample ratio must be in (0, 1]");
  if (train.has_inverse_edges()) throw ConfigError("subsample before adding inverse edges");
  std::vector<Triple> order = train.triples();
  Rng rng(mix64(seed ^ hash_name("subsample")));
  rng.shuffle(order.begin(), order.end());
  const auto keep = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(order.size())));
  order.resize(std::min(keep, order.size()));
  std::sort(order.begin(), order.end());
  KnowledgeGraph out(train.entities(), train.relations());
  for (const auto& t : order) out.add_triple(t);
  return out;
}

void write_split(const DatasetSplit& split, const std::filesystem::path& dir, std::uint64_t seed,
                 SplitRatios ratios) {
  std::filesystem::create_directories(dir);
  split.train.write_triples(dir / "train.txt", split.train.triples());
  split.train.write_triples(dir / "valid.txt", split.valid);
  split.train.write_triples(dir / "test.txt", split.test);
  nlohmann::json meta{{"seed", seed},
                      {"ratios", {ratios.train, ratios.valid, ratios.test}},
                      {"train", split.train.triple_count()},
                      {"valid", split.valid.size()},
                      {"test", split.test.size()}};
  std::ofstream(dir / "split.json") << meta.dump(2) << '\n';
}

}  // namespace cpl
