#include <algorithm>
#include <sstream>

#include "doctest.h"

#include "cpl/errors.hpp"
#include "cpl/graph_store.hpp"
#include "cpl/random.hpp"

using namespace cpl;

namespace {

KnowledgeGraph parse(const std::string& text) {
  std::istringstream in(text);
  return KnowledgeGraph::parse_triples(in, VocabMode::build);
}

KnowledgeGraph five_triples() {
  return parse(
      "a\tr\tb\n"
      "b\ts\tc\n"
      "a\ts\tc\n"
      "c\tr\td\n"
      "d\tr\ta\n");
}

Triple T(const KnowledgeGraph& kg, const char* s, const char* r, const char* o) {
  return Triple{kg.entities().at(s), kg.relations().at(r), kg.entities().at(o)};
}

}  // namespace

TEST_CASE("load_triples builds vocabularies and deduplicates") {
  SUBCASE("empty input") {
    const auto kg = parse("");
    CHECK(kg.triple_count() == 0);
    CHECK(kg.entity_count() == 0);
  }
  SUBCASE("duplicated line") {
    const auto kg = parse("x\tr\ty\nx\tr\ty\n");
    CHECK(kg.triple_count() == 1);
    CHECK(kg.entity_count() == 2);
    CHECK(kg.relation_count() == 1);
  }
  SUBCASE("malformed line reports its number") {
    try {
      parse("x\tr\ty\nbroken line\n");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    }
  }
  SUBCASE("reuse mode rejects unknown entities") {
    const auto kg = five_triples();
    std::istringstream in("a\tr\tzzz\n");
    CHECK_THROWS_AS(KnowledgeGraph::parse_triples(in, VocabMode::reuse, &kg), VocabularyError);
    std::istringstream ok("a\tr\tc\n");
    const auto sub = KnowledgeGraph::parse_triples(ok, VocabMode::reuse, &kg);
    CHECK(sub.triple_count() == 1);
    CHECK(sub.entity_count() == kg.entity_count());
  }
  SUBCASE("reserved inverse suffix is rejected at load") {
    CHECK_THROWS_AS(parse("a\tr_inv\tb\n"), VocabularyError);
  }
}

TEST_CASE("add_inverse_edges doubles triples and relations") {
  auto kg = five_triples();
  const auto relations = kg.relation_count();
  kg.add_inverse_edges();
  CHECK(kg.triple_count() == 10);
  CHECK(kg.relation_count() == 2 * relations);
  CHECK(kg.base_relation_count() == relations);
  for (RelationId r = 0; r < static_cast<RelationId>(kg.relation_count()); ++r) {
    CHECK(kg.inverse(kg.inverse(r)) == r);
  }
  const auto b = kg.entities().at("b");
  const auto a = kg.entities().at("a");
  const auto inv_r = kg.relations().at("r_inv");
  const auto edges = kg.out_edges(b);
  CHECK(std::find(edges.begin(), edges.end(), Edge{inv_r, a, Provenance::base}) != edges.end());
  CHECK_THROWS_AS(kg.add_inverse_edges(), LifecycleError);
}

TEST_CASE("inverse closure holds for every base edge") {
  Rng rng(7);
  KnowledgeGraph kg;
  for (int i = 0; i < 60; ++i) {
    kg.add_triple("e" + std::to_string(rng.below(12)), "r" + std::to_string(rng.below(3)),
                  "e" + std::to_string(rng.below(12)));
  }
  kg.add_inverse_edges();
  for (EntityId h = 0; h < static_cast<EntityId>(kg.entity_count()); ++h) {
    for (const auto& e : kg.out_edges(h)) {
      const auto back = kg.out_edges(e.target);
      CHECK(std::find(back.begin(), back.end(),
                      Edge{kg.inverse(e.relation), h, Provenance::base}) != back.end());
    }
  }
}

TEST_CASE("out_edges order and provenance") {
  auto kg = five_triples();
  const auto a = kg.entities().at("a");
  const auto e = kg.add_entity("lonely");
  CHECK(kg.out_edges(e).empty());
  CHECK_THROWS_AS(kg.out_edges(999), LookupError);

  const auto handle = kg.augment_temporary(std::vector<Triple>{T(kg, "a", "r", "d")});
  const auto edges = kg.out_edges(a, &handle);
  REQUIRE(edges.size() == 3);
  CHECK(edges[0].provenance == Provenance::base);
  CHECK(edges[1].provenance == Provenance::base);
  CHECK(edges[2].provenance == Provenance::overlay);
  CHECK(edges[0].relation <= edges[1].relation);
  CHECK(kg.out_edges(a, &handle) == edges);
}

TEST_CASE("augment and resolve episodes") {
  auto kg = five_triples();
  const auto before = kg.edge_count();
  const std::vector<Triple> suggested{T(kg, "a", "r", "d"), T(kg, "b", "r", "d"),
                                      T(kg, "c", "s", "a")};

  SUBCASE("duplicates of base edges are skipped") {
    auto h = kg.augment_temporary(std::vector<Triple>{T(kg, "a", "r", "b")});
    CHECK(h.live().empty());
    CHECK(h.skipped().size() == 1);
  }
  SUBCASE("no positives rolls back fully") {
    auto h = kg.augment_temporary(suggested);
    CHECK(kg.edge_count(&h) == before + 3);
    kg.resolve_episode(h, {});
    CHECK(kg.edge_count() == before);
    CHECK(kg.edge_count(&h) == before);
    CHECK(kg.retained_count() == 0);
  }
  SUBCASE("one positive is retained") {
    auto h = kg.augment_temporary(suggested);
    CHECK(kg.resolve_episode(h, {suggested[1]}) == 1);
    CHECK(kg.edge_count() == before + 1);
    CHECK(kg.has_retained(suggested[1]));
    CHECK_THROWS_AS(kg.resolve_episode(h, {}), LifecycleError);

    // Visible in a later episode, and a fresh suggestion of it is a no-op.
    auto later = kg.augment_temporary(std::vector<Triple>{suggested[1]});
    CHECK(later.live().empty());
    const auto edges = kg.out_edges(suggested[1].subject, &later);
    CHECK(std::find(edges.begin(), edges.end(),
                    Edge{suggested[1].relation, suggested[1].object, Provenance::overlay}) !=
          edges.end());
  }
}

TEST_CASE("mirrored overlay edges follow their origin") {
  auto kg = five_triples();
  kg.add_inverse_edges();
  const auto before = kg.edge_count();
  const auto fwd = T(kg, "a", "r", "d");
  auto h = kg.augment_temporary(std::vector<Triple>{fwd});
  REQUIRE(h.live().size() == 2);
  const Triple mirror{fwd.object, kg.inverse(fwd.relation), fwd.subject};
  CHECK(h.origin(mirror) == fwd);
  CHECK(kg.resolve_episode(h, {mirror}) == 2);
  CHECK(kg.edge_count() == before + 2);
  CHECK(kg.has_retained(fwd));
}

TEST_CASE("edge-count conservation over random episodes") {
  Rng rng(11);
  KnowledgeGraph kg;
  for (int i = 0; i < 40; ++i)
    kg.add_triple("e" + std::to_string(rng.below(10)), "r" + std::to_string(rng.below(2)),
                  "e" + std::to_string(rng.below(10)));
  for (int episode = 0; episode < 200; ++episode) {
    std::vector<Triple> edges;
    for (int k = 0; k < 4; ++k)
      edges.push_back(Triple{static_cast<EntityId>(rng.below(10)), static_cast<RelationId>(rng.below(2)),
                             static_cast<EntityId>(rng.below(10))});
    const auto before = kg.edge_count();
    auto h = kg.augment_temporary(edges);
    TripleSet positive;
    for (const auto& t : h.live())
      if (rng.bernoulli(0.3)) positive.insert(t);
    const auto retained = kg.resolve_episode(h, positive);
    CHECK(retained == positive.size());
    CHECK(kg.edge_count() == before + retained);
  }
}

TEST_CASE("split_dataset") {
  KnowledgeGraph kg;
  for (int i = 0; i < 200; ++i) {
    kg.add_triple("e" + std::to_string(i), i % 3 == 0 ? "may_treat" : "other",
                  "e" + std::to_string((i * 7 + 3) % 200));
  }
  const std::set<RelationId> eval{kg.relations().at("may_treat")};

  SUBCASE("partitions are disjoint and cover the input") {
    const auto split = split_dataset(kg, {}, eval, 55);
    TripleSet all(kg.triples().begin(), kg.triples().end());
    TripleSet seen;
    for (const auto& t : split.train.triples()) CHECK(seen.insert(t).second);
    for (const auto& t : split.valid) CHECK(seen.insert(t).second);
    for (const auto& t : split.test) CHECK(seen.insert(t).second);
    CHECK(seen == all);
    for (const auto& t : split.valid) CHECK(eval.contains(t.relation));
    for (const auto& t : split.test) CHECK(eval.contains(t.relation));
    CHECK(!split.test.empty());
  }
  SUBCASE("deterministic under seed") {
    const auto a = split_dataset(kg, {}, eval, 83);
    const auto b = split_dataset(kg, {}, eval, 83);
    CHECK(a.test == b.test);
    CHECK(a.valid == b.valid);
    CHECK(a.train.triples() == b.train.triples());
  }
  SUBCASE("10:0:0 leaves valid and test empty") {
    const auto split = split_dataset(kg, {10, 0, 0}, eval, 1);
    CHECK(split.valid.empty());
    CHECK(split.test.empty());
    CHECK(split.train.triple_count() == kg.triple_count());
  }
  SUBCASE("absent eval relation is a configuration error") {
    KnowledgeGraph other = kg;
    const auto missing = other.add_relation("never_used");
    CHECK_THROWS_AS(split_dataset(other, {}, {missing}, 1), ConfigError);
    CHECK_THROWS_AS(split_dataset(kg, {}, {}, 1), ConfigError);
  }
}

TEST_CASE("subsample_train") {
  KnowledgeGraph kg;
  for (int i = 0; i < 1000; ++i)
    kg.add_triple("h" + std::to_string(i), "r", "t" + std::to_string(i % 37));
  CHECK(subsample_train(kg, 0.2, 5).triple_count() == 200);
  const auto full = subsample_train(kg, 1.0, 5);
  CHECK(full.triple_count() == kg.triple_count());
  CHECK(full.entity_count() == kg.entity_count());
  CHECK(subsample_train(kg, 0.4, 9).triples() == subsample_train(kg, 0.4, 9).triples());
  for (double r : {0.2, 0.4, 0.7, 1.0}) {
    CHECK(subsample_train(kg, r, 55).triple_count() == static_cast<std::size_t>(std::llround(r * 1000)));
  }
  CHECK_THROWS_AS(subsample_train(kg, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(subsample_train(kg, 1.5, 1), ConfigError);
}

TEST_CASE("reference evaluation relation lists") {
  CHECK(std::size(kUmlsEvalRelations) == 8);
  CHECK(std::size(kFb60kEvalRelations) == 16);
}
