#include <filesystem>

#include "doctest.h"

#include "cpl/errors.hpp"
#include "cpl/synthetic.hpp"

using namespace cpl;

namespace {

SyntheticSpec small() {
  SyntheticSpec s;
  s.entities = 80;
  return s;
}

std::size_t count_label(const SyntheticDataset& d, const std::string& label) {
  std::size_t n = 0;
  for (const auto* set : {&d.train, &d.valid, &d.test})
    for (const auto& q : *set) n += q.label == label;
  return n;
}

}  // namespace

TEST_CASE("every emitted query is verified") {
  for (std::uint64_t seed : {1, 55, 83, 5583}) {
    const auto d = generate_synthetic(small(), seed);
    CHECK(verify_synthetic(d, 3));
    CHECK(count_label(d, "kg") > 0);
    CHECK(count_label(d, "corpus") > 0);
  }
  const auto full = generate_synthetic(SyntheticSpec{}, 55);
  CHECK(full.kg.entity_count() == 200);
  CHECK(verify_synthetic(full, 3));
}

TEST_CASE("corpus fraction moves bridges") {
  auto spec = small();
  spec.corpus_fraction = 0.5;
  const auto d = generate_synthetic(spec, 7);
  CHECK(d.moved_bridges == d.bridges / 2);
  spec.corpus_fraction = 0.0;
  const auto none = generate_synthetic(spec, 7);
  CHECK(none.moved_bridges == 0);
  CHECK(count_label(none, "corpus") == 0);
}

TEST_CASE("corpus queries need the text") {
  const auto d = generate_synthetic(small(), 3);
  for (const auto& q : d.test) {
    if (q.label != "corpus") continue;
    CHECK(shortest_path_hops(d.kg, {}, q.triple.subject, q.triple.object, 3, &q.triple) < 0);
    CHECK(shortest_path_hops(d.kg, d.corpus_facts, q.triple.subject, q.triple.object, 3, &q.triple) > 0);
  }
}

TEST_CASE("infeasible pattern") {
  auto spec = small();
  spec.pattern_hops = 4;
  spec.horizon = 3;
  CHECK_THROWS_AS(generate_synthetic(spec, 1), ConfigError);
}

TEST_CASE("generation is deterministic and writes its files") {
  const auto a = generate_synthetic(small(), 11);
  const auto b = generate_synthetic(small(), 11);
  CHECK(a.kg.triples() == b.kg.triples());
  CHECK(a.corpus_lines == b.corpus_lines);
  const auto dir = std::filesystem::temp_directory_path() / "cpl_test_synthetic";
  std::filesystem::remove_all(dir);
  write_synthetic(a, small(), 11, dir);
  for (const char* f : {"graph.txt", "entities.txt", "relations.txt", "corpus.jsonl",
                        "corpus_facts.txt", "train_queries.txt", "valid_queries.txt",
                        "test_queries.txt", "synthetic.json"})
    CHECK(std::filesystem::exists(dir / f));
  std::filesystem::remove_all(dir);
}
