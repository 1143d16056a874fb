#include <cmath>
#include <map>
#include <sstream>

#include "doctest.h"

#include "cpl/errors.hpp"
#include "cpl/extractor.hpp"
#include "cpl/graph_store.hpp"

using namespace cpl;

namespace {

struct Fixture {
  KnowledgeGraph kg;
  Corpus corpus;
};

Fixture make_fixture() {
  std::istringstream g(
      "paris\tcapital_of\tfrance\n"
      "lyon\tin\tfrance\n"
      "paris\tnear\tlyon\n");
  auto kg = KnowledgeGraph::parse_triples(g, VocabMode::build);
  kg.add_entity("rome");
  std::istringstream c(
      R"({"sentence": "paris is the capital of france", "head": "paris", "tail": "france", "head_pos": 0, "tail_pos": 5}
{"sentence": "paris is the capital of france", "head": "paris", "tail": "france", "head_pos": 0, "tail_pos": 5}
{"sentence": "paris and rome are old", "head": "paris", "tail": "rome", "head_pos": 0, "tail_pos": 2}
{"sentence": "lyon sits in france", "head": "lyon", "tail": "france", "head_pos": 0, "tail_pos": 3}
{"sentence": "lyon rome", "head": "lyon", "tail": "rome", "head_pos": 0, "tail_pos": 1}
)");
  auto corpus = Corpus::parse(c, kg);
  return {std::move(kg), std::move(corpus)};
}

Extractor make_extractor(const Fixture& f, std::size_t relations, std::uint64_t seed = 4) {
  Extractor ex(ExtractorConfig{6, 2, 4, 5, 3}, f.corpus.word_count(), relations);
  Rng rng(seed);
  ex.init(rng);
  return ex;
}

EntityId id(const Fixture& f, const char* name) { return f.kg.entities().at(name); }

}  // namespace

TEST_CASE("encode_sentence") {
  const auto f = make_fixture();
  const auto ex = make_extractor(f, f.kg.relation_count());
  const auto* bag = f.corpus.find_bag({id(f, "paris"), id(f, "france")});
  REQUIRE(bag != nullptr);
  const auto a = ex.encode_sentence(bag->sentences[0]);
  CHECK(a.size() == 3 * 5);
  CHECK(a == ex.encode_sentence(bag->sentences[1]));

  auto swapped = bag->sentences[0];
  std::swap(swapped.head_pos, swapped.tail_pos);
  CHECK(ex.encode_sentence(swapped) != a);

  // Shorter than the kernel: padded, not an error.
  const auto* tiny = f.corpus.find_bag({id(f, "lyon"), id(f, "rome")});
  REQUIRE(tiny != nullptr);
  CHECK(ex.encode_sentence(tiny->sentences[0]).size() == 15);

  Extractor reference(ExtractorConfig{}, 100, 3);
  CHECK(reference.encoding_dim() == 690);
}

TEST_CASE("encode_bag attention") {
  const auto f = make_fixture();
  const auto ex = make_extractor(f, f.kg.relation_count());

  const auto* single = f.corpus.find_bag({id(f, "paris"), id(f, "rome")});
  const auto enc1 = ex.encode_bag(*single);
  const auto s = ex.encode_sentence(single->sentences[0]);
  for (std::size_t r = 0; r < ex.class_count(); ++r) {
    REQUIRE(enc1.attention[r].size() == 1);
    CHECK(enc1.attention[r][0] == doctest::Approx(1.0));
    for (std::size_t k = 0; k < s.size(); ++k) CHECK(enc1.attended[r][k] == doctest::Approx(s[k]));
  }

  const auto* twin = f.corpus.find_bag({id(f, "paris"), id(f, "france")});
  const auto enc2 = ex.encode_bag(*twin);
  for (const auto& w : enc2.attention) {
    REQUIRE(w.size() == 2);
    CHECK(w[0] == doctest::Approx(0.5));
    CHECK(w[1] == doctest::Approx(0.5));
  }

  for (const auto& bag : f.corpus.bags()) {
    const auto enc = ex.encode_bag(bag);
    for (const auto& w : enc.attention) {
      double total = 0.0;
      for (double x : w) total += x;
      CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
    }
    double total = 0.0;
    for (double x : enc.relation_scores) total += x;
    CHECK(enc.relation_scores.size() == ex.class_count());
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(ex.relation_scores(bag) == enc.relation_scores);
  }
}

TEST_CASE("extraction_policy") {
  const auto f = make_fixture();

  SUBCASE("one relation: one entry per bag, none without bags") {
    const auto ex = make_extractor(f, 1);
    CHECK(ex.extraction_policy(f.corpus, id(f, "lyon")).size() == 2);
    CHECK(ex.extraction_policy(f.corpus, id(f, "rome")).empty());
  }
  SUBCASE("joint table sums to one and objects come from bags") {
    const auto ex = make_extractor(f, f.kg.relation_count());
    const auto paris = id(f, "paris");
    const auto policy = ex.extraction_policy(f.corpus, paris);
    CHECK(policy.size() == 2 * f.kg.relation_count());
    double total = 0.0;
    for (const auto& a : policy) {
      total += a.score;
      CHECK(a.bag_key.first == paris);
      CHECK(a.object == a.bag_key.second);
      CHECK(a.relation != ex.no_relation());
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("single action has probability one") {
  KnowledgeGraph kg;
  kg.add_triple("x", "r", "y");
  std::istringstream in(R"({"sentence": "x likes y", "head": "x", "tail": "y", "head_pos": 0, "tail_pos": 2})");
  const auto corpus = Corpus::parse(in, kg);
  Extractor ex(ExtractorConfig{4, 2, 4, 3, 3}, corpus.word_count(), 1);
  Rng rng(1);
  ex.init(rng);
  const auto policy = ex.extraction_policy(corpus, kg.entities().at("x"));
  REQUIRE(policy.size() == 1);
  CHECK(policy[0].score == doctest::Approx(1.0));
}

TEST_CASE("suggest_edges") {
  auto act = [](RelationId r, EntityId o, double p) {
    return ExtractionAction{r, o, {0, o}, p, 0};
  };

  SUBCASE("support bound") {
    const std::vector<ExtractionAction> policy{act(0, 1, 0.6), act(1, 2, 0.4)};
    Rng rng(1);
    CHECK(suggest_edges(policy, 0, 5, SuggestMode::sample, &rng).size() == 2);
    CHECK(suggest_edges(policy, 0, 5, SuggestMode::top, nullptr).size() == 2);
  }
  SUBCASE("top picks the most probable") {
    const std::vector<ExtractionAction> policy{act(0, 1, 0.2), act(1, 2, 0.7), act(2, 3, 0.1)};
    const auto top = suggest_edges(policy, 0, 1, SuggestMode::top, nullptr);
    REQUIRE(top.size() == 1);
    CHECK(top[0] == Triple{0, 1, 2});
  }
  SUBCASE("k = 0 is a configuration error") {
    CHECK_THROWS_AS(suggest_edges({}, 0, 0, SuggestMode::top, nullptr), ConfigError);
  }
  SUBCASE("sampled frequencies within 3 sigma") {
    const std::vector<ExtractionAction> policy{act(0, 1, 0.5), act(1, 1, 0.3), act(0, 2, 0.15),
                                               act(2, 3, 0.05)};
    Rng rng(99);
    const int n = 10000;
    std::map<Triple, int> counts;
    for (int i = 0; i < n; ++i) {
      const auto s = suggest_edges(policy, 7, 1, SuggestMode::sample, &rng);
      REQUIRE(s.size() == 1);
      CHECK(s[0].subject == 7);
      ++counts[s[0]];
    }
    for (const auto& a : policy) {
      const double mean = n * a.score;
      const double sd = std::sqrt(n * a.score * (1.0 - a.score));
      CHECK(std::abs(counts[Triple{7, a.relation, a.object}] - mean) <= 3.0 * sd);
    }
  }
  SUBCASE("draws are distinct") {
    const std::vector<ExtractionAction> policy{act(0, 1, 0.5), act(1, 1, 0.3), act(0, 2, 0.2)};
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
      const auto s = suggest_edges(policy, 0, 3, SuggestMode::sample, &rng);
      CHECK(std::set<Triple>(s.begin(), s.end()).size() == 3);
    }
  }
}

TEST_CASE("suggestions are out-edges of the subject") {
  const auto f = make_fixture();
  const auto ex = make_extractor(f, f.kg.relation_count());
  PolicyCache cache(ex, f.corpus);
  const auto suggester = make_suggester(cache, 3, SuggestMode::sample);
  Rng rng(8);
  for (EntityId e = 0; e < static_cast<EntityId>(f.kg.entity_count()); ++e)
    for (const auto& t : suggester(e, rng)) CHECK(t.subject == e);
}

TEST_CASE("assign_extractor_rewards") {
  auto step = [](ActionSource src) {
    TrajectoryStep s;
    s.actions = {Action{0, 1, src}};
    return s;
  };
  Trajectory t;
  t.steps = {step(ActionSource::base), step(ActionSource::base), step(ActionSource::suggested)};

  t.terminal_reward = 0.0;
  CHECK(assign_extractor_rewards(t) == std::vector<double>{0, 0, 0});
  t.terminal_reward = 1.0;
  CHECK(assign_extractor_rewards(t) == std::vector<double>{0, 0, 1});
  t.steps[2] = step(ActionSource::base);
  CHECK(assign_extractor_rewards(t) == std::vector<double>{0, 0, 0});
}
