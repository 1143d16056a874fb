#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"

#include "cpl/errors.hpp"
#include "cpl/reasoner.hpp"
#include "cpl/synthetic.hpp"
#include "cpl/trainer.hpp"

using namespace cpl;

namespace {

KnowledgeGraph chain_graph() {
  std::istringstream in(
      "a\tr1\tb\n"
      "b\tr2\tc\n"
      "a\tr3\td\n"
      "d\tr3\te\n");
  auto kg = KnowledgeGraph::parse_triples(in, VocabMode::build);
  kg.add_entity("lonely");
  return kg;
}

Reasoner small_reasoner(const KnowledgeGraph& kg, std::uint64_t seed = 3) {
  Reasoner r(ReasonerConfig{4, 5, 6, 200}, kg.entity_count(), kg.relation_count());
  Rng rng(seed);
  r.init(rng);
  return r;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// One recurrent step written out by hand; gates in (i, f, o, g) order.
void lstm_oracle(const Reasoner& reasoner, RelationId r, EntityId e, std::vector<double>& h,
                 std::vector<double>& c) {
  const auto& s = reasoner.store();
  const auto& wx = s.value(s.id("reasoner.lstm.input_weights"));
  const auto& wh = s.value(s.id("reasoner.lstm.hidden_weights"));
  const auto& b = s.value(s.id("reasoner.lstm.bias"));
  const auto& re = s.value(s.id("reasoner.relation_embedding"));
  const auto& ee = s.value(s.id("reasoner.entity_embedding"));
  const std::size_t d = re.cols, n = h.size();
  std::vector<double> x;
  for (std::size_t k = 0; k < d; ++k) x.push_back(re(static_cast<std::size_t>(r), k));
  for (std::size_t k = 0; k < d; ++k) x.push_back(ee(static_cast<std::size_t>(e), k));
  std::vector<double> z(4 * n);
  for (std::size_t row = 0; row < 4 * n; ++row) {
    double acc = b(row, 0);
    for (std::size_t k = 0; k < x.size(); ++k) acc += wx(row, k) * x[k];
    for (std::size_t k = 0; k < n; ++k) acc += wh(row, k) * h[k];
    z[row] = acc;
  }
  for (std::size_t k = 0; k < n; ++k) {
    const double i = sigmoid(z[k]), f = sigmoid(z[n + k]), o = sigmoid(z[2 * n + k]);
    const double g = std::tanh(z[3 * n + k]);
    c[k] = f * c[k] + i * g;
    h[k] = o * std::tanh(c[k]);
  }
}

}  // namespace

TEST_CASE("init_state") {
  const auto kg = chain_graph();
  const auto reasoner = small_reasoner(kg);
  const auto s1 = reasoner.init_state(0, 0);
  const auto s2 = reasoner.init_state(2, 1);
  CHECK(s1.e_t == s1.e_s);
  CHECK(s2.e_t == 2);
  CHECK(s1.r_t == reasoner.start_token());
  CHECK(s1.h.rows == 5);
  CHECK(s1.c.rows == 5);
  CHECK(s1.h.data == s2.h.data);
  for (double v : s1.h.data) CHECK(v == 0.0);
  CHECK_THROWS_AS(reasoner.init_state(99, 0), LookupError);
  CHECK_THROWS_AS(reasoner.init_state(0, 99), LookupError);
}

TEST_CASE("advance_history") {
  const auto kg = chain_graph();
  const auto reasoner = small_reasoner(kg);
  const auto s0 = reasoner.init_state(0, 0);

  SUBCASE("self-loop keeps the location but moves the history") {
    const auto s1 = reasoner.advance_history(s0, Action{reasoner.self_loop(), 0});
    CHECK(s1.e_t == 0);
    CHECK(s1.h.data != s0.h.data);
  }
  SUBCASE("pure") {
    const Action a{1, 3};
    CHECK(reasoner.advance_history(s0, a).h.data == reasoner.advance_history(s0, a).h.data);
  }
  SUBCASE("three steps match the hand-unrolled recurrence") {
    const std::vector<Action> chain{{0, 1}, {1, 2}, {reasoner.self_loop(), 2}};
    std::vector<double> h(5, 0.0), c(5, 0.0);
    auto s = s0;
    for (const auto& a : chain) {
      s = reasoner.advance_history(s, a);
      lstm_oracle(reasoner, a.relation, a.entity, h, c);
      CHECK(s.e_t == a.entity);
      CHECK(s.r_t == a.relation);
      for (std::size_t k = 0; k < 5; ++k) {
        CHECK(s.h.data[k] == doctest::Approx(h[k]).epsilon(1e-12));
        CHECK(s.c.data[k] == doctest::Approx(c[k]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("build_action_space") {
  auto kg = chain_graph();
  const auto a = kg.entities().at("a");
  const auto lonely = kg.entities().at("lonely");
  const RelationId loop = static_cast<RelationId>(kg.relation_count());

  SUBCASE("no dropout, no suggestions: base edges plus self-loop") {
    const auto space = build_action_space(kg, nullptr, a, loop, {}, nullptr);
    REQUIRE(space.size() == 3);
    CHECK(space.actions.back() == Action{loop, a, ActionSource::base});
    for (std::size_t i = 0; i + 1 < space.size(); ++i)
      CHECK(space.actions[i].provenance == ActionSource::base);
  }
  SUBCASE("isolated entity with one suggestion") {
    const auto h = kg.augment_temporary(std::vector<Triple>{{lonely, 0, a}});
    const auto space = build_action_space(kg, &h, lonely, loop, {}, nullptr);
    REQUIRE(space.size() == 2);
    CHECK(space.actions[0] == Action{0, a, ActionSource::suggested});
    CHECK(space.suggested_mask() == std::vector<bool>{true, false});
  }
  SUBCASE("a suggestion duplicating a base edge is kept once as base") {
    const Triple dup{a, kg.relations().at("r1"), kg.entities().at("b")};
    const auto h = kg.augment_temporary(std::vector<Triple>{dup});
    const auto space = build_action_space(kg, &h, a, loop, {}, nullptr);
    CHECK(space.size() == 3);
    const auto n = std::count_if(space.actions.begin(), space.actions.end(), [&](const Action& x) {
      return x.relation == dup.relation && x.entity == dup.object;
    });
    CHECK(n == 1);
    for (const auto& x : space.actions) CHECK(x.provenance == ActionSource::base);
  }
  SUBCASE("dropout never removes suggestions or the self-loop") {
    const auto h = kg.augment_temporary(std::vector<Triple>{{a, 1, lonely}});
    Rng rng(1);
    ActionSpaceOptions opts;
    opts.dropout_rate = 1.0;
    const auto space = build_action_space(kg, &h, a, loop, opts, &rng);
    REQUIRE(space.size() == 2);
    CHECK(space.actions[0].provenance == ActionSource::suggested);
    CHECK(space.actions[1].relation == loop);
  }
  SUBCASE("the query edge is masked") {
    ActionSpaceOptions opts;
    opts.masked = Triple{a, kg.relations().at("r1"), kg.entities().at("b")};
    CHECK(build_action_space(kg, nullptr, a, loop, opts, nullptr).size() == 2);
  }
  SUBCASE("cap subsamples base edges first") {
    KnowledgeGraph hub;
    for (int i = 0; i < 50; ++i) hub.add_triple("hub", "r", "n" + std::to_string(i));
    const auto e = hub.entities().at("hub");
    const auto extra = hub.add_entity("extra");
    const auto h = hub.augment_temporary(std::vector<Triple>{{e, 0, extra}});
    ActionSpaceOptions opts;
    opts.max_actions = 10;
    const auto space = build_action_space(hub, &h, e, 1, opts, nullptr);
    CHECK(space.size() == 10);
    const auto mask = space.suggested_mask();
    CHECK(std::count(mask.begin(), mask.end(), true) == 1);
    CHECK(space.actions.back().relation == 1);
    std::set<std::pair<RelationId, EntityId>> seen;
    for (const auto& x : space.actions) CHECK(seen.insert({x.relation, x.entity}).second);
  }
}

TEST_CASE("policy_distribution") {
  const auto kg = chain_graph();
  auto reasoner = small_reasoner(kg);
  const auto s = reasoner.init_state(0, 0);

  const JointActionSpace one{{Action{reasoner.self_loop(), 0}}};
  CHECK(reasoner.policy_distribution(s, one)[0] == doctest::Approx(1.0));

  const auto space = build_action_space(kg, nullptr, 0, reasoner.self_loop(), {}, nullptr);
  const auto s1 = reasoner.advance_history(s, Action{1, 3});
  const auto p = reasoner.policy_distribution(s1, space);
  double total = 0.0;
  for (double x : p) total += x;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-9));

  for (diff::ParamId id = 0; id < reasoner.store().size(); ++id) reasoner.store().value(id).fill(0.0);
  for (double x : reasoner.policy_distribution(s1, space))
    CHECK(x == doctest::Approx(1.0 / static_cast<double>(space.size())));
}

TEST_CASE("rollout examples") {
  const auto kg = chain_graph();
  const auto reasoner = small_reasoner(kg);
  const auto a = kg.entities().at("a");
  const auto c = kg.entities().at("c");
  Rng rng(5);

  SUBCASE("fixed-point query under forced self-loop") {
    RolloutOptions opts;
    opts.picker = [](const JointActionSpace& s, std::span<const double>) { return s.size() - 1; };
    auto h = kg.augment_temporary({});
    const auto traj = rollout({a, 0, a}, kg, h, reasoner, {}, opts, rng);
    CHECK(traj.terminal_reward == 1.0);
    CHECK(traj.steps.size() == 3);
  }
  SUBCASE("unreachable answer never rewards") {
    const auto lonely = kg.entities().at("lonely");
    for (int i = 0; i < 50; ++i) {
      auto h = kg.augment_temporary({});
      CHECK(rollout({a, 0, lonely}, kg, h, reasoner, {}, {}, rng).terminal_reward == 0.0);
    }
  }
  SUBCASE("planted two-hop chain with an oracle picker") {
    RolloutOptions opts;
    opts.horizon = 2;
    opts.mask_query = false;
    std::size_t step = 0;
    opts.picker = [&](const JointActionSpace& s, std::span<const double>) {
      const auto left = 2 - ++step;
      for (std::size_t i = 0; i < s.size(); ++i) {
        const int d = shortest_path_hops(kg, {}, s.actions[i].entity, c, 2);
        if (d >= 0 && static_cast<std::size_t>(d) <= left) return i;
      }
      return s.size() - 1;
    };
    auto h = kg.augment_temporary({});
    const auto traj = rollout({a, 0, c}, kg, h, reasoner, {}, opts, rng);
    CHECK(traj.terminal_reward == 1.0);
    CHECK(traj.final_entity() == c);
  }
}

TEST_CASE("rollout properties over random graphs") {
  Rng gen(17);
  for (int g = 0; g < 20; ++g) {
    KnowledgeGraph kg;
    const int n = 8;
    for (int i = 0; i < n; ++i) kg.add_entity("e" + std::to_string(i));
    for (int r = 0; r < 3; ++r) kg.add_relation("r" + std::to_string(r));
    for (int k = 0; k < 12; ++k)
      kg.add_triple(Triple{static_cast<EntityId>(gen.below(n)), static_cast<RelationId>(gen.below(3)),
                           static_cast<EntityId>(gen.below(n))});
    kg.add_inverse_edges();
    const auto reasoner = small_reasoner(kg, g);
    Suggester suggest = [&](EntityId e, Rng& rng) {
      std::vector<Triple> out;
      if (rng.bernoulli(0.5))
        out.push_back({e, static_cast<RelationId>(rng.below(3)), static_cast<EntityId>(rng.below(n))});
      return out;
    };
    for (int q = 0; q < 20; ++q) {
      const Triple query{static_cast<EntityId>(gen.below(n)), static_cast<RelationId>(gen.below(3)),
                         static_cast<EntityId>(gen.below(n))};
      RolloutOptions opts;
      opts.dropout_rate = 0.2;
      auto h = kg.augment_temporary({});
      const auto traj = rollout(query, kg, h, reasoner, suggest, opts, gen);
      REQUIRE(traj.steps.size() == 3);
      CHECK(traj.steps[0].reward == 0.0);
      CHECK(traj.steps[1].reward == 0.0);
      CHECK((traj.terminal_reward == 0.0 || traj.terminal_reward == 1.0));
      for (const auto& s : traj.steps) {
        if (s.action().provenance != ActionSource::suggested) continue;
        CHECK(h.contains(Triple{s.location, s.action().relation, s.action().entity}));
      }
      for (double gt : compute_returns(traj.rewards(), 1.0)) CHECK(gt == traj.terminal_reward);
      if (traj.terminal_reward == 1.0) {
        const std::vector<Triple> live(h.live().begin(), h.live().end());
        const int d = shortest_path_hops(kg, live, query.subject, query.object, 3);
        CHECK(d >= 0);
      }
    }
  }
}

TEST_CASE("trajectory dump is one JSON object per step") {
  const auto kg = chain_graph();
  const auto reasoner = small_reasoner(kg);
  Rng rng(2);
  auto h = kg.augment_temporary({});
  const auto traj = rollout({0, 0, 2}, kg, h, reasoner, {}, {}, rng);
  const auto text = dump_trajectory(traj, kg, reasoner);
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
  CHECK(text.find("\"provenance\"") != std::string::npos);
}
