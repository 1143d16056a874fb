#include "cpl/grad_suite.hpp"

#include <memory>
#include <optional>
#include <sstream>

#include "cpl/corpus_store.hpp"
#include "cpl/errors.hpp"
#include "cpl/extractor.hpp"
#include "cpl/reasoner.hpp"

namespace cpl {

namespace {

std::size_t dim(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

void randomize(diff::ParameterStore& store, Rng& rng) {
  for (diff::ParamId id = 0; id < store.size(); ++id)
    for (auto& x : store.value(id).data) x = rng.uniform(-1.0, 1.0);
}

KnowledgeGraph random_graph(Rng& rng, std::size_t entities, std::size_t relations) {
  KnowledgeGraph kg;
  for (std::size_t i = 0; i < entities; ++i) kg.add_entity("e" + std::to_string(i));
  for (std::size_t r = 0; r < relations; ++r) kg.add_relation("r" + std::to_string(r));
  const auto edges = dim(rng, entities, 3 * entities);
  for (std::size_t i = 0; i < edges; ++i)
    kg.add_triple({static_cast<EntityId>(rng.below(entities)),
                   static_cast<RelationId>(rng.below(relations)),
                   static_cast<EntityId>(rng.below(entities))});
  return kg;
}

struct NetTrial {
  std::optional<Reasoner> reasoner;
  std::optional<Extractor> extractor;
  KnowledgeGraph kg;
  Corpus corpus;
  diff::LossFn loss;

  diff::ParameterStore& store() { return reasoner ? reasoner->store() : extractor->store(); }
};

std::unique_ptr<NetTrial> build_reasoner(Rng& rng) {
  auto t = std::make_unique<NetTrial>();
  const auto n = dim(rng, 3, 6), nr = dim(rng, 1, 3);
  t->kg = random_graph(rng, n, nr);
  if (rng.bernoulli(0.5)) t->kg.add_inverse_edges();
  ReasonerConfig rc{dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 2, 4), 200};
  t->reasoner.emplace(rc, t->kg.entity_count(), t->kg.relation_count());
  randomize(t->reasoner->store(), rng);

  const auto& kg = t->kg;
  const Triple query{static_cast<EntityId>(rng.below(n)), static_cast<RelationId>(rng.below(nr)),
                     static_cast<EntityId>(rng.below(n))};
  const bool suggest = rng.bernoulli(0.5);
  Suggester suggester;
  if (suggest)
    suggester = [&kg, nr](EntityId e, Rng& r) {
      return std::vector<Triple>{{e, static_cast<RelationId>(r.below(nr)),
                                  static_cast<EntityId>(r.below(kg.entity_count()))}};
    };
  RolloutOptions opts;
  opts.horizon = dim(rng, 1, 3);
  opts.mode = suggest && rng.bernoulli(0.5) ? SamplingMode::adaptive : SamplingMode::stochastic;
  auto handle = kg.augment_temporary(std::span<const Triple>{});
  const auto traj = rollout(query, kg, handle, *t->reasoner, suggester, opts, rng);
  std::vector<double> returns(traj.steps.size());
  for (auto& g : returns) g = rng.uniform(-1.0, 1.0);

  const Reasoner* reasoner = &*t->reasoner;
  t->loss = [reasoner, traj, returns](diff::Tape& tape) {
    const auto logps = reasoner->replay_log_probs(tape, traj);
    diff::Var total = tape.scale(logps[0], returns[0]);
    for (std::size_t i = 1; i < logps.size(); ++i)
      total = tape.add(total, tape.scale(logps[i], returns[i]));
    return total;
  };
  return t;
}

std::unique_ptr<NetTrial> build_extractor(Rng& rng) {
  auto t = std::make_unique<NetTrial>();
  const auto n = dim(rng, 2, 4), nr = dim(rng, 1, 3);
  for (std::size_t i = 0; i < n; ++i) t->kg.add_entity("e" + std::to_string(i));
  for (std::size_t r = 0; r < nr; ++r) t->kg.add_relation("r" + std::to_string(r));

  const char* words[] = {"alpha", "beta", "gamma", "delta", "of", "in"};
  std::string jsonl;
  const auto sentences = dim(rng, 2, 6);
  for (std::size_t i = 0; i < sentences; ++i) {
    const auto h = rng.below(n);
    auto o = rng.below(n - 1);
    if (o >= h) ++o;
    const auto len = dim(rng, 2, 6);
    std::vector<std::string> toks(len);
    for (auto& w : toks) w = words[rng.below(6)];
    const auto hp = rng.below(len);
    auto tp = rng.below(len - 1);
    if (tp >= hp) ++tp;
    toks[hp] = "e" + std::to_string(h);
    toks[tp] = "e" + std::to_string(o);
    std::string s;
    for (std::size_t k = 0; k < len; ++k) s += (k ? " " : "") + toks[k];
    jsonl += R"({"sentence": ")" + s + R"(", "head": "e)" + std::to_string(h) +
             R"(", "tail": "e)" + std::to_string(o) + R"(", "head_pos": )" +
             std::to_string(hp) + R"(, "tail_pos": )" + std::to_string(tp) + "}\n";
  }
  std::istringstream in(jsonl);
  t->corpus = Corpus::parse(in, t->kg);

  ExtractorConfig ec{dim(rng, 1, 3), dim(rng, 1, 2), 3, dim(rng, 1, 3), rng.bernoulli(0.5) ? 3u : 1u};
  t->extractor.emplace(ec, t->corpus.word_count(), nr);
  randomize(t->extractor->store(), rng);

  const auto& bags = t->corpus.bags();
  const auto& bag = bags[rng.below(bags.size())];
  const auto label = static_cast<RelationId>(rng.below(nr + 1));
  const double w_sup = rng.uniform(-1.0, 1.0);
  struct Pick {
    Triple t;
    double g;
  };
  std::vector<Pick> picks(dim(rng, 1, 3));
  for (auto& p : picks) {
    const auto& b = bags[rng.below(bags.size())];
    p = {{b.pair.first, static_cast<RelationId>(rng.below(nr)), b.pair.second}, rng.uniform(-1.0, 1.0)};
  }

  const Extractor* ex = &*t->extractor;
  const Corpus* corpus = &t->corpus;
  t->loss = [ex, corpus, &bag, label, w_sup, picks](diff::Tape& tape) {
    diff::Var total = tape.scale(ex->tape_supervised_loss(tape, bag, label), w_sup);
    for (const auto& p : picks)
      total = tape.add(total, tape.scale(ex->tape_action_log_prob(tape, *corpus, p.t.subject,
                                                                  p.t.relation, p.t.object),
                                         p.g));
    return total;
  };
  return t;
}

}  // namespace

const std::vector<std::string>& network_names() {
  static const std::vector<std::string> names{"reasoner", "extractor"};
  return names;
}

diff::GradCheckResult run_network_trial(const std::string& net, Rng& rng, double step) {
  if (net != "reasoner" && net != "extractor") throw ConfigError("unknown network trial '" + net + "'");
  for (int attempt = 0; attempt < 50; ++attempt) {
    auto trial = net == "reasoner" ? build_reasoner(rng) : build_extractor(rng);
    {
      diff::Tape probe(trial->store());
      trial->loss(probe);
      if (probe.kink_margin() < 10.0 * step) continue;
    }
    return diff::check_gradients(trial->store(), trial->loss, step);
  }
  throw NumericError("could not draw a kink-free trial for network '" + net + "'");
}

}  // namespace cpl
