#include "cpl/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <set>

#include "json.hpp"

#include "cpl/errors.hpp"
#include "cpl/random.hpp"

namespace cpl {

namespace {

const std::vector<std::vector<std::string>> kR1Templates = {
    {"{h}", "joined", "{t}", "last", "year"},
    {"{h}", "is", "employed", "by", "{t}"},
    {"{t}", "hired", "{h}", "recently"},
};
const std::vector<std::vector<std::string>> kR2Templates = {
    {"{h}", "is", "headquartered", "in", "{t}"},
    {"{t}", "hosts", "the", "offices", "of", "{h}"},
};
const std::vector<std::vector<std::string>> kR4Templates = {
    {"{h}", "visited", "{t}", "in", "spring"},
    {"{h}", "traveled", "to", "{t}"},
};
const std::vector<std::vector<std::string>> kDistractors = {
    {"{h}", "and", "{t}", "were", "mentioned", "together"},
    {"reports", "about", "{h}", "rarely", "cite", "{t}"},
    {"{t}", "was", "seen", "near", "{h}", "once"},
};

std::string render(const std::vector<std::string>& tpl, const std::string& h, const std::string& t) {
  nlohmann::json j;
  std::string sentence;
  int head = -1, tail = -1;
  for (std::size_t i = 0; i < tpl.size(); ++i) {
    std::string w = tpl[i];
    if (w == "{h}") {
      w = h;
      head = static_cast<int>(i);
    } else if (w == "{t}") {
      w = t;
      tail = static_cast<int>(i);
    }
    if (i) sentence += ' ';
    sentence += w;
  }
  j["sentence"] = sentence;
  j["head"] = h;
  j["tail"] = t;
  j["head_pos"] = head;
  j["tail_pos"] = tail;
  return j.dump();
}

std::size_t layer(std::size_t total, double share) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(share * static_cast<double>(total))));
}

}  // namespace

int shortest_path_hops(const KnowledgeGraph& kg, std::span<const Triple> extra, EntityId from,
                       EntityId to, std::size_t max_hops, const Triple* excluded) {
  const auto n = kg.entity_count();
  std::vector<std::vector<EntityId>> adj(n);
  auto link = [&](const Triple& t) {
    if (excluded && (t == *excluded ||
                     (t.subject == excluded->object && t.object == excluded->subject &&
                      kg.has_inverse_edges() && t.relation == kg.inverse(excluded->relation))))
      return;
    adj[static_cast<std::size_t>(t.subject)].push_back(t.object);
    adj[static_cast<std::size_t>(t.object)].push_back(t.subject);
  };
  for (const auto& t : kg.triples()) link(t);
  for (const auto& t : kg.retained()) link(t);
  for (const auto& t : extra) link(t);
  std::vector<int> dist(n, -1);
  std::deque<EntityId> queue{from};
  dist[static_cast<std::size_t>(from)] = 0;
  while (!queue.empty()) {
    const auto u = queue.front();
    queue.pop_front();
    if (u == to) break;
    if (static_cast<std::size_t>(dist[static_cast<std::size_t>(u)]) >= max_hops) continue;
    for (auto v : adj[static_cast<std::size_t>(u)]) {
      if (dist[static_cast<std::size_t>(v)] >= 0) continue;
      dist[static_cast<std::size_t>(v)] = dist[static_cast<std::size_t>(u)] + 1;
      queue.push_back(v);
    }
  }
  return dist[static_cast<std::size_t>(to)];
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.pattern_hops > spec.horizon)
    throw ConfigError("pattern needs " + std::to_string(spec.pattern_hops) +
                      " hops but the horizon is " + std::to_string(spec.horizon));
  if (spec.pattern_hops != 2) throw ConfigError("only two-hop patterns are generated");
  if (spec.corpus_fraction < 0.0 || spec.corpus_fraction > 1.0)
    throw ConfigError("corpus fraction must lie in [0, 1]");
  const auto na = layer(spec.entities, spec.a_share);
  const auto nb = layer(spec.entities, spec.b_share);
  const auto nc = layer(spec.entities, spec.c_share);
  if (na + nb + nc >= spec.entities) throw ConfigError("layer shares leave no room for noise entities");
  const auto nd = spec.entities - na - nb - nc;

  Rng root(seed);
  Rng rng = root.child("synthetic");
  SyntheticDataset out;
  auto& kg = out.kg;
  std::vector<EntityId> A, B, C, D;
  for (std::size_t i = 0; i < na; ++i) A.push_back(kg.add_entity("a" + std::to_string(i)));
  for (std::size_t i = 0; i < nb; ++i) B.push_back(kg.add_entity("b" + std::to_string(i)));
  for (std::size_t i = 0; i < nc; ++i) C.push_back(kg.add_entity("c" + std::to_string(i)));
  for (std::size_t i = 0; i < nd; ++i) D.push_back(kg.add_entity("d" + std::to_string(i)));
  const auto r1 = kg.add_relation("r1");
  const auto r2 = kg.add_relation("r2");
  const auto rq = kg.add_relation("rq");
  const auto r4 = kg.add_relation("r4");
  auto pick = [&](const std::vector<EntityId>& v) { return v[rng.below(v.size())]; };

  // r2: every B entity points at one C entity; C entities are covered first.
  std::vector<EntityId> answer(kg.entity_count(), -1);
  for (std::size_t i = 0; i < nb; ++i) {
    const auto c = i < nc ? C[i] : pick(C);
    answer[static_cast<std::size_t>(B[i])] = c;
    kg.add_triple(Triple{B[i], r2, c});
  }
  // r1 bridges: every A entity points at one B entity.
  std::vector<Triple> bridges;
  for (std::size_t i = 0; i < na; ++i) bridges.push_back({A[i], r1, i < nb ? B[i] : pick(B)});
  out.bridges = bridges.size();
  const auto moved = static_cast<std::size_t>(std::llround(spec.corpus_fraction * static_cast<double>(bridges.size())));
  std::vector<std::size_t> order(bridges.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order.begin(), order.end());
  std::vector<bool> in_corpus(bridges.size(), false);
  for (std::size_t i = 0; i < moved; ++i) in_corpus[order[i]] = true;
  out.moved_bridges = moved;
  for (std::size_t i = 0; i < bridges.size(); ++i) {
    if (in_corpus[i]) out.corpus_facts.push_back(bridges[i]);
    else kg.add_triple(bridges[i]);
  }

  // r4 noise inside the graph.
  for (auto a : A)
    if (rng.bernoulli(spec.noise_prob)) kg.add_triple(Triple{a, r4, pick(D)});
  for (auto d : D)
    for (std::size_t k = 0; k < spec.d_noise_edges; ++k) {
      const auto e = pick(D);
      if (e != d) kg.add_triple(Triple{d, r4, e});
    }
  // corpus-only r4 facts
  for (auto a : A)
    if (rng.bernoulli(spec.corpus_noise_prob)) {
      const Triple t{a, r4, pick(D)};
      if (!kg.contains(t)) out.corpus_facts.push_back(t);
    }

  // Sentences.
  auto name = [&](EntityId e) { return kg.entities().name(e); };
  auto emit = [&](const std::vector<std::vector<std::string>>& tpls, const Triple& t, std::size_t n) {
    for (std::size_t k = 0; k < n; ++k)
      out.corpus_lines.push_back(render(tpls[rng.below(tpls.size())], name(t.subject), name(t.object)));
  };
  for (const auto& b : bridges) emit(kR1Templates, b, spec.sentences_per_fact);
  for (const auto& t : out.corpus_facts)
    if (t.relation == r4) emit(kR4Templates, t, spec.sentences_per_fact);
  for (const auto& t : kg.triples())
    if (t.relation == r2 && rng.bernoulli(spec.r2_sentence_prob)) emit(kR2Templates, t, 1);
  std::set<std::pair<EntityId, EntityId>> related;
  for (const auto& t : kg.triples()) related.insert({t.subject, t.object});
  for (const auto& t : out.corpus_facts) related.insert({t.subject, t.object});
  const auto n = static_cast<EntityId>(kg.entity_count());
  for (EntityId e = 0; e < n; ++e)
    for (std::size_t k = 0; k < spec.distractors_per_entity; ++k) {
      const auto x = static_cast<EntityId>(rng.below(static_cast<std::uint64_t>(n)));
      if (x == e || related.contains({e, x})) continue;
      emit(kDistractors, Triple{e, r4, x}, 1);
    }

  // Queries: (a, rq, answer(bridge target)), split, train facts join the graph.
  std::vector<Query> all;
  for (const auto& b : bridges)
    all.push_back({Triple{b.subject, rq, answer[static_cast<std::size_t>(b.object)]}, ""});
  rng.shuffle(all.begin(), all.end());
  const auto n_valid = static_cast<std::size_t>(std::llround(spec.valid_fraction * static_cast<double>(all.size())));
  const auto n_test = static_cast<std::size_t>(std::llround(spec.test_fraction * static_cast<double>(all.size())));
  if (n_valid + n_test > all.size()) throw ConfigError("valid and test fractions exceed 1");
  const auto n_train = all.size() - n_valid - n_test;
  for (std::size_t i = 0; i < n_train; ++i) kg.add_triple(all[i].triple);

  auto label = [&](Query& q, bool is_train) {
    const Triple* excl = is_train ? &q.triple : nullptr;
    const auto h = spec.horizon;
    if (shortest_path_hops(kg, {}, q.triple.subject, q.triple.object, h, excl) >= 0) {
      q.label = "kg";
    } else if (shortest_path_hops(kg, out.corpus_facts, q.triple.subject, q.triple.object, h, excl) >= 0) {
      q.label = "corpus";
    }
  };
  for (std::size_t i = 0; i < all.size(); ++i) {
    auto q = all[i];
    label(q, i < n_train);
    if (q.label.empty()) {
      ++out.dropped_queries;
      continue;
    }
    (i < n_train ? out.train : i < n_train + n_valid ? out.valid : out.test).push_back(q);
  }
  return out;
}

bool verify_synthetic(const SyntheticDataset& data, std::size_t horizon) {
  auto check = [&](const std::vector<Query>& qs, bool is_train) {
    for (const auto& q : qs) {
      const Triple* excl = is_train ? &q.triple : nullptr;
      const int kg_hops = shortest_path_hops(data.kg, {}, q.triple.subject, q.triple.object, horizon, excl);
      const int all_hops = shortest_path_hops(data.kg, data.corpus_facts, q.triple.subject,
                                              q.triple.object, horizon, excl);
      if (all_hops < 0) return false;
      if (q.label == "kg" && kg_hops < 0) return false;
      if (q.label == "corpus" && kg_hops >= 0) return false;
    }
    return true;
  };
  return check(data.train, true) && check(data.valid, false) && check(data.test, false);
}

void write_synthetic(const SyntheticDataset& data, const SyntheticSpec& spec, std::uint64_t seed,
                     const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto& kg = data.kg;
  kg.write_triples(dir / "graph.txt", kg.triples());
  kg.write_triples(dir / "corpus_facts.txt", data.corpus_facts);
  {
    std::ofstream e(dir / "entities.txt");
    for (const auto& n : kg.entities().names()) e << n << '\n';
    std::ofstream r(dir / "relations.txt");
    for (const auto& n : kg.relations().names()) r << n << '\n';
    std::ofstream c(dir / "corpus.jsonl");
    for (const auto& l : data.corpus_lines) c << l << '\n';
  }
  write_queries(dir / "train_queries.txt", data.train, kg);
  write_queries(dir / "valid_queries.txt", data.valid, kg);
  write_queries(dir / "test_queries.txt", data.test, kg);
  auto count = [](const std::vector<Query>& qs, const char* l) {
    return std::count_if(qs.begin(), qs.end(), [&](const Query& q) { return q.label == l; });
  };
  nlohmann::json j;
  j["seed"] = seed;
  j["entities"] = spec.entities;
  j["horizon"] = spec.horizon;
  j["corpus_fraction"] = spec.corpus_fraction;
  j["bridges"] = data.bridges;
  j["moved_bridges"] = data.moved_bridges;
  j["graph_triples"] = kg.triple_count();
  j["corpus_facts"] = data.corpus_facts.size();
  j["sentences"] = data.corpus_lines.size();
  j["dropped_queries"] = data.dropped_queries;
  for (const auto& [split, qs] : {std::pair{"train", &data.train}, {"valid", &data.valid}, {"test", &data.test}}) {
    j["queries"][split]["kg"] = count(*qs, "kg");
    j["queries"][split]["corpus"] = count(*qs, "corpus");
  }
  std::ofstream(dir / "synthetic.json") << j.dump(2) << '\n';
}

}  // namespace cpl
