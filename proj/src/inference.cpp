#include "cpl/inference.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <sstream>
#include <unordered_map>

#include "cpl/errors.hpp"
#include "cpl/sampling.hpp"

namespace cpl {

std::vector<Query> load_queries(const std::filesystem::path& path, const KnowledgeGraph& kg) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::vector<Query> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    if (cols.size() != 3 && cols.size() != 4)
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected 3 or 4 columns");
    Query q;
    q.triple = {kg.entities().at(cols[0]), kg.relations().at(cols[1]), kg.entities().at(cols[2])};
    if (cols.size() == 4) q.label = cols[3];
    out.push_back(std::move(q));
  }
  return out;
}

void write_queries(const std::filesystem::path& path, std::span<const Query> queries,
                   const KnowledgeGraph& kg) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path.string());
  for (const auto& q : queries) {
    out << kg.entities().name(q.triple.subject) << '\t' << kg.relations().name(q.triple.relation)
        << '\t' << kg.entities().name(q.triple.object);
    if (!q.label.empty()) out << '\t' << q.label;
    out << '\n';
  }
}

namespace {

bool path_less(const std::vector<Action>& a, const std::vector<Action>& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end(),
                                      [](const Action& x, const Action& y) {
                                        return std::pair(x.relation, x.entity) <
                                               std::pair(y.relation, y.entity);
                                      });
}

}  // namespace

std::vector<BeamEntry> beam_search(const Triple& query, const KnowledgeGraph& kg,
                                   const Reasoner& reasoner, const Suggester& suggester,
                                   const BeamOptions& options) {
  if (options.width == 0) throw ConfigError("beam width must be at least 1");
  std::vector<BeamEntry> beam(1);
  beam[0].state = reasoner.init_state(query.subject, query.relation);
  beam[0].handle = kg.augment_temporary(std::span<const Triple>{});
  Rng unused(0);
  ActionSpaceOptions space_opts;
  space_opts.max_actions = reasoner.config().max_actions;

  for (std::size_t t = 0; t < options.horizon; ++t) {
    struct Candidate {
      std::size_t parent;
      Action action;
      double log_prob;
      std::vector<Action> path;
    };
    std::vector<Candidate> candidates;
    for (std::size_t i = 0; i < beam.size(); ++i) {
      auto& entry = beam[i];
      const EntityId e_t = entry.state.e_t;
      if (suggester) kg.augment_temporary(entry.handle, suggester(e_t, unused));
      const auto space =
          build_action_space(kg, &entry.handle, e_t, reasoner.self_loop(), space_opts, nullptr);
      diff::Tape tape(reasoner.store());
      const auto logits = reasoner.tape_logits(tape, query.subject, query.relation,
                                               tape.constant(entry.state.h), space);
      const auto logp = log_softmax(tape.value(logits).data);
      for (std::size_t a = 0; a < space.size(); ++a) {
        Candidate c{i, space.actions[a], entry.log_prob + logp[a], entry.path};
        c.path.push_back(space.actions[a]);
        candidates.push_back(std::move(c));
      }
    }
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      return path_less(a.path, b.path);
    });
    if (candidates.size() > options.width) candidates.resize(options.width);

    std::vector<BeamEntry> next;
    next.reserve(candidates.size());
    for (auto& c : candidates) {
      const auto& parent = beam[c.parent];
      BeamEntry e;
      e.path = std::move(c.path);
      e.log_prob = c.log_prob;
      e.handle = parent.handle;
      if (t + 1 < options.horizon) {
        e.state = reasoner.advance_history(parent.state, c.action);
      } else {
        e.state = parent.state;
        e.state.e_t = c.action.entity;
        e.state.r_t = c.action.relation;
      }
      next.push_back(std::move(e));
    }
    beam = std::move(next);
  }
  return beam;
}

RankResult rank_answers(const Triple& query, std::span<const BeamEntry> beam) {
  if (beam.empty()) throw MetricError("cannot rank an empty beam");
  std::unordered_map<EntityId, double> best;
  for (const auto& e : beam) {
    const EntityId end = e.path.empty() ? query.subject : e.path.back().entity;
    auto [it, inserted] = best.try_emplace(end, e.log_prob);
    if (!inserted) it->second = std::max(it->second, e.log_prob);
  }
  RankResult r;
  r.query = query;
  r.candidates.assign(best.begin(), best.end());
  std::sort(r.candidates.begin(), r.candidates.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (std::size_t i = 0; i < r.candidates.size(); ++i)
    if (r.candidates[i].first == query.object) r.rank = static_cast<double>(i + 1);
  return r;
}

double hits_at_k(std::span<const double> ranks, std::size_t k, HitsRule rule) {
  if (ranks.empty()) throw MetricError("Hits@K of an empty rank list is undefined");
  std::size_t hit = 0;
  const auto kk = static_cast<double>(k);
  for (double r : ranks) {
    if (!(r >= 1.0)) throw MetricError("ranks must be positive");
    hit += (rule == HitsRule::strict ? r < kk : r <= kk) ? 1 : 0;
  }
  return static_cast<double>(hit) / static_cast<double>(ranks.size());
}

double mrr(std::span<const double> ranks) {
  if (ranks.empty()) throw MetricError("MRR of an empty rank list is undefined");
  double s = 0.0;
  for (double r : ranks) {
    if (!(r >= 1.0)) throw MetricError("ranks must be positive");
    if (std::isfinite(r)) s += 1.0 / r;
  }
  return s / static_cast<double>(ranks.size());
}

MetricSummary summarize(std::span<const double> ranks, HitsRule rule) {
  MetricSummary m;
  m.count = ranks.size();
  if (ranks.empty()) return m;
  m.hits1 = hits_at_k(ranks, 1, rule);
  m.hits5 = hits_at_k(ranks, 5, rule);
  m.hits10 = hits_at_k(ranks, 10, rule);
  m.mrr = mrr(ranks);
  return m;
}

std::map<std::string, double> to_map(const MetricSummary& m) {
  return {{"hits@1", m.hits1}, {"hits@5", m.hits5}, {"hits@10", m.hits10}, {"mrr", m.mrr}};
}

std::map<std::string, MeanStd> aggregate_seeds(std::span<const std::map<std::string, double>> runs) {
  if (runs.empty()) throw MetricError("aggregate over zero runs");
  std::map<std::string, MeanStd> out;
  for (const auto& [key, _] : runs.front()) {
    double sum = 0.0;
    for (const auto& run : runs) sum += run.at(key);
    const double mean = sum / static_cast<double>(runs.size());
    double var = 0.0;
    for (const auto& run : runs) var += (run.at(key) - mean) * (run.at(key) - mean);
    out[key] = {mean, std::sqrt(var / static_cast<double>(runs.size()))};
  }
  return out;
}

std::vector<QueryOutcome> evaluate_queries(std::span<const Query> queries,
                                           const KnowledgeGraph& kg, const Reasoner& reasoner,
                                           const Extractor* extractor, const Corpus* corpus,
                                           const EvalOptions& options) {
  std::unique_ptr<PolicyCache> cache;
  Suggester suggester;
  if (extractor && corpus) {
    cache = std::make_unique<PolicyCache>(*extractor, *corpus);
    suggester = make_suggester(*cache, options.k_suggestions, SuggestMode::top);
  }
  std::vector<QueryOutcome> out(queries.size());
  const auto n = static_cast<std::int64_t>(queries.size());
#pragma omp parallel for schedule(dynamic) if (options.parallel)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& q = queries[static_cast<std::size_t>(i)];
    auto beam = beam_search(q.triple, kg, reasoner, suggester, options.beam);
    auto& o = out[static_cast<std::size_t>(i)];
    o.query = q;
    o.rank = rank_answers(q.triple, beam).rank;
    if (options.report_paths > 0) {
      if (beam.size() > options.report_paths) beam.resize(options.report_paths);
      o.top_paths = std::move(beam);
    }
  }
  return out;
}

std::vector<double> ranks_of(std::span<const QueryOutcome> outcomes, const std::string& label) {
  std::vector<double> r;
  for (const auto& o : outcomes)
    if (label.empty() || o.query.label == label) r.push_back(o.rank);
  return r;
}

std::string path_report(std::span<const QueryOutcome> outcomes, const KnowledgeGraph& kg,
                        const Reasoner& reasoner, const Corpus* corpus) {
  auto rel_name = [&](RelationId r) -> std::string {
    return r == reasoner.self_loop() ? "NO_OP" : kg.relations().name(r);
  };
  std::ostringstream out;
  for (const auto& o : outcomes) {
    const auto& q = o.query.triple;
    out << "query (" << kg.entities().name(q.subject) << ", " << kg.relations().name(q.relation)
        << ", " << kg.entities().name(q.object) << ") rank ";
    if (std::isfinite(o.rank)) out << o.rank; else out << "inf";
    out << '\n';
    for (const auto& p : o.top_paths) {
      out << "  " << std::exp(p.log_prob) << "  " << kg.entities().name(q.subject);
      EntityId at = q.subject;
      std::vector<std::string> support;
      for (const auto& a : p.path) {
        const bool sug = a.provenance == ActionSource::suggested;
        out << " -" << rel_name(a.relation) << (sug ? "[corpus]" : "") << "-> "
            << kg.entities().name(a.entity);
        if (sug && corpus) {
          Triple t{at, a.relation, a.entity};
          if (p.handle.contains(t)) t = p.handle.origin(t);
          if (const auto* bag = corpus->find_bag({t.subject, t.object}); bag && !bag->sentences.empty())
            support.push_back(bag->sentences.front().text);
        }
        at = a.entity;
      }
      out << '\n';
      for (const auto& s : support) out << "      \"" << s << "\"\n";
    }
  }
  return out.str();
}

}  // namespace cpl
