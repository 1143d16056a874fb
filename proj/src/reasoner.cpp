#include "cpl/reasoner.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

#include "json.hpp"

#include "cpl/errors.hpp"
#include "cpl/sampling.hpp"

namespace cpl {

using diff::LstmState;
using diff::Tape;
using diff::Var;

std::vector<bool> JointActionSpace::suggested_mask() const {
  std::vector<bool> mask(actions.size());
  for (std::size_t i = 0; i < actions.size(); ++i)
    mask[i] = actions[i].provenance == ActionSource::suggested;
  return mask;
}

EntityId Trajectory::final_entity() const {
  return steps.empty() ? query.subject : steps.back().action().entity;
}

std::vector<double> Trajectory::rewards() const {
  std::vector<double> r;
  r.reserve(steps.size());
  for (const auto& s : steps) r.push_back(s.reward);
  return r;
}

Reasoner::Reasoner(const ReasonerConfig& config, std::size_t entity_count,
                   std::size_t relation_count)
    : config_(config), entity_count_(entity_count), relation_count_(relation_count) {
  if (config.embed_dim == 0 || config.hidden_dim == 0 || config.mlp_dim == 0)
    throw ConfigError("reasoner dimensions must be positive");
  const auto d = config.embed_dim, h = config.hidden_dim;
  entity_emb_ = store_.add("reasoner.entity_embedding", std::max<std::size_t>(entity_count, 1), d);
  relation_emb_ = store_.add("reasoner.relation_embedding", relation_count + 2, d);
  lstm_.input_weights = store_.add("reasoner.lstm.input_weights", 4 * h, 2 * d);
  lstm_.hidden_weights = store_.add("reasoner.lstm.hidden_weights", 4 * h, h);
  lstm_.bias = store_.add("reasoner.lstm.bias", 4 * h, 1);
  w1_ = store_.add("reasoner.policy.w1", config.mlp_dim, 2 * d + h);
  w2_ = store_.add("reasoner.policy.w2", 2 * d, config.mlp_dim);
}

void Reasoner::check_ids(EntityId e, RelationId r) const {
  if (e < 0 || static_cast<std::size_t>(e) >= entity_count_)
    throw LookupError("entity id " + std::to_string(e) + " out of range");
  if (r < 0 || static_cast<std::size_t>(r) >= relation_count_ + 2)
    throw LookupError("relation id " + std::to_string(r) + " out of range");
}

LstmState Reasoner::tape_initial(Tape& tape) const {
  return {tape.zeros(config_.hidden_dim), tape.zeros(config_.hidden_dim)};
}

LstmState Reasoner::tape_advance(Tape& tape, LstmState prev, RelationId r, EntityId e) const {
  const std::array<Var, 2> parts{tape.embed_lookup(relation_emb_, r), tape.embed_lookup(entity_emb_, e)};
  return tape.recurrent_step(lstm_, prev, tape.concat(parts));
}

Var Reasoner::tape_logits(Tape& tape, EntityId e_s, RelationId r_q, Var h,
                          const JointActionSpace& space, double boost) const {
  if (space.actions.empty()) throw DimensionError("empty action space");
  const std::array<Var, 3> in{tape.embed_lookup(entity_emb_, e_s),
                              tape.embed_lookup(relation_emb_, r_q), h};
  const Var hidden = tape.relu(tape.matvec(tape.param(w1_), tape.concat(in)));
  const Var v = tape.matvec(tape.param(w2_), hidden);

  std::vector<std::int32_t> rels, ents;
  rels.reserve(space.size());
  ents.reserve(space.size());
  for (const auto& a : space.actions) {
    rels.push_back(a.relation);
    ents.push_back(a.entity);
  }
  const std::array<Var, 2> cols{tape.gather_rows(relation_emb_, rels),
                                tape.gather_rows(entity_emb_, ents)};
  Var logits = tape.matvec(tape.concat_cols(cols), v);
  if (boost != 0.0) {
    std::vector<double> bonus(space.size(), 0.0);
    bool any = false;
    for (std::size_t i = 0; i < space.size(); ++i)
      if (space.actions[i].provenance == ActionSource::suggested) {
        bonus[i] = boost;
        any = true;
      }
    if (any) logits = tape.add(logits, tape.constant_vector(bonus));
  }
  return logits;
}

ReasonerState Reasoner::init_state(EntityId e_s, RelationId r_q) const {
  check_ids(e_s, r_q);
  ReasonerState s;
  s.e_s = e_s;
  s.r_q = r_q;
  s.e_t = e_s;
  s.r_t = start_token();
  s.h = diff::Matrix(config_.hidden_dim, 1);
  s.c = diff::Matrix(config_.hidden_dim, 1);
  return s;
}

ReasonerState Reasoner::advance_history(const ReasonerState& state, const Action& chosen) const {
  check_ids(chosen.entity, chosen.relation);
  Tape tape(store_);
  const auto next = tape_advance(tape, {tape.constant(state.h), tape.constant(state.c)},
                                 chosen.relation, chosen.entity);
  ReasonerState out = state;
  out.e_t = chosen.entity;
  out.r_t = chosen.relation;
  out.h = tape.value(next.h);
  out.c = tape.value(next.c);
  return out;
}

std::vector<double> Reasoner::policy_distribution(const ReasonerState& state,
                                                  const JointActionSpace& space) const {
  Tape tape(store_);
  const Var logits = tape_logits(tape, state.e_s, state.r_q, tape.constant(state.h), space);
  const auto& v = tape.value(logits);
  return softmax(v.data);
}

std::vector<Var> Reasoner::replay_log_probs(Tape& tape, const Trajectory& trajectory) const {
  std::vector<Var> out;
  out.reserve(trajectory.steps.size());
  LstmState st = tape_initial(tape);
  const auto& q = trajectory.query;
  for (std::size_t t = 0; t < trajectory.steps.size(); ++t) {
    const auto& step = trajectory.steps[t];
    const JointActionSpace space{step.actions};
    const Var logits = tape_logits(tape, q.subject, q.relation, st.h, space, step.boost);
    out.push_back(tape.categorical_log_prob(logits, step.chosen));
    if (t + 1 < trajectory.steps.size())
      st = tape_advance(tape, st, step.action().relation, step.action().entity);
  }
  return out;
}

JointActionSpace build_action_space(const KnowledgeGraph& kg, const AugmentationHandle* handle,
                                    EntityId e_t, RelationId self_loop,
                                    const ActionSpaceOptions& options, Rng* rng) {
  kg.check_entity(e_t);
  auto masked = [&](RelationId r, EntityId e) {
    return options.masked && options.masked->subject == e_t && options.masked->relation == r &&
           options.masked->object == e;
  };

  std::vector<Action> base;
  std::set<std::pair<RelationId, EntityId>> seen;
  auto take_base = [&](std::span<const Edge> edges) {
    for (const auto& e : edges) {
      if (masked(e.relation, e.target)) continue;
      if (rng && options.dropout_rate > 0.0 && rng->bernoulli(options.dropout_rate)) continue;
      if (seen.emplace(e.relation, e.target).second)
        base.push_back({e.relation, e.target, ActionSource::base});
    }
  };
  take_base(kg.base_out_edges(e_t));
  take_base(kg.retained_out_edges(e_t));
  std::sort(base.begin(), base.end(), [](const Action& a, const Action& b) {
    return std::pair(a.relation, a.entity) < std::pair(b.relation, b.entity);
  });

  std::vector<Action> suggested;
  if (handle) {
    for (const auto& e : handle->live_out(e_t)) {
      if (masked(e.relation, e.target)) continue;
      if (kg.contains(Triple{e_t, e.relation, e.target})) {
        // already a graph edge: keep as base even if drop-out removed it
        if (seen.emplace(e.relation, e.target).second)
          base.push_back({e.relation, e.target, ActionSource::base});
        continue;
      }
      if (seen.emplace(e.relation, e.target).second)
        suggested.push_back({e.relation, e.target, ActionSource::suggested});
    }
  }

  const std::size_t cap = std::max<std::size_t>(options.max_actions, 1);
  if (suggested.size() + 1 > cap) suggested.resize(cap - 1);
  const std::size_t room = cap - 1 - suggested.size();
  if (base.size() > room) {
    Rng local(mix64(static_cast<std::uint64_t>(e_t)));
    Rng& r = rng ? *rng : local;
    std::vector<std::size_t> idx(base.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    r.shuffle(idx.begin(), idx.end());
    idx.resize(room);
    std::sort(idx.begin(), idx.end());
    std::vector<Action> kept;
    kept.reserve(room);
    for (auto i : idx) kept.push_back(base[i]);
    base = std::move(kept);
  }

  JointActionSpace space;
  space.actions = std::move(base);
  space.actions.insert(space.actions.end(), suggested.begin(), suggested.end());
  space.actions.push_back({self_loop, e_t, ActionSource::base});
  return space;
}

Trajectory rollout(const Triple& query, const KnowledgeGraph& kg, AugmentationHandle& handle,
                   const Reasoner& reasoner, const Suggester& suggester,
                   const RolloutOptions& options, Rng& rng) {
  if (options.horizon == 0) throw ConfigError("rollout horizon must be at least 1");
  Trajectory traj;
  traj.query = query;
  Tape tape(reasoner.store());
  LstmState st = reasoner.tape_initial(tape);
  EntityId e_t = query.subject;
  RelationId r_t = reasoner.start_token();

  ActionSpaceOptions space_opts;
  space_opts.dropout_rate = options.dropout_rate;
  space_opts.max_actions = reasoner.config().max_actions;
  if (options.mask_query) space_opts.masked = query;

  for (std::size_t t = 0; t < options.horizon; ++t) {
    if (suggester) {
      const auto suggestions = suggester(e_t, rng);
      kg.augment_temporary(handle, suggestions);
    }
    const auto space = build_action_space(kg, &handle, e_t, reasoner.self_loop(), space_opts, &rng);
    const Var logits = reasoner.tape_logits(tape, query.subject, query.relation, st.h, space);
    const auto& z = tape.value(logits).data;

    TrajectoryStep step;
    step.location = e_t;
    step.arrived_by = r_t;
    if (options.picker) {
      const auto probs = softmax(z);
      step.chosen = options.picker(space, probs);
      step.log_prob = std::log(probs.at(step.chosen));
    } else if (options.mode == SamplingMode::greedy) {
      step.chosen = argmax(z);
      step.log_prob = log_softmax(z)[step.chosen];
    } else {
      const bool active = options.mode == SamplingMode::adaptive;
      const auto s = adaptive_sample(z, space.suggested_mask(), options.boost, active, rng);
      step.chosen = s.index;
      step.log_prob = s.log_prob;
      if (active) step.boost = options.boost;
    }
    step.actions = space.actions;
    const Action a = step.action();
    if (a.provenance == ActionSource::suggested)
      step.origin = handle.origin(Triple{e_t, a.relation, a.entity});
    if (t + 1 < options.horizon) st = reasoner.tape_advance(tape, st, a.relation, a.entity);
    e_t = a.entity;
    r_t = a.relation;
    traj.steps.push_back(std::move(step));
  }
  traj.terminal_reward = e_t == query.object ? 1.0 : 0.0;
  traj.steps.back().reward = traj.terminal_reward;
  return traj;
}

TripleSet positive_edges(const Trajectory& trajectory) {
  TripleSet out;
  if (trajectory.terminal_reward <= 0.0) return out;
  for (const auto& s : trajectory.steps)
    if (s.action().provenance == ActionSource::suggested && s.origin) out.insert(*s.origin);
  return out;
}

Trajectory run_episode(const Triple& query, KnowledgeGraph& kg, const Reasoner& reasoner,
                       const Suggester& suggester, const RolloutOptions& options, Rng& rng,
                       std::size_t* retained) {
  auto handle = kg.augment_temporary(std::span<const Triple>{});
  auto traj = rollout(query, kg, handle, reasoner, suggester, options, rng);
  const auto n = kg.resolve_episode(handle, positive_edges(traj));
  if (retained) *retained = n;
  return traj;
}

std::string dump_trajectory(const Trajectory& trajectory, const KnowledgeGraph& kg,
                            const Reasoner& reasoner) {
  auto rel_name = [&](RelationId r) -> std::string {
    if (r == reasoner.self_loop()) return "NO_OP";
    if (r == reasoner.start_token()) return "START";
    return kg.relations().name(r);
  };
  std::string out;
  for (std::size_t t = 0; t < trajectory.steps.size(); ++t) {
    const auto& s = trajectory.steps[t];
    nlohmann::json j;
    j["step"] = t;
    j["location"] = kg.entities().name(s.location);
    j["arrived_by"] = rel_name(s.arrived_by);
    j["relation"] = rel_name(s.action().relation);
    j["entity"] = kg.entities().name(s.action().entity);
    j["provenance"] = s.action().provenance == ActionSource::suggested ? "suggested" : "base";
    j["log_prob"] = s.log_prob;
    j["reward"] = s.reward;
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace cpl
