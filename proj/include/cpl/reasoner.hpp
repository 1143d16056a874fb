#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cpl/diff/parameter_store.hpp"
#include "cpl/diff/tape.hpp"
#include "cpl/graph_store.hpp"
#include "cpl/random.hpp"

namespace cpl {

struct ReasonerConfig {
  std::size_t embed_dim = 50;
  std::size_t hidden_dim = 50;
  std::size_t mlp_dim = 100;
  std::size_t max_actions = 200;
};

enum class ActionSource : std::uint8_t { base, suggested };

struct Action {
  RelationId relation = 0;
  EntityId entity = 0;
  ActionSource provenance = ActionSource::base;

  friend bool operator==(const Action&, const Action&) = default;
};

struct JointActionSpace {
  std::vector<Action> actions;

  std::size_t size() const { return actions.size(); }
  std::vector<bool> suggested_mask() const;
};

struct ReasonerState {
  EntityId e_s = 0;
  RelationId r_q = 0;
  EntityId e_t = 0;
  RelationId r_t = 0;
  diff::Matrix h;
  diff::Matrix c;
};

struct ActionSpaceOptions {
  double dropout_rate = 0.0;
  std::size_t max_actions = 200;
  // Training rollouts hide the query fact itself from its subject.
  std::optional<Triple> masked;
};

enum class SamplingMode { stochastic, greedy, adaptive };

// Suggestion source queried at every step; returns triples whose subject is
// the given entity. Empty function = no extractor.
using Suggester = std::function<std::vector<Triple>(EntityId, Rng&)>;

// Test hook: overrides the sampled action.
using ActionPicker = std::function<std::size_t(const JointActionSpace&, std::span<const double>)>;

struct RolloutOptions {
  std::size_t horizon = 3;
  SamplingMode mode = SamplingMode::stochastic;
  double boost = 2.0;
  double dropout_rate = 0.0;
  bool mask_query = true;
  ActionPicker picker;
};

struct TrajectoryStep {
  EntityId location = 0;
  RelationId arrived_by = 0;
  std::vector<Action> actions;
  std::size_t chosen = 0;
  double log_prob = 0.0;  // under the distribution actually sampled from
  double boost = 0.0;     // added to suggested logits at sampling time
  double reward = 0.0;
  std::optional<Triple> origin;  // suggestion behind a suggested choice

  const Action& action() const { return actions[chosen]; }
};

struct Trajectory {
  Triple query;
  std::vector<TrajectoryStep> steps;
  double terminal_reward = 0.0;

  EntityId final_entity() const;
  std::vector<double> rewards() const;
};

class Reasoner {
 public:
  Reasoner(const ReasonerConfig& config, std::size_t entity_count, std::size_t relation_count);

  const ReasonerConfig& config() const { return config_; }
  diff::ParameterStore& store() { return store_; }
  const diff::ParameterStore& store() const { return store_; }
  void init(Rng& rng) { store_.init_uniform(rng); }

  RelationId self_loop() const { return static_cast<RelationId>(relation_count_); }
  RelationId start_token() const { return static_cast<RelationId>(relation_count_ + 1); }
  std::size_t entity_count() const { return entity_count_; }
  std::size_t relation_count() const { return relation_count_; }

  ReasonerState init_state(EntityId e_s, RelationId r_q) const;
  ReasonerState advance_history(const ReasonerState& state, const Action& chosen) const;
  std::vector<double> policy_distribution(const ReasonerState& state,
                                          const JointActionSpace& space) const;

  // Tape-level building blocks shared by rollouts, replay and beam search.
  diff::LstmState tape_initial(diff::Tape& tape) const;
  diff::LstmState tape_advance(diff::Tape& tape, diff::LstmState prev, RelationId r,
                               EntityId e) const;
  diff::Var tape_logits(diff::Tape& tape, EntityId e_s, RelationId r_q, diff::Var h,
                        const JointActionSpace& space, double boost = 0.0) const;

  // Log-probs of every recorded step recomputed on `tape` with the stored
  // boosts.
  std::vector<diff::Var> replay_log_probs(diff::Tape& tape, const Trajectory& trajectory) const;

 private:
  void check_ids(EntityId e, RelationId r) const;

  ReasonerConfig config_;
  std::size_t entity_count_;
  std::size_t relation_count_;
  diff::ParameterStore store_;
  diff::ParamId entity_emb_, relation_emb_, w1_, w2_;
  diff::LstmParams lstm_;
};

// Base and retained out-edges of e_t (subject to drop-out when rng is given)
// unioned with the handle's live edges at e_t, deduplicated, then a self-loop.
JointActionSpace build_action_space(const KnowledgeGraph& kg, const AugmentationHandle* handle,
                                    EntityId e_t, RelationId self_loop,
                                    const ActionSpaceOptions& options, Rng* rng);

// One episode of `options.horizon` steps. Suggestions fetched at each step are
// added to `handle`; resolution is left to the caller.
Trajectory rollout(const Triple& query, const KnowledgeGraph& kg, AugmentationHandle& handle,
                   const Reasoner& reasoner, const Suggester& suggester,
                   const RolloutOptions& options, Rng& rng);

// Origins of the suggested edges used by a successful trajectory.
TripleSet positive_edges(const Trajectory& trajectory);

// rollout + resolve_episode in one go.
Trajectory run_episode(const Triple& query, KnowledgeGraph& kg, const Reasoner& reasoner,
                       const Suggester& suggester, const RolloutOptions& options, Rng& rng,
                       std::size_t* retained = nullptr);

// One JSON object per step.
std::string dump_trajectory(const Trajectory& trajectory, const KnowledgeGraph& kg,
                            const Reasoner& reasoner);

}  // namespace cpl
