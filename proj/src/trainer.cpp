#include "cpl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "cpl/errors.hpp"

namespace cpl {

using diff::Tape;
using diff::Var;

void validate_config(const TrainerConfig& c) {
  if (c.e_a > c.e_m) throw ConfigError("e_a must not exceed e_m");
  if (!(c.lr > 0.0)) throw ConfigError("lr must be positive");
  if (c.extractor_lr < 0.0) throw ConfigError("extractor_lr must not be negative");
  if (c.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (c.horizon == 0) throw ConfigError("horizon must be at least 1");
  if (c.rollouts_per_query == 0) throw ConfigError("rollouts_per_query must be positive");
  if (c.gamma_reasoner < 0.0 || c.gamma_reasoner > 1.0 || c.gamma_extractor < 0.0 ||
      c.gamma_extractor > 1.0)
    throw ConfigError("discount factors must lie in [0, 1]");
  if (c.dropout_rate < 0.0 || c.dropout_rate >= 1.0) throw ConfigError("dropout_rate must lie in [0, 1)");
  if (c.k_suggestions == 0) throw ConfigError("k_suggestions must be positive");
  if (c.beam_width == 0) throw ConfigError("beam_width must be positive");
}

std::vector<double> compute_returns(std::span<const double> rewards, double gamma) {
  if (gamma < 0.0 || gamma > 1.0) throw ConfigError("gamma must lie in [0, 1]");
  std::vector<double> g(rewards.size());
  double acc = 0.0;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    acc = rewards[t] + gamma * acc;
    g[t] = acc;
  }
  return g;
}

bool accumulate_policy_gradient(Tape& tape, diff::ParameterStore& store,
                                std::span<const PolicyTerm> terms, double normalizer) {
  if (!(normalizer > 0.0)) throw ConfigError("normalizer must be positive");
  Var loss;
  for (const auto& t : terms) {
    if (t.ret == 0.0) continue;
    const Var term = tape.scale(t.log_prob, -t.ret / normalizer);
    loss = loss.valid() ? tape.add(loss, term) : term;
  }
  if (!loss.valid()) return false;
  tape.backward(loss, store);
  return true;
}

bool reinforce_update(Tape& tape, diff::ParameterStore& store, std::span<const PolicyTerm> terms,
                      double normalizer, const diff::AdamConfig& adam) {
  if (!accumulate_policy_gradient(tape, store, terms, normalizer)) return false;
  diff::adam_update(store, adam);
  return true;
}

// ---------------------------------------------------------------------------

Trainer::Trainer(const TrainerConfig& config, KnowledgeGraph& kg, const Corpus* corpus,
                 Reasoner& reasoner, Extractor* extractor, std::uint64_t seed)
    : config_(config),
      kg_(&kg),
      corpus_(corpus),
      reasoner_(&reasoner),
      extractor_(extractor),
      root_(seed),
      reasoner_memory_(config.reasoner_memory),
      extractor_memory_(config.extractor_memory) {
  validate_config(config);
  if (extractor_ && !corpus_) throw ConfigError("an extractor needs a corpus");
  if (extractor_) cache_ = std::make_unique<PolicyCache>(*extractor_, *corpus_);
}

Experience Trainer::generate(std::span<const Query> queries, std::size_t epoch, std::size_t batch,
                             bool adaptive, bool parallel) const {
  const std::size_t per = config_.rollouts_per_query;
  const std::size_t n = queries.size() * per;
  Experience exp;
  exp.trajectories.resize(n);
  exp.handles.resize(n);
  Suggester suggester;
  if (extractor_active()) suggester = make_suggester(*cache_, config_.k_suggestions, SuggestMode::sample);
  RolloutOptions opts;
  opts.horizon = config_.horizon;
  opts.mode = adaptive ? SamplingMode::adaptive : SamplingMode::stochastic;
  opts.boost = config_.boost;
  opts.dropout_rate = config_.dropout_rate;
  opts.mask_query = true;
  const auto stream = (static_cast<std::uint64_t>(epoch) << 40) ^ (static_cast<std::uint64_t>(batch) << 20);

#pragma omp parallel for schedule(dynamic) if (parallel)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
    const auto k = static_cast<std::size_t>(i);
    Rng rng = root_.child("rollout", stream ^ k);
    auto& handle = exp.handles[k];
    handle = kg_->augment_temporary(std::span<const Triple>{});
    exp.trajectories[k] = rollout(queries[k / per].triple, *kg_, handle, *reasoner_, suggester, opts, rng);
  }
  return exp;
}

BatchStats Trainer::absorb(Experience& experience) {
  BatchStats stats;
  for (std::size_t i = 0; i < experience.trajectories.size(); ++i) {
    auto& traj = experience.trajectories[i];
    stats.retained += kg_->resolve_episode(experience.handles[i], positive_edges(traj));
    ++stats.rollouts;
    const auto rewards = assign_extractor_rewards(traj);
    if (traj.terminal_reward > 0.0) {
      ++stats.successes;
      for (std::size_t t = 0; t < traj.steps.size(); ++t) {
        const auto& s = traj.steps[t];
        const Triple edge{s.location, s.action().relation, s.action().entity};
        if (rewards[t] > 0.0 || kg_->has_retained(edge)) ++stats.suggested_on_positive;
      }
    }
    if (extractor_active()) {
      for (std::size_t t = 0; t < traj.steps.size(); ++t) {
        const auto& s = traj.steps[t];
        if (s.action().provenance != ActionSource::suggested || !s.origin) continue;
        extractor_memory_.push({s.origin->subject, s.origin->relation, s.origin->object, rewards[t]});
      }
    }
    reasoner_memory_.push(std::move(traj));
  }
  return stats;
}

bool Trainer::update_reasoner(Rng& rng) {
  const auto batch = reasoner_memory_.sample(config_.batch_size, rng);
  if (batch.empty()) {
    std::cerr << "warning: reasoner memory empty, update skipped\n";
    return false;
  }
  double baseline = 0.0;
  if (config_.reinforce_baseline) {
    for (const auto* t : batch) baseline += t->terminal_reward;
    baseline /= static_cast<double>(batch.size());
  }
  Tape tape(reasoner_->store());
  std::vector<PolicyTerm> terms;
  for (const auto* traj : batch) {
    auto g = compute_returns(traj->rewards(), config_.gamma_reasoner);
    for (auto& x : g) x -= baseline;
    if (std::all_of(g.begin(), g.end(), [](double x) { return x == 0.0; })) continue;
    const auto lps = reasoner_->replay_log_probs(tape, *traj);
    for (std::size_t t = 0; t < lps.size(); ++t) terms.push_back({lps[t], g[t]});
  }
  return reinforce_update(tape, reasoner_->store(), terms, static_cast<double>(batch.size()),
                          diff::AdamConfig{config_.lr});
}

bool Trainer::update_extractor(Rng& rng) {
  if (!extractor_active() || config_.freeze_extractor) return false;
  const auto batch = extractor_memory_.sample(config_.batch_size, rng);
  if (batch.empty()) {
    std::cerr << "warning: extractor memory empty, update skipped\n";
    return false;
  }
  Tape tape(extractor_->store());
  std::vector<PolicyTerm> terms;
  for (const auto* rec : batch) {
    const double reward = rec->reward;
    const double g = compute_returns(std::span<const double>(&reward, 1), config_.gamma_extractor)[0];
    if (g == 0.0) continue;
    terms.push_back({extractor_->tape_action_log_prob(tape, *corpus_, rec->entity, rec->relation, rec->object), g});
  }
  const double lr = config_.extractor_lr > 0.0 ? config_.extractor_lr : config_.lr;
  return reinforce_update(tape, extractor_->store(), terms, static_cast<double>(batch.size()),
                          diff::AdamConfig{lr});
}

EpochRecord Trainer::run_epoch(std::size_t epoch, std::span<const Query> train,
                               std::span<const Query> valid) {
  EpochRecord rec;
  rec.epoch = epoch;
  rec.adaptive = extractor_active() && epoch < config_.e_a;
  std::vector<Query> order(train.begin(), train.end());
  Rng order_rng = root_.child("order", epoch);
  order_rng.shuffle(order.begin(), order.end());
  Rng update_rng = root_.child("update", epoch);

  for (std::size_t begin = 0, b = 0; begin < order.size(); begin += config_.batch_size, ++b) {
    const auto end = std::min(order.size(), begin + config_.batch_size);
    auto exp = generate(std::span<const Query>(order).subspan(begin, end - begin), epoch, b,
                        rec.adaptive, config_.parallel);
    if (rec.adaptive) ++boosted_batches_;
    const auto stats = absorb(exp);
    rec.rollouts += stats.rollouts;
    rec.successes += stats.successes;
    rec.suggested_on_positive += stats.suggested_on_positive;
    for (std::size_t i = 0; i < config_.b_r; ++i) rec.reasoner_updates += update_reasoner(update_rng) ? 1 : 0;
    if (extractor_active() && !config_.freeze_extractor)
      for (std::size_t i = 0; i < config_.b_e; ++i)
        rec.extractor_updates += update_extractor(update_rng) ? 1 : 0;
  }
  rec.retained_total = kg_->retained_count();
  if (config_.validate && !valid.empty()) rec.valid = evaluate(valid);
  return rec;
}

TrainResult Trainer::train(std::span<const Query> train, std::span<const Query> valid,
                           const std::function<void(const EpochRecord&)>& on_epoch) {
  TrainResult result;
  ModelSnapshot best;
  bool have_best = false;
  for (std::size_t epoch = 0; epoch < config_.e_m; ++epoch) {
    auto rec = run_epoch(epoch, train, valid);
    if (config_.validate && !valid.empty() && rec.valid.mrr > result.best_mrr) {
      result.best_mrr = rec.valid.mrr;
      result.best_epoch = epoch;
      best = snapshot();
      have_best = true;
    }
    if (on_epoch) on_epoch(rec);
    result.epochs.push_back(rec);
  }
  if (have_best) restore(best);
  result.boosted_batches = boosted_batches_;
  return result;
}

MetricSummary Trainer::evaluate(std::span<const Query> queries) const {
  EvalOptions opts;
  opts.beam = {config_.beam_width, config_.horizon};
  opts.k_suggestions = config_.k_suggestions;
  opts.parallel = config_.parallel;
  const auto outcomes = evaluate_queries(queries, *kg_, *reasoner_,
                                         extractor_active() ? extractor_ : nullptr, corpus_, opts);
  const auto ranks = ranks_of(outcomes);
  return summarize(ranks, config_.hits_rule);
}

ModelSnapshot Trainer::snapshot() const {
  ModelSnapshot s;
  for (diff::ParamId id = 0; id < reasoner_->store().size(); ++id)
    s.reasoner.push_back(reasoner_->store().value(id));
  if (extractor_)
    for (diff::ParamId id = 0; id < extractor_->store().size(); ++id)
      s.extractor.push_back(extractor_->store().value(id));
  s.retained = kg_->retained();
  return s;
}

void Trainer::restore(const ModelSnapshot& s) {
  auto put = [](diff::ParameterStore& store, const std::vector<diff::Matrix>& values) {
    if (values.size() != store.size()) throw DimensionError("snapshot does not match the model");
    bool changed = false;
    for (diff::ParamId id = 0; id < store.size(); ++id) {
      if (store.value(id).data != values[id].data) changed = true;
      store.value(id) = values[id];
    }
    if (changed) store.bump_version();
  };
  put(reasoner_->store(), s.reasoner);
  if (extractor_) put(extractor_->store(), s.extractor);
  kg_->reset_retained(s.retained);
}

TrainResult pretrain_reasoner(const TrainerConfig& config, KnowledgeGraph& kg,
                              std::span<const Query> queries, Reasoner& reasoner,
                              std::uint64_t seed) {
  TrainerConfig c = config;
  c.use_extractor = false;
  c.validate = false;
  c.e_m = config.pretrain_reasoner_epochs;
  c.e_a = 0;
  Trainer trainer(c, kg, nullptr, reasoner, nullptr, seed);
  return trainer.train(queries, {});
}

ExtractorPretrainResult pretrain_extractor(const TrainerConfig& config, const Corpus& corpus,
                                           std::span<const BagLabel> labels, Extractor& extractor,
                                           std::size_t epochs, std::uint64_t seed) {
  ExtractorPretrainResult result;
  Rng root(seed);
  std::vector<BagLabel> order(labels.begin(), labels.end());
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    Rng rng = root.child("pretrain-extractor", epoch);
    rng.shuffle(order.begin(), order.end());
    double total = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const auto end = std::min(order.size(), begin + config.batch_size);
      Tape tape(extractor.store());
      Var loss;
      for (std::size_t i = begin; i < end; ++i) {
        const Var l = tape.scale(
            extractor.tape_supervised_loss(tape, corpus.bags()[order[i].bag], order[i].relation),
            1.0 / static_cast<double>(end - begin));
        loss = loss.valid() ? tape.add(loss, l) : l;
      }
      total += tape.scalar(loss) * static_cast<double>(end - begin);
      tape.backward(loss, extractor.store());
      diff::adam_update(extractor.store(),
                        diff::AdamConfig{config.extractor_lr > 0.0 ? config.extractor_lr : config.lr});
    }
    result.epoch_loss.push_back(order.empty() ? 0.0 : total / static_cast<double>(order.size()));
  }
  return result;
}

double bag_label_accuracy(const Extractor& extractor, const Corpus& corpus,
                          std::span<const BagLabel> labels) {
  if (labels.empty()) throw MetricError("accuracy over zero labels");
  std::size_t ok = 0;
  for (const auto& l : labels) {
    const auto p = extractor.relation_scores(corpus.bags()[l.bag]);
    const auto best = static_cast<RelationId>(std::max_element(p.begin(), p.end()) - p.begin());
    ok += best == l.relation ? 1 : 0;
  }
  return static_cast<double>(ok) / static_cast<double>(labels.size());
}

}  // namespace cpl
