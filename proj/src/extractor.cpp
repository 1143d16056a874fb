#include "cpl/extractor.hpp"

#include <algorithm>
#include <array>
#include <numeric>

#include "cpl/errors.hpp"
#include "cpl/sampling.hpp"

namespace cpl {

using diff::Tape;
using diff::Var;

Extractor::Extractor(const ExtractorConfig& config, std::size_t word_count,
                     std::size_t forward_relations)
    : config_(config), word_count_(word_count), forward_relations_(forward_relations) {
  if (config.word_dim == 0 || config.filters == 0 || config.kernel_width % 2 == 0)
    throw ConfigError("extractor needs positive dimensions and an odd kernel width");
  if (forward_relations == 0) throw ConfigError("extractor needs at least one relation");
  const auto in = config.word_dim + 2 * config.position_dim;
  const auto rows = 2 * config.position_window + 1;
  const auto d = encoding_dim();
  words_ = store_.add("extractor.word_embedding", std::max<std::size_t>(word_count, 1), config.word_dim);
  pos_head_ = store_.add("extractor.position_head", rows, std::max<std::size_t>(config.position_dim, 1));
  pos_tail_ = store_.add("extractor.position_tail", rows, std::max<std::size_t>(config.position_dim, 1));
  conv_w_ = store_.add("extractor.conv.filters", config.filters, config.kernel_width * in);
  conv_b_ = store_.add("extractor.conv.bias", config.filters, 1);
  queries_ = store_.add("extractor.attention.queries", class_count(), d);
  out_m_ = store_.add("extractor.output.relations", class_count(), d);
  out_d_ = store_.add("extractor.output.bias", class_count(), 1);
  policy_w_ = store_.add("extractor.policy.w", d, d);
}

void Extractor::init(Rng& rng) {
  store_.init_uniform(rng);
  auto& w = store_.value(policy_w_);
  w.fill(0.0);
  for (std::size_t i = 0; i < w.rows; ++i) w(i, i) = 1.0;
}

Var Extractor::tape_encode_sentence(Tape& tape, const Sentence& s) const {
  const auto len = s.tokens.size();
  if (len == 0) throw DimensionError("empty sentence");
  const auto w = static_cast<std::int32_t>(config_.position_window);
  std::vector<std::int32_t> tokens(len), ph(len), pt(len);
  for (std::size_t i = 0; i < len; ++i) {
    const auto tok = s.tokens[i];
    tokens[i] = tok >= 0 && static_cast<std::size_t>(tok) < word_count_ ? tok : Corpus::kUnknownToken;
    const auto pos = static_cast<std::int32_t>(i);
    ph[i] = std::clamp(pos - s.head_pos, -w, w) + w;
    pt[i] = std::clamp(pos - s.tail_pos, -w, w) + w;
  }
  Var x = tape.gather_rows(words_, tokens);
  if (config_.position_dim > 0) {
    const std::array<Var, 3> cols{x, tape.gather_rows(pos_head_, ph), tape.gather_rows(pos_tail_, pt)};
    x = tape.concat_cols(cols);
  }
  const auto lo = static_cast<std::size_t>(std::min(s.head_pos, s.tail_pos));
  const auto hi = static_cast<std::size_t>(std::max(s.head_pos, s.tail_pos));
  const Var y = tape.conv1d(x, tape.param(conv_w_), tape.param(conv_b_), config_.kernel_width);
  return tape.tanh(tape.piecewise_max_pool(y, lo, hi));
}

Var Extractor::tape_bag_matrix(Tape& tape, const SentenceBag& bag) const {
  if (bag.sentences.empty()) throw DimensionError("empty sentence bag");
  std::vector<Var> rows;
  rows.reserve(bag.sentences.size());
  for (const auto& s : bag.sentences) rows.push_back(tape_encode_sentence(tape, s));
  return tape.stack_rows(rows);
}

Var Extractor::tape_attend(Tape& tape, Var sentences, RelationId r) const {
  const Var alpha = tape.softmax(tape.matvec(sentences, tape.embed_lookup(queries_, r)));
  return tape.matvec_t(sentences, alpha);
}

Var Extractor::tape_relation_logits(Tape& tape, const SentenceBag& bag) const {
  const Var x = tape_bag_matrix(tape, bag);
  std::vector<Var> logits;
  logits.reserve(class_count());
  for (std::size_t c = 0; c < class_count(); ++c) {
    const auto r = static_cast<RelationId>(c);
    const Var s = tape_attend(tape, x, r);
    logits.push_back(tape.add(tape.dot(tape.embed_lookup(out_m_, r), s), tape.embed_lookup(out_d_, r)));
  }
  return tape.concat(logits);
}

Var Extractor::tape_supervised_loss(Tape& tape, const SentenceBag& bag, RelationId label) const {
  if (label < 0 || static_cast<std::size_t>(label) >= class_count())
    throw LookupError("label " + std::to_string(label) + " is not an extractor class");
  const Var x = tape_bag_matrix(tape, bag);
  const Var s = tape_attend(tape, x, label);
  const Var o = tape.affine(tape.param(out_m_), s, tape.param(out_d_));
  return tape.scale(tape.categorical_log_prob(o, static_cast<std::size_t>(label)), -1.0);
}

Extractor::PolicyTable Extractor::tape_policy(Tape& tape, std::span<const SentenceBag> bags) const {
  PolicyTable table;
  if (bags.empty()) return table;
  std::vector<Var> scores;
  scores.reserve(bags.size() * forward_relations_);
  const Var w = tape.param(policy_w_);
  for (std::size_t j = 0; j < bags.size(); ++j) {
    const Var x = tape_bag_matrix(tape, bags[j]);
    for (std::size_t c = 0; c < forward_relations_; ++c) {
      const auto r = static_cast<RelationId>(c);
      const Var u = tape.matvec(w, tape_attend(tape, x, r));
      scores.push_back(tape.add(tape.dot(tape.embed_lookup(out_m_, r), u), tape.embed_lookup(out_d_, r)));
      table.entries.emplace_back(j, r);
    }
  }
  table.logits = tape.concat(scores);
  return table;
}

Var Extractor::tape_action_log_prob(Tape& tape, const Corpus& corpus, EntityId subject,
                                    RelationId relation, EntityId object) const {
  const auto bags = corpus.bags_for_subject(subject);
  const auto table = tape_policy(tape, bags);
  for (std::size_t i = 0; i < table.entries.size(); ++i) {
    const auto [j, r] = table.entries[i];
    if (r == relation && bags[j].pair.second == object) return tape.categorical_log_prob(table.logits, i);
  }
  throw LookupError("extraction action is not derivable from the subject's bags");
}

std::vector<double> Extractor::encode_sentence(const Sentence& s) const {
  Tape tape(store_);
  return tape.value(tape_encode_sentence(tape, s)).data;
}

BagEncoding Extractor::encode_bag(const SentenceBag& bag) const {
  Tape tape(store_);
  const Var x = tape_bag_matrix(tape, bag);
  BagEncoding enc;
  std::vector<double> logits;
  for (std::size_t c = 0; c < class_count(); ++c) {
    const auto r = static_cast<RelationId>(c);
    const Var alpha = tape.softmax(tape.matvec(x, tape.embed_lookup(queries_, r)));
    const Var s = tape.matvec_t(x, alpha);
    enc.attention.push_back(tape.value(alpha).data);
    enc.attended.push_back(tape.value(s).data);
    const Var l = tape.add(tape.dot(tape.embed_lookup(out_m_, r), s), tape.embed_lookup(out_d_, r));
    logits.push_back(tape.scalar(l));
  }
  enc.relation_scores = softmax(logits);
  return enc;
}

std::vector<double> Extractor::relation_scores(const SentenceBag& bag) const {
  Tape tape(store_);
  return softmax(tape.value(tape_relation_logits(tape, bag)).data);
}

std::vector<ExtractionAction> Extractor::extraction_policy(const Corpus& corpus,
                                                           EntityId subject) const {
  const auto bags = corpus.bags_for_subject(subject);
  std::vector<ExtractionAction> out;
  if (bags.empty()) return out;
  Tape tape(store_);
  const auto table = tape_policy(tape, bags);
  const auto probs = softmax(tape.value(table.logits).data);
  out.reserve(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto [j, r] = table.entries[i];
    out.push_back({r, bags[j].pair.second, bags[j].pair, probs[i], j});
  }
  return out;
}

std::vector<Triple> suggest_edges(std::span<const ExtractionAction> policy, EntityId subject,
                                  std::size_t k, SuggestMode mode, Rng* rng) {
  if (k == 0) throw ConfigError("suggestion count must be at least 1");
  std::vector<Triple> out;
  const auto n = std::min(k, policy.size());
  if (n == 0) return out;
  if (mode == SuggestMode::top || rng == nullptr) {
    std::vector<std::size_t> idx(policy.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return policy[a].score > policy[b].score; });
    for (std::size_t i = 0; i < n; ++i)
      out.push_back({subject, policy[idx[i]].relation, policy[idx[i]].object});
    return out;
  }
  std::vector<double> w(policy.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = policy[i].score;
  for (std::size_t draw = 0; draw < n; ++draw) {
    double total = 0.0;
    for (double x : w) total += x;
    if (total <= 0.0) break;
    double u = rng->uniform() * total;
    std::size_t pick = w.size();
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (w[i] <= 0.0) continue;
      pick = i;
      if (u < w[i]) break;
      u -= w[i];
    }
    out.push_back({subject, policy[pick].relation, policy[pick].object});
    w[pick] = 0.0;
  }
  return out;
}

const std::vector<ExtractionAction>& PolicyCache::get(EntityId subject) {
  {
    std::lock_guard lock(mutex_);
    if (version_ != extractor_->store().version()) {
      entries_.clear();
      version_ = extractor_->store().version();
    }
    if (auto it = entries_.find(subject); it != entries_.end()) return it->second;
  }
  auto policy = extractor_->extraction_policy(*corpus_, subject);
  std::lock_guard lock(mutex_);
  return entries_.try_emplace(subject, std::move(policy)).first->second;
}

void PolicyCache::clear() {
  std::lock_guard lock(mutex_);
  entries_.clear();
}

Suggester make_suggester(PolicyCache& cache, std::size_t k, SuggestMode mode) {
  return [&cache, k, mode](EntityId e, Rng& rng) {
    return suggest_edges(cache.get(e), e, k, mode, mode == SuggestMode::sample ? &rng : nullptr);
  };
}

std::vector<double> assign_extractor_rewards(const Trajectory& trajectory) {
  std::vector<double> r(trajectory.steps.size(), 0.0);
  if (trajectory.terminal_reward <= 0.0) return r;
  for (std::size_t t = 0; t < r.size(); ++t)
    if (trajectory.steps[t].action().provenance == ActionSource::suggested) r[t] = 1.0;
  return r;
}

}  // namespace cpl
