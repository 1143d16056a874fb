#include "cpl/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cpl/errors.hpp"

namespace cpl {

namespace fs = std::filesystem;

namespace {

Vocabulary read_names(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  Vocabulary v;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) v.add(line);
  }
  return v;
}

// Grows kg's vocabularies with every name used in `path`.
void absorb_names(KnowledgeGraph& kg, const fs::path& path) {
  const auto extra = KnowledgeGraph::load_triples(path, VocabMode::build, &kg);
  for (const auto& n : extra.entities().names()) kg.add_entity(n);
  for (const auto& n : extra.relations().names()) kg.add_relation(n);
}

std::set<RelationId> eval_relation_ids(const RunConfig& config, const KnowledgeGraph& kg) {
  std::set<RelationId> ids;
  if (config.eval_relations.empty()) {
    for (RelationId r = 0; r < static_cast<RelationId>(kg.relation_count()); ++r) ids.insert(r);
  } else {
    for (const auto& name : config.eval_relations) {
      const auto id = kg.relations().find(name);
      if (!id) throw ConfigError("evaluation relation '" + name + "' is not in the graph");
      ids.insert(*id);
    }
  }
  return ids;
}

std::vector<Query> as_queries(std::span<const Triple> triples, const std::set<RelationId>* keep) {
  std::vector<Query> out;
  for (const auto& t : triples)
    if (keep == nullptr || keep->contains(t.relation)) out.push_back(Query{t, ""});
  return out;
}

}  // namespace

Dataset load_dataset(const RunConfig& config, const fs::path& kg_path,
                     const std::optional<fs::path>& corpus_path, std::uint64_t seed) {
  Dataset data;
  if (!fs::exists(kg_path)) throw ParseError("no such dataset: " + kg_path.string());

  bool derived_train = false;
  if (fs::is_directory(kg_path) && fs::exists(kg_path / "graph.txt")) {
    Vocabulary entities, relations;
    if (fs::exists(kg_path / "entities.txt")) entities = read_names(kg_path / "entities.txt");
    if (fs::exists(kg_path / "relations.txt")) relations = read_names(kg_path / "relations.txt");
    const KnowledgeGraph seed_vocab(entities, relations);
    data.kg = KnowledgeGraph::load_triples(kg_path / "graph.txt", VocabMode::build, &seed_vocab);
    data.sources.push_back(kg_path / "graph.txt");
    auto queries = [&](const char* name) {
      const auto p = kg_path / name;
      if (!fs::exists(p)) return std::vector<Query>{};
      data.sources.push_back(p);
      return load_queries(p, data.kg);
    };
    data.train = queries("train_queries.txt");
    data.valid = queries("valid_queries.txt");
    data.test = queries("test_queries.txt");
    if (data.train.empty()) {
      const auto keep = eval_relation_ids(config, data.kg);
      data.train = as_queries(data.kg.triples(), &keep);
      derived_train = true;
    }
  } else if (fs::is_directory(kg_path)) {
    const auto train = kg_path / "train.txt";
    if (!fs::exists(train)) throw ParseError(kg_path.string() + " has neither graph.txt nor train.txt");
    data.kg = KnowledgeGraph::load_triples(train, VocabMode::build);
    data.sources.push_back(train);
    for (const char* name : {"valid.txt", "test.txt"})
      if (fs::exists(kg_path / name)) absorb_names(data.kg, kg_path / name);
    const auto keep = eval_relation_ids(config, data.kg);
    data.train = as_queries(data.kg.triples(), &keep);
    derived_train = true;
    if (fs::exists(kg_path / "valid.txt")) {
      data.valid = as_queries(data.kg.read_triples(kg_path / "valid.txt"), nullptr);
      data.sources.push_back(kg_path / "valid.txt");
    }
    if (fs::exists(kg_path / "test.txt")) {
      data.test = as_queries(data.kg.read_triples(kg_path / "test.txt"), nullptr);
      data.sources.push_back(kg_path / "test.txt");
    }
  } else {
    const auto full = KnowledgeGraph::load_triples(kg_path, VocabMode::build);
    data.sources.push_back(kg_path);
    const auto keep = eval_relation_ids(config, full);
    auto split = split_dataset(full, {config.split_train, config.split_valid, config.split_test},
                               keep, seed);
    data.kg = std::move(split.train);
    data.train = as_queries(data.kg.triples(), &keep);
    data.valid = as_queries(split.valid, nullptr);
    data.test = as_queries(split.test, nullptr);
    derived_train = true;
  }

  if (config.train_ratio < 1.0) {
    auto sub = subsample_train(data.kg, config.train_ratio, seed);
    if (derived_train) {
      const auto keep = eval_relation_ids(config, sub);
      data.train = as_queries(sub.triples(), &keep);
    } else {
      std::erase_if(data.train, [&](const Query& q) {
        return data.kg.has_base(q.triple) && !sub.has_base(q.triple);
      });
    }
    data.kg = std::move(sub);
  }

  std::optional<fs::path> corpus_file = corpus_path;
  if (!corpus_file && fs::is_directory(kg_path) && fs::exists(kg_path / "corpus.jsonl"))
    corpus_file = kg_path / "corpus.jsonl";
  if (corpus_file) {
    data.corpus = Corpus::load(*corpus_file, data.kg, config.corpus);
    data.sources.push_back(*corpus_file);
  }

  if (config.add_inverse) data.kg.add_inverse_edges();
  return data;
}

Models Models::clone() const {
  Models m;
  if (reasoner) m.reasoner = std::make_unique<Reasoner>(*reasoner);
  if (extractor) m.extractor = std::make_unique<Extractor>(*extractor);
  return m;
}

Models make_models(const RunConfig& config, const Dataset& data, std::uint64_t seed) {
  Models m;
  Rng root(seed);
  m.reasoner =
      std::make_unique<Reasoner>(config.reasoner, data.kg.entity_count(), data.kg.relation_count());
  auto r = root.child("init-reasoner", 0);
  m.reasoner->init(r);
  if (data.corpus) {
    m.extractor = std::make_unique<Extractor>(config.extractor, data.corpus->word_count(),
                                              data.kg.base_relation_count());
    auto e = root.child("init-extractor", 0);
    m.extractor->init(e);
  }
  return m;
}

std::uint64_t model_hash(const RunConfig& config, const Dataset& data) {
  return architecture_hash(config, data.kg.entity_count(), data.kg.relation_count(),
                           data.corpus ? data.corpus->word_count() : 0);
}

void save_models(const Models& models, const fs::path& dir, std::uint64_t hash) {
  fs::create_directories(dir);
  if (models.reasoner) diff::save_checkpoint(models.reasoner->store(), dir / "reasoner.ckpt", hash);
  if (models.extractor)
    diff::save_checkpoint(models.extractor->store(), dir / "extractor.ckpt", hash);
}

void load_models(Models& models, const fs::path& dir, std::uint64_t hash) {
  bool any = false;
  if (models.reasoner && fs::exists(dir / "reasoner.ckpt")) {
    diff::load_checkpoint(models.reasoner->store(), dir / "reasoner.ckpt", hash);
    any = true;
  }
  if (models.extractor && fs::exists(dir / "extractor.ckpt")) {
    diff::load_checkpoint(models.extractor->store(), dir / "extractor.ckpt", hash);
    any = true;
  }
  if (!any) throw ParseError("no checkpoint found in " + dir.string());
}

Variant parse_variant(std::string_view name) {
  if (name == "cpl") return Variant::cpl;
  if (name == "frozen-extractor") return Variant::frozen_extractor;
  if (name == "no-adaptive") return Variant::no_adaptive;
  if (name == "reasoner-only") return Variant::reasoner_only;
  throw ConfigError("unknown variant '" + std::string(name) + "'");
}

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::cpl: return "cpl";
    case Variant::frozen_extractor: return "frozen-extractor";
    case Variant::no_adaptive: return "no-adaptive";
    case Variant::reasoner_only: return "reasoner-only";
  }
  return "?";
}

TrainerConfig variant_config(const TrainerConfig& base, Variant v) {
  TrainerConfig c = base;
  switch (v) {
    case Variant::cpl: break;
    case Variant::frozen_extractor: c.freeze_extractor = true; break;
    case Variant::no_adaptive: c.e_a = 0; break;
    case Variant::reasoner_only: c.use_extractor = false; break;
  }
  return c;
}

TrainResult pretrain_reasoner_stage(const RunConfig& config, const Dataset& data, Models& models,
                                    std::uint64_t seed) {
  Rng root(seed);
  KnowledgeGraph kg = data.kg;
  return pretrain_reasoner(config.trainer, kg, data.train, *models.reasoner,
                           root.child("pretrain", 0).next());
}

ExtractorPretrainResult pretrain_extractor_stage(const RunConfig& config, const Dataset& data,
                                                 Models& models, std::uint64_t seed) {
  if (!models.extractor || !data.corpus) throw ConfigError("extractor pre-training needs a corpus");
  Rng root(seed);
  const auto labels = distant_supervision_labels(*data.corpus, data.kg);
  return pretrain_extractor(config.trainer, *data.corpus, labels, *models.extractor,
                            config.trainer.pretrain_extractor_epochs,
                            root.child("pretrain", 1).next());
}

PretrainLog pretrain_models(const RunConfig& config, const Dataset& data, Models& models,
                            std::uint64_t seed) {
  PretrainLog log;
  log.reasoner = pretrain_reasoner_stage(config, data, models, seed);
  if (models.extractor && data.corpus) log.extractor = pretrain_extractor_stage(config, data, models, seed);
  return log;
}

void write_triples(const std::filesystem::path& path, std::span<const Triple> triples,
                   const KnowledgeGraph& kg) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path.string());
  for (const auto& t : triples)
    out << kg.entities().name(t.subject) << '\t' << kg.relations().name(t.relation) << '\t'
        << kg.entities().name(t.object) << '\n';
}

std::size_t load_retained(KnowledgeGraph& kg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::size_t added = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    if (cols.size() != 3) throw ParseError(path.string() + ": expected 3 columns");
    added += kg.add_retained({kg.entities().at(cols[0]), kg.relations().at(cols[1]),
                              kg.entities().at(cols[2])});
  }
  return added;
}

TestReport evaluate_models(const RunConfig& config, const KnowledgeGraph& kg, const Models& models,
                           const Corpus* corpus, bool use_extractor, std::span<const Query> queries) {
  TestReport report;
  EvalOptions opts;
  opts.beam = {config.trainer.beam_width, config.trainer.horizon};
  opts.k_suggestions = config.trainer.k_suggestions;
  opts.parallel = config.trainer.parallel;
  opts.report_paths = config.report_paths;
  const Extractor* ex = use_extractor && corpus ? models.extractor.get() : nullptr;
  report.outcomes = evaluate_queries(queries, kg, *models.reasoner, ex, corpus, opts);
  const auto rule = config.trainer.hits_rule;
  auto part = [&](const std::string& label) {
    const auto ranks = ranks_of(report.outcomes, label);
    return ranks.empty() ? MetricSummary{} : summarize(ranks, rule);
  };
  report.all = part("");
  report.kg = part("kg");
  report.corpus = part("corpus");
  return report;
}

VariantRun run_variant(const RunConfig& config, const Dataset& data, Models& models, Variant v,
                       std::uint64_t seed, const std::function<void(const EpochRecord&)>& on_epoch) {
  VariantRun run;
  KnowledgeGraph kg = data.kg;
  const auto tc = variant_config(config.trainer, v);
  const Corpus* corpus = data.corpus ? &*data.corpus : nullptr;
  Extractor* ex = tc.use_extractor ? models.extractor.get() : nullptr;
  Trainer trainer(tc, kg, corpus, *models.reasoner, ex, seed);
  run.train = trainer.train(data.train, data.valid, on_epoch);
  run.retained = kg.retained();
  for (const auto& t : run.retained)
    if (!kg.is_inverse(t.relation)) ++run.retained_forward;
  RunConfig rc = config;
  rc.trainer = tc;
  if (!data.test.empty())
    run.test = evaluate_models(rc, kg, models, corpus, tc.use_extractor && ex != nullptr, data.test);
  return run;
}

std::size_t augment_two_step(KnowledgeGraph& kg, const Corpus& corpus, const Extractor& extractor,
                             double threshold) {
  std::size_t added = 0;
  const auto forward = static_cast<std::size_t>(extractor.no_relation());
  for (const auto& bag : corpus.bags()) {
    const auto scores = extractor.relation_scores(bag);
    const auto best = static_cast<RelationId>(
        std::max_element(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(forward)) -
        scores.begin());
    if (!(scores[static_cast<std::size_t>(best)] > threshold)) continue;
    const Triple t{bag.pair.first, best, bag.pair.second};
    if (!kg.add_retained(t)) continue;
    ++added;
    if (kg.has_inverse_edges() && kg.mirror_overlay())
      kg.add_retained(Triple{t.object, kg.inverse(t.relation), t.subject});
  }
  return added;
}

TwoStepResult run_two_step(const RunConfig& config, const Dataset& data, const Models& pretrained,
                           const std::vector<double>& thresholds, std::uint64_t seed) {
  if (!pretrained.extractor || !data.corpus) throw ConfigError("two-step baseline needs a corpus");
  if (thresholds.empty()) throw ConfigError("no baseline thresholds");
  TwoStepResult result;
  TrainerConfig tc = variant_config(config.trainer, Variant::reasoner_only);
  RunConfig rc = config;
  rc.trainer = tc;
  std::optional<Models> best_models;
  KnowledgeGraph best_kg;
  double best_mrr = -1.0;
  for (double threshold : thresholds) {
    KnowledgeGraph kg = data.kg;
    TwoStepPoint point;
    point.threshold = threshold;
    point.edges_added = augment_two_step(kg, *data.corpus, *pretrained.extractor, threshold);
    Models models = pretrained.clone();
    Trainer trainer(tc, kg, nullptr, *models.reasoner, nullptr, seed);
    trainer.train(data.train, data.valid);
    if (!data.valid.empty()) point.valid = trainer.evaluate(data.valid);
    result.grid.push_back(point);
    if (point.valid.mrr > best_mrr) {
      best_mrr = point.valid.mrr;
      result.best = point;
      best_models = std::move(models);
      best_kg = std::move(kg);
    }
  }
  if (!data.test.empty())
    result.test = evaluate_models(rc, best_kg, *best_models, nullptr, false, data.test);
  return result;
}

std::string metrics_csv_header() {
  return "epoch,adaptive,rollouts,success_rate,sug_edge_per_pos_path,retained,reasoner_updates,"
         "extractor_updates,valid_hits1,valid_hits5,valid_hits10,valid_mrr\n";
}

std::string metrics_csv_row(const EpochRecord& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%zu,%d,%zu,%.6f,%.6f,%zu,%zu,%zu,%.6f,%.6f,%.6f,%.6f\n", r.epoch,
                r.adaptive ? 1 : 0, r.rollouts, r.success_rate(), r.sug_edge_per_pos_path(),
                r.retained_total, r.reasoner_updates, r.extractor_updates, r.valid.hits1,
                r.valid.hits5, r.valid.hits10, r.valid.mrr);
  return buf;
}

std::string report_csv(const std::map<std::uint64_t, TestReport>& by_seed, const KnowledgeGraph& kg,
                       HitsRule rule) {
  std::ostringstream out;
  out << "seed,scope,count,hits@1,hits@5,hits@10,mrr\n";
  auto row = [&](const std::string& seed, const std::string& scope, std::size_t count,
                 double h1, double h5, double h10, double m) {
    char buf[256];
    std::snprintf(buf, sizeof buf, ",%zu,%.6f,%.6f,%.6f,%.6f\n", count, h1, h5, h10, m);
    out << seed << ',' << scope << buf;
  };
  std::map<std::string, std::vector<std::map<std::string, double>>> per_scope;
  std::map<std::string, std::size_t> scope_count;
  for (const auto& [seed, report] : by_seed) {
    std::map<std::string, std::vector<double>> ranks;
    for (const auto& o : report.outcomes) {
      ranks["all"].push_back(o.rank);
      ranks[kg.relations().name(o.query.triple.relation)].push_back(o.rank);
      if (!o.query.label.empty()) ranks["label:" + o.query.label].push_back(o.rank);
    }
    for (const auto& [scope, r] : ranks) {
      const auto s = summarize(r, rule);
      row(std::to_string(seed), scope, s.count, s.hits1, s.hits5, s.hits10, s.mrr);
      per_scope[scope].push_back(to_map(s));
      scope_count[scope] = s.count;
    }
  }
  if (by_seed.size() > 1) {
    for (const auto& [scope, runs] : per_scope) {
      const auto agg = aggregate_seeds(runs);
      row("mean", scope, scope_count[scope], agg.at("hits@1").mean, agg.at("hits@5").mean,
          agg.at("hits@10").mean, agg.at("mrr").mean);
      row("std", scope, scope_count[scope], agg.at("hits@1").stddev, agg.at("hits@5").stddev,
          agg.at("hits@10").stddev, agg.at("mrr").stddev);
    }
  }
  return out.str();
}

std::uint64_t file_fingerprint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 14];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace cpl
