#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cpl/config.hpp"
#include "cpl/diff/op_suite.hpp"
#include "cpl/errors.hpp"
#include "cpl/grad_suite.hpp"
#include "cpl/pipeline.hpp"
#include "cpl/synthetic.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace cpl;

namespace {

constexpr int kOk = 0, kUsage = 1, kData = 2, kCheck = 3;

struct Options {
  std::string config_path;
  std::vector<std::string> sets;
  std::string kg, corpus, out = "run", checkpoint, mode;
  std::uint64_t seed = 55;
  std::vector<std::uint64_t> seeds;
  std::optional<std::size_t> beam_width;
  std::optional<double> threshold, ratio;
  std::size_t trials = 100;
};

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string hex(std::uint64_t x) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

RunConfig resolve_config(const Options& o) {
  RunConfig c;
  if (!o.config_path.empty()) c = load_config(o.config_path);
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_setting(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.beam_width) c.trainer.beam_width = *o.beam_width;
  if (o.ratio) c.train_ratio = *o.ratio;
  validate_config(c.trainer);
  return c;
}

std::vector<std::uint64_t> seed_list(const Options& o) {
  return o.seeds.empty() ? std::vector<std::uint64_t>{o.seed} : o.seeds;
}

// One seed writes straight into `base`; several get seed_<s> subdirectories.
fs::path seed_dir(const fs::path& base, const Options& o, std::uint64_t seed) {
  return o.seeds.size() > 1 ? base / ("seed_" + std::to_string(seed)) : base;
}

Dataset load(const RunConfig& c, const Options& o, std::uint64_t seed) {
  if (o.kg.empty()) throw ConfigError("--kg is required");
  std::optional<fs::path> corpus;
  if (!o.corpus.empty()) corpus = o.corpus;
  return load_dataset(c, o.kg, corpus, seed);
}

class Manifest {
 public:
  Manifest(std::string command, const RunConfig& c) {
    j_["command"] = std::move(command);
    j_["started"] = now_utc();
    std::istringstream in(dump_config(c));
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find(" = ");
      j_["config"][line.substr(0, eq)] = line.substr(eq + 3);
    }
  }
  void data(const Dataset& d) {
    for (const auto& p : d.sources) j_["data"][p.string()] = hex(file_fingerprint(p));
  }
  void seed(std::uint64_t s) { j_["seeds"].push_back(s); }
  void checkpoint(const fs::path& p) { j_["checkpoints"].push_back(p.string()); }
  void metrics(const fs::path& p) { j_["metrics"].push_back(p.string()); }
  void set(const std::string& key, json v) { j_[key] = std::move(v); }
  void write(const fs::path& dir) {
    j_["finished"] = now_utc();
    fs::create_directories(dir);
    std::ofstream(dir / "manifest.json") << j_.dump(2) << '\n';
  }

 private:
  json j_;
};

void write_text(const fs::path& p, const std::string& s) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw ParseError("cannot write " + p.string());
  out << s;
}

Models prepared_models(const RunConfig& c, const Dataset& d, const Options& o, std::uint64_t seed,
                       bool pretrain_if_missing) {
  auto models = make_models(c, d, seed);
  if (!o.checkpoint.empty()) {
    load_models(models, seed_dir(o.checkpoint, o, seed), model_hash(c, d));
  } else if (pretrain_if_missing) {
    pretrain_models(c, d, models, seed);
  }
  return models;
}

void print_table(const std::map<std::uint64_t, TestReport>& reports) {
  std::printf("%-8s %-8s %6s %8s %8s %8s %8s\n", "seed", "scope", "count", "hits@1", "hits@5",
              "hits@10", "mrr");
  auto line = [](const std::string& seed, const char* scope, const MetricSummary& m) {
    if (m.count == 0) return;
    std::printf("%-8s %-8s %6zu %8.4f %8.4f %8.4f %8.4f\n", seed.c_str(), scope, m.count, m.hits1,
                m.hits5, m.hits10, m.mrr);
  };
  std::vector<std::map<std::string, double>> runs;
  for (const auto& [seed, r] : reports) {
    line(std::to_string(seed), "all", r.all);
    line(std::to_string(seed), "kg", r.kg);
    line(std::to_string(seed), "corpus", r.corpus);
    runs.push_back(to_map(r.all));
  }
  if (runs.size() > 1) {
    const auto agg = aggregate_seeds(runs);
    std::printf("%-8s %-8s %6s %8.4f %8.4f %8.4f %8.4f\n", "mean", "all", "", agg.at("hits@1").mean,
                agg.at("hits@5").mean, agg.at("hits@10").mean, agg.at("mrr").mean);
    std::printf("%-8s %-8s %6s %8.4f %8.4f %8.4f %8.4f\n", "std", "all", "", agg.at("hits@1").stddev,
                agg.at("hits@5").stddev, agg.at("hits@10").stddev, agg.at("mrr").stddev);
  }
}

int cmd_gen_synthetic(const Options& o) {
  const auto c = resolve_config(o);
  Manifest m("gen-synthetic", c);
  const auto data = generate_synthetic(c.synthetic, o.seed);
  if (!verify_synthetic(data, c.synthetic.horizon)) {
    std::fprintf(stderr, "synthetic reachability check failed\n");
    return kCheck;
  }
  write_synthetic(data, c.synthetic, o.seed, o.out);
  m.seed(o.seed);
  for (const auto& e : fs::directory_iterator(o.out))
    if (e.path().filename() != "manifest.json")
      m.set("file:" + e.path().filename().string(), hex(file_fingerprint(e.path())));
  m.write(o.out);
  std::printf("wrote %s: %zu triples, %zu corpus facts, %zu/%zu/%zu queries\n", o.out.c_str(),
              data.kg.triples().size(), data.corpus_facts.size(), data.train.size(),
              data.valid.size(), data.test.size());
  return kOk;
}

int cmd_pretrain(const Options& o, bool reasoner) {
  const auto c = resolve_config(o);
  Manifest m(reasoner ? "pretrain-reasoner" : "pretrain-extractor", c);
  for (auto seed : seed_list(o)) {
    const auto d = load(c, o, seed);
    m.data(d);
    m.seed(seed);
    auto models = prepared_models(c, d, o, seed, false);
    const auto dir = seed_dir(o.out, o, seed);
    fs::create_directories(dir);
    if (reasoner) {
      const auto log = pretrain_reasoner_stage(c, d, models, seed);
      std::string csv = metrics_csv_header();
      for (const auto& e : log.epochs) csv += metrics_csv_row(e);
      write_text(dir / "pretrain_reasoner.csv", csv);
      m.metrics(dir / "pretrain_reasoner.csv");
    } else {
      const auto log = pretrain_extractor_stage(c, d, models, seed);
      std::string csv = "epoch,loss\n";
      char buf[64];
      for (std::size_t i = 0; i < log.epoch_loss.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.6f\n", i, log.epoch_loss[i]);
        csv += buf;
      }
      write_text(dir / "pretrain_extractor.csv", csv);
      m.metrics(dir / "pretrain_extractor.csv");
    }
    save_models(models, dir, model_hash(c, d));
    m.checkpoint(dir);
  }
  m.write(o.out);
  return kOk;
}

int cmd_train(const Options& o, const std::string& command, Variant v) {
  const auto c = resolve_config(o);
  Manifest m(command, c);
  m.set("variant", variant_name(v));
  std::map<std::uint64_t, TestReport> reports;
  std::optional<KnowledgeGraph> first_kg;
  for (auto seed : seed_list(o)) {
    const auto d = load(c, o, seed);
    m.data(d);
    m.seed(seed);
    auto models = prepared_models(c, d, o, seed, true);
    const auto dir = seed_dir(o.out, o, seed);
    fs::create_directories(dir);
    std::string csv = metrics_csv_header();
    auto run = run_variant(c, d, models, v, seed, [&](const EpochRecord& r) {
      csv += metrics_csv_row(r);
      std::fprintf(stderr, "seed %llu epoch %zu success %.3f sug/pos %.3f retained %zu valid mrr %.4f\n",
                   static_cast<unsigned long long>(seed), r.epoch, r.success_rate(),
                   r.sug_edge_per_pos_path(), r.retained_total, r.valid.mrr);
    });
    write_text(dir / "metrics.csv", csv);
    write_triples(dir / "retained.txt", run.retained, d.kg);
    save_models(models, dir, model_hash(c, d));
    json meta;
    meta["variant"] = variant_name(v);
    meta["best_epoch"] = run.train.best_epoch;
    meta["boosted_batches"] = run.train.boosted_batches;
    meta["retained_forward"] = run.retained_forward;
    Manifest seed_manifest(command, c);
    seed_manifest.data(d);
    seed_manifest.seed(seed);
    seed_manifest.checkpoint(dir);
    seed_manifest.metrics(dir / "metrics.csv");
    seed_manifest.set("variant", variant_name(v));
    seed_manifest.set("result", meta);
    if (dir != fs::path(o.out)) seed_manifest.write(dir);
    m.checkpoint(dir);
    m.metrics(dir / "metrics.csv");
    reports[seed] = std::move(run.test);
    if (!first_kg) first_kg = d.kg;
  }
  write_text(fs::path(o.out) / "test_report.csv", report_csv(reports, *first_kg, c.trainer.hits_rule));
  m.metrics(fs::path(o.out) / "test_report.csv");
  m.write(o.out);
  print_table(reports);
  return kOk;
}

std::optional<Variant> checkpoint_variant(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) return std::nullopt;
  const auto j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.contains("variant")) return std::nullopt;
  return parse_variant(j["variant"].get<std::string>());
}

int cmd_evaluate(const Options& o) {
  const auto c = resolve_config(o);
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  Manifest m("evaluate", c);
  std::map<std::uint64_t, TestReport> reports;
  std::optional<KnowledgeGraph> first_kg;
  std::string paths;
  for (auto seed : seed_list(o)) {
    const auto d = load(c, o, seed);
    m.data(d);
    m.seed(seed);
    const auto dir = seed_dir(o.checkpoint, o, seed);
    auto models = make_models(c, d, seed);
    load_models(models, dir, model_hash(c, d));
    m.checkpoint(dir);
    Variant v = Variant::cpl;
    if (!o.mode.empty()) v = parse_variant(o.mode);
    else if (auto cv = checkpoint_variant(dir)) v = *cv;
    else if (auto cv = checkpoint_variant(o.checkpoint)) v = *cv;
    auto kg = d.kg;
    if (fs::exists(dir / "retained.txt")) load_retained(kg, dir / "retained.txt");
    const bool use_extractor = v != Variant::reasoner_only && d.corpus.has_value();
    auto report = evaluate_models(c, kg, models, d.corpus ? &*d.corpus : nullptr, use_extractor, d.test);
    if (c.report_paths > 0)
      paths += "# seed " + std::to_string(seed) + "\n" +
               path_report(report.outcomes, kg, *models.reasoner, d.corpus ? &*d.corpus : nullptr);
    reports[seed] = std::move(report);
    if (!first_kg) first_kg = d.kg;
  }
  const fs::path out(o.out);
  write_text(out / "report.csv", report_csv(reports, *first_kg, c.trainer.hits_rule));
  m.metrics(out / "report.csv");
  if (!paths.empty()) {
    write_text(out / "paths.txt", paths);
    m.metrics(out / "paths.txt");
  }
  m.write(out);
  print_table(reports);
  return kOk;
}

int cmd_two_step(const Options& o) {
  const auto c = resolve_config(o);
  Manifest m("baseline-two-step", c);
  const auto thresholds = o.threshold ? std::vector<double>{*o.threshold} : c.baseline_thresholds;
  for (double t : thresholds)
    if (t < 0.0 || t > 1.0) throw ConfigError("threshold must lie in [0, 1]");
  std::map<std::uint64_t, TestReport> reports;
  std::optional<KnowledgeGraph> first_kg;
  std::string grid = "seed,threshold,edges_added,valid_hits1,valid_hits5,valid_hits10,valid_mrr,best\n";
  for (auto seed : seed_list(o)) {
    const auto d = load(c, o, seed);
    if (!d.corpus) throw ConfigError("the two-step baseline needs --corpus or a corpus.jsonl");
    m.data(d);
    m.seed(seed);
    const auto models = prepared_models(c, d, o, seed, true);
    auto result = run_two_step(c, d, models, thresholds, seed);
    for (const auto& p : result.grid) {
      char buf[256];
      std::snprintf(buf, sizeof buf, "%llu,%.6f,%zu,%.6f,%.6f,%.6f,%.6f,%d\n",
                    static_cast<unsigned long long>(seed), p.threshold, p.edges_added, p.valid.hits1,
                    p.valid.hits5, p.valid.hits10, p.valid.mrr, p.threshold == result.best.threshold);
      grid += buf;
    }
    std::printf("seed %llu: best threshold %.2f adds %zu edges\n",
                static_cast<unsigned long long>(seed), result.best.threshold, result.best.edges_added);
    reports[seed] = std::move(result.test);
    if (!first_kg) first_kg = d.kg;
  }
  const fs::path out(o.out);
  write_text(out / "two_step_grid.csv", grid);
  write_text(out / "test_report.csv", report_csv(reports, *first_kg, c.trainer.hits_rule));
  m.metrics(out / "two_step_grid.csv");
  m.metrics(out / "test_report.csv");
  m.write(out);
  print_table(reports);
  return kOk;
}

int cmd_grad_check(const Options& o) {
  Rng rng(o.seed);
  bool ok = true;
  auto run = [&](const std::string& name, auto trial) {
    double worst = 0.0;
    for (std::size_t i = 0; i < o.trials; ++i) worst = std::max(worst, trial(name).max_relative_error);
    const bool pass = worst <= 1e-4;
    ok = ok && pass;
    std::printf("%-22s %zu trials  max rel err %.3g  %s\n", name.c_str(), o.trials, worst,
                pass ? "ok" : "FAIL");
  };
  for (const auto& op : diff::op_names()) run(op, [&](const std::string& n) { return diff::run_op_trial(n, rng); });
  for (const auto& net : network_names()) run(net, [&](const std::string& n) { return run_network_trial(n, rng); });
  return ok ? kOk : kCheck;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint reasoning and extraction over a knowledge graph and a text corpus"};
  app.require_subcommand(1);
  Options o;
  std::string seeds_arg;

  auto common = [&](CLI::App* sub, bool data) {
    sub->add_option("--config", o.config_path, "flat key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--set", o.sets, "override one config key (key=value), repeatable");
    sub->add_option("--seed", o.seed, "root seed");
    sub->add_option("--out", o.out, "output directory");
    if (data) {
      sub->add_option("--kg", o.kg, "dataset directory or triple file");
      sub->add_option("--corpus", o.corpus, "JSON-lines corpus");
      sub->add_option("--seeds", seeds_arg, "comma separated seeds, e.g. 55,83,5583");
      sub->add_option("--checkpoint", o.checkpoint, "checkpoint directory to start from");
      sub->add_option("--beam-width", o.beam_width, "beam width at evaluation");
      sub->add_option("--ratio", o.ratio, "fraction of training triples kept");
    }
    return sub;
  };

  auto* gen = common(app.add_subcommand("gen-synthetic", "generate the synthetic task"), false);
  auto* pre_r = common(app.add_subcommand("pretrain-reasoner", "REINFORCE on the graph alone"), true);
  auto* pre_e = common(app.add_subcommand("pretrain-extractor", "distant supervision"), true);
  auto* train = common(app.add_subcommand("train", "joint training"), true);
  auto* ablate = common(app.add_subcommand("ablate", "joint training with a variant"), true);
  ablate->add_option("--mode", o.mode, "frozen-extractor, no-adaptive or reasoner-only")->required();
  auto* evaluate = common(app.add_subcommand("evaluate", "rank test queries with a checkpoint"), true);
  evaluate->add_option("--mode", o.mode, "override the checkpoint's variant");
  auto* two = common(app.add_subcommand("baseline-two-step", "static augmentation baseline"), true);
  two->add_option("--threshold", o.threshold, "single confidence threshold instead of the grid");
  auto* grad = app.add_subcommand("grad-check", "finite-difference checks of every op and network");
  grad->add_option("--trials", o.trials, "trials per op");
  grad->add_option("--seed", o.seed, "seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (!seeds_arg.empty()) {
      std::stringstream ss(seeds_arg);
      std::string s;
      while (std::getline(ss, s, ',')) {
        try {
          o.seeds.push_back(std::stoull(s));
        } catch (const std::exception&) {
          throw ConfigError("bad seed '" + s + "'");
        }
      }
      if (o.seeds.size() == 1) o.seed = o.seeds.front();
    }
    if (*gen) return cmd_gen_synthetic(o);
    if (*pre_r) return cmd_pretrain(o, true);
    if (*pre_e) return cmd_pretrain(o, false);
    if (*train) return cmd_train(o, "train", Variant::cpl);
    if (*ablate) return cmd_train(o, "ablate", parse_variant(o.mode));
    if (*evaluate) return cmd_evaluate(o);
    if (*two) return cmd_two_step(o);
    if (*grad) return cmd_grad_check(o);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kUsage;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kData;
  }
  return kUsage;
}
