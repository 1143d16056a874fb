#include <chrono>
#include <cstdio>
#include <filesystem>

#include <omp.h>

#include "cpl/pipeline.hpp"
#include "cpl/synthetic.hpp"

using namespace cpl;

namespace {

template <typename F>
double seconds(F&& f, int reps) {
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) f();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / reps;
}

}  // namespace

int main(int argc, char** argv) {
  const int reps = argc > 1 ? std::atoi(argv[1]) : 3;
  RunConfig c;
  c.reasoner = {16, 32, 32, 200};
  c.extractor.word_dim = 16;
  c.extractor.filters = 32;
  const auto dir = std::filesystem::temp_directory_path() / "cpl_bench";
  write_synthetic(generate_synthetic(c.synthetic, 55), c.synthetic, 55, dir);
  auto data = load_dataset(c, dir, std::nullopt, 55);
  auto models = make_models(c, data, 55);
  std::printf("threads %d, %zu train queries x %zu rollouts, %zu test queries, beam %zu\n",
              omp_get_max_threads(), data.train.size(), c.trainer.rollouts_per_query,
              data.test.size(), c.trainer.beam_width);

  auto kg = data.kg;
  Trainer trainer(c.trainer, kg, &*data.corpus, *models.reasoner, models.extractor.get(), 55);
  auto signature = [](const Experience& e) {
    std::vector<std::size_t> sig;
    for (const auto& t : e.trajectories)
      for (const auto& st : t.steps) sig.push_back(st.chosen * 1000003 + st.action().entity);
    return sig;
  };
  std::vector<std::size_t> serial_steps, parallel_steps;
  const double gen_serial = seconds([&] {
    auto e = trainer.generate(data.train, 0, 0, true, false);
    serial_steps = signature(e);
  }, reps);
  const double gen_parallel = seconds([&] {
    auto e = trainer.generate(data.train, 0, 0, true, true);
    parallel_steps = signature(e);
  }, reps);

  EvalOptions eo;
  eo.beam = {c.trainer.beam_width, c.trainer.horizon};
  eo.k_suggestions = c.trainer.k_suggestions;
  std::vector<QueryOutcome> a, b;
  eo.parallel = false;
  const double eval_serial = seconds([&] {
    a = evaluate_queries(data.test, data.kg, *models.reasoner, models.extractor.get(), &*data.corpus, eo);
  }, reps);
  eo.parallel = true;
  const double eval_parallel = seconds([&] {
    b = evaluate_queries(data.test, data.kg, *models.reasoner, models.extractor.get(), &*data.corpus, eo);
  }, reps);
  bool same = a.size() == b.size();
  for (std::size_t i = 0; same && i < a.size(); ++i) same = a[i].rank == b[i].rank;

  std::printf("%-12s %10s %10s %8s %s\n", "kernel", "serial s", "parallel s", "speedup", "match");
  std::printf("%-12s %10.4f %10.4f %8.2f %s\n", "rollouts", gen_serial, gen_parallel,
              gen_serial / gen_parallel, serial_steps == parallel_steps ? "yes" : "NO");
  std::printf("%-12s %10.4f %10.4f %8.2f %s\n", "beam eval", eval_serial, eval_parallel,
              eval_serial / eval_parallel, same ? "yes" : "NO");
  std::filesystem::remove_all(dir);
  return serial_steps == parallel_steps && same ? 0 : 1;
}
