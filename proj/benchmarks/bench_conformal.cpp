#include <benchmark/benchmark.h>

#include "coppkit/conformal.hpp"
#include "coppkit/envs.hpp"
#include "coppkit/weights.hpp"

namespace {

using namespace coppkit;

struct Fixture {
  SyntheticEnv env = ToyDiscreteEnv{};
  PolicySpec pi_b = region_epsilon_policy(0.3);
  PolicySpec pi_star = region_epsilon_policy(0.1);
  std::vector<CalibrationRecord> records;
  Grid grid;
  WeightFn w = exact_weight(env, pi_star, pi_b);
  ScoreFn score;

  explicit Fixture(std::size_t n) {
    Rng rng(7);
    const BanditDataset cal = gen_synthetic(env, pi_b, n, rng);
    // synthetic banded score, cheap to evaluate
    score = ScoreFn(
        [](const std::vector<double>& x) -> ScoreFn::YEvaluator {
          const double c = 2.5 * x[0];
          return [c](double y) { return std::fabs(y - c) - 4.0; };
        },
        ScoreFn::Kind::Cqr);
    records = score_dataset(cal, score);
    grid = build_grid(cal.outcomes(), GridSpec{});
  }
};

void BM_WeightedQuantile(benchmark::State& state) {
  Fixture f(static_cast<std::size_t>(state.range(0)));
  PreparedCalibration prep(f.records, f.w);
  double w_test = 1.3;
  for (auto _ : state) {
    benchmark::DoNotOptimize(prep.quantile(w_test, 0.9));
    w_test = w_test < 4.0 ? w_test + 1e-3 : 1.0;
  }
}
BENCHMARK(BM_WeightedQuantile)->Arg(500)->Arg(5000);

void BM_GridPrediction(benchmark::State& state) {
  Fixture f(static_cast<std::size_t>(state.range(0)));
  ConformalEngine engine(f.records, f.w);
  Rng rng(11);
  for (auto _ : state) {
    const std::vector<double> x{rng.normal(0.0, 3.0)};
    benchmark::DoNotOptimize(engine.predict_grid(x, f.grid, f.score, 0.1));
  }
}
BENCHMARK(BM_GridPrediction)->Arg(500)->Arg(5000);

void BM_ExactWeightEval(benchmark::State& state) {
  Fixture f(500);
  Rng rng(13);
  for (auto _ : state) {
    const std::vector<double> x{rng.normal(0.0, 3.0)};
    const auto eval = f.w.at(x);
    benchmark::DoNotOptimize(eval(rng.normal(0.0, 10.0)));
  }
}
BENCHMARK(BM_ExactWeightEval);

}  // namespace

BENCHMARK_MAIN();
