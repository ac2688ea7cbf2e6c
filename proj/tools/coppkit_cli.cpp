// Command-line front end: dataset generation, model training, experiment
// execution and per-row prediction sets.
//
// Exit codes: 0 success, 2 usage/validation error, 3 partial experiment
// failure (some per-seed cells failed but a report was written).

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "coppkit/baselines.hpp"
#include "coppkit/checkpoint.hpp"
#include "coppkit/conformal.hpp"
#include "coppkit/envs.hpp"
#include "coppkit/eval.hpp"
#include "coppkit/weights.hpp"

namespace fs = std::filesystem;
using namespace coppkit;
using nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("cannot open for writing: " + path);
  out << content;
  if (!out.flush()) throw IngestError("write failed: " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int resolve_threads(int flag_value) {
  // COPPKIT_THREADS overrides the flag when set
  if (const char* env = std::getenv("COPPKIT_THREADS")) {
    int v = 0;
    auto res = std::from_chars(env, env + std::string(env).size(), v);
    if (res.ec != std::errc() || v < 1)
      throw ValidationError("COPPKIT_THREADS must be a positive integer");
    return v;
  }
  return flag_value;
}

// ---- generate -----------------------------------------------------------------

int cmd_generate(const std::string& env_name, double eps_b, std::size_t n,
                 std::uint64_t seed, const std::string& out) {
  SyntheticEnv env;
  PolicySpec behavior;
  if (env_name == "toy-discrete") {
    env = ToyDiscreteEnv{};
    behavior = region_epsilon_policy(eps_b);
  } else if (env_name == "toy-continuous") {
    ToyContinuousEnv e;
    env = e;
    behavior = e.policy(eps_b);
  } else {
    throw ValidationError("unknown env '" + env_name + "'");
  }
  Rng rng(seed);
  const BanditDataset data = gen_synthetic(env, behavior, n, rng);
  write_dataset_csv(data, out);
  std::cout << data.size() << " rows written to " << out << "\n";
  return 0;
}

// ---- train ---------------------------------------------------------------------

int cmd_train(const std::string& data_path, const std::string& action_kind,
              const std::string& outcome_kind, double alpha, std::uint64_t seed,
              const TrainConfig& tc, const std::vector<int>& hidden,
              const std::string& out_dir) {
  DatasetSchema schema;
  schema.action_kind =
      action_kind == "discrete" ? ActionKind::Discrete : ActionKind::Continuous;
  schema.outcome_kind =
      outcome_kind == "discrete" ? OutcomeKind::Discrete : OutcomeKind::Continuous;
  if (action_kind != "discrete" && action_kind != "continuous")
    throw ValidationError("--action-kind must be discrete or continuous");
  if (outcome_kind != "discrete" && outcome_kind != "continuous")
    throw ValidationError("--outcome-kind must be discrete or continuous");
  const BanditDataset data = read_dataset_csv(data_path, schema);

  fs::create_directories(out_dir);
  TrainOpts opts;
  opts.learning_rate = tc.learning_rate;
  opts.epochs = tc.epochs;
  opts.batch_size = tc.batch_size;
  opts.val_frac = tc.val_frac;
  opts.patience = tc.patience;

  MlpSpec spec;
  spec.hidden_sizes = hidden;

  json manifest;
  manifest["schema"] = "coppkit-models-1";
  manifest["action_kind"] = action_kind;
  manifest["outcome_kind"] = outcome_kind;
  manifest["dim"] = data.dim();
  manifest["num_actions"] = data.num_actions();
  manifest["num_labels"] = data.num_labels();
  manifest["alpha"] = alpha;
  manifest["seed"] = seed;

  opts.seed = derive_seed(seed, 1);
  const BehaviorModel behavior = fit_behavior_policy(data, spec, opts);
  if (const auto* s = std::get_if<SoftmaxPolicyModel>(&behavior))
    save_model(*s, out_dir + "/behavior.bin");
  else
    save_model(std::get<GaussianPolicyModel>(behavior), out_dir + "/behavior.bin");
  manifest["files"]["behavior"] = "behavior.bin";

  if (data.outcome_kind() == OutcomeKind::Continuous) {
    opts.seed = derive_seed(seed, 2);
    const QuantilePair q =
        fit_quantile_pair(data, alpha / 2.0, 1.0 - alpha / 2.0, spec, opts);
    save_model(q, out_dir + "/quantiles.bin");
    manifest["files"]["quantiles"] = "quantiles.bin";

    opts.seed = derive_seed(seed, 3);
    const GaussianConditional p_hat = fit_gaussian_conditional(data, spec, opts);
    save_model(p_hat, out_dir + "/outcome.bin");
    manifest["files"]["outcome"] = "outcome.bin";
  } else {
    opts.seed = derive_seed(seed, 3);
    const SoftmaxConditional p_hat = fit_softmax_conditional(data, spec, opts);
    save_model(p_hat, out_dir + "/outcome.bin");
    manifest["files"]["outcome"] = "outcome.bin";
  }

  write_file(out_dir + "/manifest.json", manifest.dump(2) + "\n");
  std::cout << "models written to " << out_dir << "\n";
  return 0;
}

// ---- run ------------------------------------------------------------------------

int cmd_run(const std::string& config_path, const std::string& out, int threads) {
  ExperimentConfig cfg = config_from_json(read_file(config_path));
  cfg.threads = resolve_threads(threads > 0 ? threads : cfg.threads);

  const Report report = run_experiment(cfg);
  write_file(out, report_to_json(report));
  std::string csv_path = out;
  if (csv_path.size() > 5 && csv_path.ends_with(".json"))
    csv_path = csv_path.substr(0, csv_path.size() - 5) + ".csv";
  else
    csv_path += ".csv";
  write_file(csv_path, report_to_csv(report));

  std::cout << "report written to " << out << " and " << csv_path << "\n";
  if (!report.complete) {
    std::cerr << "warning: some per-seed cells failed; report is incomplete\n";
    return 3;
  }
  return 0;
}

// ---- predict --------------------------------------------------------------------

int cmd_predict(const std::string& model_dir, const std::string& data_path,
                const std::string& target_policy, double alpha, int grid_count, int h,
                std::uint64_t seed, const std::string& out) {
  const json manifest = json::parse(read_file(model_dir + "/manifest.json"));
  if (manifest.value("schema", "") != "coppkit-models-1")
    throw IngestError("model manifest has an unknown schema");

  DatasetSchema schema;
  schema.action_kind = manifest.at("action_kind").get<std::string>() == "discrete"
                           ? ActionKind::Discrete
                           : ActionKind::Continuous;
  schema.outcome_kind = manifest.at("outcome_kind").get<std::string>() == "discrete"
                            ? OutcomeKind::Discrete
                            : OutcomeKind::Continuous;
  schema.num_actions = manifest.at("num_actions").get<int>();
  schema.num_labels = manifest.at("num_labels").get<int>();
  const BanditDataset cal = read_dataset_csv(data_path, schema);
  if (cal.dim() != manifest.at("dim").get<int>())
    throw ValidationError("data dimension does not match the trained models");

  const std::string policy_text =
      !target_policy.empty() && target_policy.front() == '{' ? target_policy
                                                             : read_file(target_policy);
  const PolicySpec pi_star = policy_from_json(policy_text);
  if (policy_action_kind(pi_star) != cal.action_kind())
    throw ValidationError("target policy action kind does not match the data");

  std::ostringstream csv;
  if (cal.outcome_kind() == OutcomeKind::Continuous) {
    auto qpair = std::make_shared<QuantilePair>(
        load_quantile_pair(model_dir + "/quantiles.bin"));
    auto p_hat = std::make_shared<GaussianConditional>(
        load_gaussian_conditional(model_dir + "/outcome.bin"));
    const ScoreFn score = make_cqr_score(qpair);

    WeightFn w;
    if (cal.action_kind() == ActionKind::Discrete) {
      auto behavior = std::make_shared<BehaviorModel>(
          load_softmax_policy(model_dir + "/behavior.bin"));
      w = exact_sum_weight(p_hat, behavior, pi_star);
    } else {
      auto behavior = std::make_shared<BehaviorModel>(
          load_gaussian_policy(model_dir + "/behavior.bin"));
      w = mc_weight(p_hat, behavior, pi_star, h, seed);
    }

    const std::vector<CalibrationRecord> records = score_dataset(cal, score);
    const Grid grid = build_grid(cal.outcomes(), GridSpec{grid_count, 0.25});
    const ConformalEngine engine(records, w);

    csv << "row,lo,hi,accepted_points,unbounded\n";
    for (std::size_t i = 0; i < cal.size(); ++i) {
      const PredictionSet set = engine.predict_grid(cal[i].x, grid, score, alpha);
      csv << i << ",";
      if (set.empty()) {
        csv << "nan,nan,0," << (set.unbounded() ? 1 : 0) << "\n";
      } else {
        const double lo = set.accepted_points().front() - 0.5 * set.spacing();
        const double hi = set.accepted_points().back() + 0.5 * set.spacing();
        csv << fmt(lo) << "," << fmt(hi) << "," << set.accepted_points().size() << ","
            << (set.unbounded() ? 1 : 0) << "\n";
      }
    }
  } else {
    auto behavior = std::make_shared<SoftmaxPolicyModel>(
        load_softmax_policy(model_dir + "/behavior.bin"));
    auto p_hat = std::make_shared<SoftmaxConditional>(
        load_softmax_conditional(model_dir + "/outcome.bin"));
    const int K = p_hat->num_actions();
    const int L = p_hat->num_labels();

    const ScoreFn score = make_discrete_score([=](const std::vector<double>& x) {
      const Eigen::VectorXd pb = behavior->probs(x);
      std::vector<double> pyx(static_cast<std::size_t>(L), 0.0);
      for (int a = 0; a < K; ++a) {
        const Eigen::VectorXd pa = p_hat->probs(x, static_cast<double>(a));
        for (int y = 0; y < L; ++y) pyx[static_cast<std::size_t>(y)] += pb(a) * pa(y);
      }
      return pyx;
    });
    const WeightFn w = mixture_ratio_weight(
        K,
        [pi_star](const std::vector<double>& x, int a) {
          return policy_prob(pi_star, x, static_cast<double>(a));
        },
        [behavior](const std::vector<double>& x, int a) { return behavior->prob(x, a); },
        [p_hat](const std::vector<double>& x, int a, double y) {
          return p_hat->probs(x, static_cast<double>(a))(static_cast<int>(y));
        });

    const std::vector<CalibrationRecord> records = score_dataset(cal, score);
    const ConformalEngine engine(records, w);

    csv << "row,labels,unbounded\n";
    for (std::size_t i = 0; i < cal.size(); ++i) {
      const PredictionSet set = engine.predict_labels(cal[i].x, L, score, alpha);
      csv << i << ",";
      for (std::size_t k = 0; k < set.labels().size(); ++k) {
        if (k > 0) csv << ";";
        csv << set.labels()[k];
      }
      csv << "," << (set.unbounded() ? 1 : 0) << "\n";
    }
  }

  write_file(out, csv.str());
  std::cout << cal.size() << " prediction sets written to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"conformal off-policy prediction toolkit"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "sample a synthetic logged dataset");
  std::string gen_env = "toy-discrete";
  double gen_eps_b = 0.3;
  std::size_t gen_n = 6000;
  std::uint64_t gen_seed = 1;
  std::string gen_out;
  gen->add_option("--env", gen_env, "toy-discrete or toy-continuous");
  gen->add_option("--eps-b", gen_eps_b, "behavior policy epsilon");
  gen->add_option("--n", gen_n, "number of samples")->required();
  gen->add_option("--seed", gen_seed, "rng seed");
  gen->add_option("--out", gen_out, "output csv path")->required();

  // train
  auto* train = app.add_subcommand("train", "fit models on a logged dataset");
  std::string train_data, train_action = "discrete", train_outcome = "continuous";
  std::string train_out;
  double train_alpha = 0.1;
  std::uint64_t train_seed = 1;
  TrainConfig train_tc;
  std::vector<int> train_hidden = {32};
  train->add_option("--data", train_data, "input dataset csv")->required();
  train->add_option("--action-kind", train_action, "discrete or continuous");
  train->add_option("--outcome-kind", train_outcome, "continuous or discrete");
  train->add_option("--alpha", train_alpha, "miscoverage level for the quantile pair");
  train->add_option("--seed", train_seed, "training seed");
  train->add_option("--epochs", train_tc.epochs, "epoch budget");
  train->add_option("--hidden", train_hidden, "hidden layer sizes");
  train->add_option("--out-dir", train_out, "output model directory")->required();

  // run
  auto* run = app.add_subcommand("run", "run an experiment config");
  std::string run_config, run_out;
  int run_threads = 0;
  run->add_option("--config", run_config, "experiment config json")->required();
  run->add_option("--out", run_out, "output report json path")->required();
  run->add_option("--threads", run_threads, "worker threads (default: available cores)");

  // predict
  auto* pred = app.add_subcommand("predict", "prediction sets for each data row");
  std::string pred_models, pred_data, pred_policy, pred_out;
  double pred_alpha = 0.1;
  int pred_grid = 100, pred_h = 500;
  std::uint64_t pred_seed = 0;
  pred->add_option("--model-dir", pred_models, "directory written by train")->required();
  pred->add_option("--data", pred_data, "calibration dataset csv")->required();
  pred->add_option("--target-policy", pred_policy, "policy json (inline or a file path)")
      ->required();
  pred->add_option("--alpha", pred_alpha, "miscoverage level");
  pred->add_option("--grid-count", pred_grid, "outcome grid size");
  pred->add_option("--mc-draws", pred_h, "action draws for continuous-action weights");
  pred->add_option("--seed", pred_seed, "seed for the weight estimator draws");
  pred->add_option("--out", pred_out, "output csv path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed())
      return cmd_generate(gen_env, gen_eps_b, gen_n, gen_seed, gen_out);
    if (train->parsed())
      return cmd_train(train_data, train_action, train_outcome, train_alpha, train_seed,
                       train_tc, train_hidden, train_out);
    if (run->parsed()) return cmd_run(run_config, run_out, run_threads);
    if (pred->parsed())
      return cmd_predict(pred_models, pred_data, pred_policy, pred_alpha, pred_grid, pred_h,
                         pred_seed, pred_out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
