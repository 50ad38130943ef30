// Command-line harness: generate / calibrate / evaluate / steer /
// train-residual / recalibrate / report.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "calsteer/harness.hpp"
#include "calsteer/serialize.hpp"

namespace {

using namespace calsteer;
namespace fs = std::filesystem;

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::optional<double> epsilon;
  std::string method = "cp:bayesian";
};

void add_common(CLI::App* cmd, CommonArgs& args, bool method_flag = false) {
  cmd->add_option("--config", args.config_path, "run configuration file (key = value lines)");
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--seed", args.seed, "override the experiment seed");
  cmd->add_option("--epsilon", args.epsilon, "override the error budget");
  if (method_flag)
    cmd->add_option("--method", args.method, "constructor:shaping, e.g. cp:bayesian");
}

RunConfig resolve_config(const CommonArgs& args) {
  RunConfig config = args.config_path.empty() ? RunConfig{} : load_run_config(args.config_path);
  if (args.seed) config.seed = *args.seed;
  if (args.epsilon) config.epsilon = *args.epsilon;
  config.residual.seed = config.seed;
  config.validate();
  return config;
}

void ensure_out(const std::string& dir) { fs::create_directories(dir); }

std::map<MethodKey, Threshold> thresholds_for(const RunConfig& config,
                                              const std::string& out_dir) {
  const std::string path = out_dir + "/thresholds.json";
  if (!fs::exists(path))
    throw ConfigError("no thresholds at " + path + "; run `calibrate --out " + out_dir +
                      "` first");
  return load_thresholds_json(path, config_hash(config));
}

int cmd_generate(const CommonArgs& args) {
  const RunConfig config = resolve_config(args);
  ensure_out(args.out_dir);
  const auto calib = generate_scenarios(config, Split::Calibration);
  const auto test = generate_scenarios(config, Split::Test);
  save_scenarios_jsonl(calib, config_hash(config), args.out_dir + "/scenarios_calib.jsonl");
  save_scenarios_jsonl(test, config_hash(config), args.out_dir + "/scenarios_test.jsonl");
  std::cout << "wrote " << calib.size() << " calibration and " << test.size()
            << " test scenarios to " << args.out_dir << "\n";
  return 0;
}

int cmd_calibrate(const CommonArgs& args) {
  const RunConfig config = resolve_config(args);
  ensure_out(args.out_dir);
  const CalibrationOutput calib = build_calibration_set(config, base_policy_sampler());
  save_thresholds_json(calib.thresholds, calib.config_hash, args.out_dir + "/thresholds.json");
  std::cout << "calibrated " << calib.thresholds.size() << " methods over "
            << calib.sequences.size() << " sequences\n";
  int partial = 0;
  for (const auto& seq : calib.sequences) partial += seq.ambiguous_partial ? 1 : 0;
  if (partial > 0)
    std::cout << "  note: " << partial
              << " ambiguous sequence(s) exposed only one place mode among the samples\n";
  for (const auto& [method, thr] : calib.thresholds) {
    if (method.constructor == SetConstructor::SimpleSet) continue;
    std::cout << "  " << to_string(method) << ": q_hat = " << thr.q_hat << " (N = " << thr.n
              << ", family " << to_string(thr.family) << ")\n";
  }
  return 0;
}

int cmd_evaluate(const CommonArgs& args) {
  const RunConfig config = resolve_config(args);
  const auto thresholds = thresholds_for(config, args.out_dir);
  const MetricsReport report = evaluate(config, thresholds, base_policy_sampler());
  save_metrics_json(report, args.out_dir + "/uq_metrics.json");
  write_report(report, args.out_dir);
  std::cout << "evaluated " << config.methods.size() << " methods on " << config.n_test
            << " test sequences; report written to " << args.out_dir << "\n";
  return 0;
}

int cmd_steer(const CommonArgs& args, bool argmax_baseline) {
  const RunConfig config = resolve_config(args);
  const MethodKey method = method_key_from_string(args.method);
  const auto thresholds = thresholds_for(config, args.out_dir);
  const auto scenarios = generate_scenarios(config, Split::Test);
  const SteerRunResult result = run_steering(
      config, method, argmax_baseline ? SteeringMode::ArgmaxBaseline : SteeringMode::Calibrated,
      thresholds.at(method), base_policy_sampler(), scenarios, false);
  save_episodes_jsonl(result.episodes, config_hash(config), args.out_dir + "/episodes.jsonl");
  save_metrics_json(result.metrics, args.out_dir + "/steer_metrics.json");
  write_report(result.metrics, args.out_dir);
  const SteerRecord& overall = result.metrics.steering.back();
  std::cout << "steered " << result.episodes.size() << " episodes with "
            << (argmax_baseline ? "argmax baseline" : args.method)
            << ": success rate " << overall.success_rate << ", intervention rate "
            << overall.intervention_rate << "\n";
  return 0;
}

int cmd_train_residual(const CommonArgs& args) {
  const RunConfig config = resolve_config(args);
  const MethodKey method = method_key_from_string(args.method);
  const auto thresholds = thresholds_for(config, args.out_dir);
  const auto scenarios = generate_scenarios(config, Split::Test);
  const SteerRunResult result =
      run_steering(config, method, SteeringMode::Calibrated, thresholds.at(method),
                   base_policy_sampler(), scenarios, true);
  if (result.traces.empty())
    throw CalibrationError("no intervention traces collected; nothing to train on");
  save_traces_jsonl(result.traces, config_hash(config), args.out_dir + "/traces.jsonl");
  const ResidualModel model = train_residual(result.traces, config.residual);
  save_residual_model(model, args.out_dir + "/residual_model.json");
  std::cout << "trained residual model from " << result.traces.size() << " traces; wrote "
            << args.out_dir << "/residual_model.json\n";
  return 0;
}

int cmd_recalibrate(const CommonArgs& args) {
  const RunConfig config = resolve_config(args);
  const std::string model_path = args.out_dir + "/residual_model.json";
  if (!fs::exists(model_path))
    throw ConfigError("no residual model at " + model_path + "; run train-residual first");
  const ResidualModel model = load_residual_model(model_path);
  const auto thresholds = recalibrate(config, model);
  save_thresholds_json(thresholds, config_hash(config),
                       args.out_dir + "/thresholds_recalibrated.json");
  std::cout << "recalibrated " << thresholds.size() << " methods under the combined policy\n";
  for (const auto& [method, thr] : thresholds) {
    if (method.constructor == SetConstructor::SimpleSet) continue;
    std::cout << "  " << to_string(method) << ": q_hat = " << thr.q_hat << "\n";
  }
  return 0;
}

int cmd_report(const CommonArgs& args, const std::vector<std::string>& inputs) {
  const RunConfig config = resolve_config(args);
  std::vector<std::string> paths = inputs;
  if (paths.empty()) {
    for (const char* name : {"uq_metrics.json", "steer_metrics.json"}) {
      const std::string path = args.out_dir + "/" + std::string(name);
      if (fs::exists(path)) paths.push_back(path);
    }
  }
  if (paths.empty()) throw ConfigError("no metrics files found under " + args.out_dir);
  MetricsReport merged = load_metrics_json(paths[0]);
  for (std::size_t i = 1; i < paths.size(); ++i) merged.merge(load_metrics_json(paths[i]));
  if (merged.config_hash != config_hash(config))
    std::cerr << "warning: metrics were produced under a different config than the one given\n";
  write_report(merged, args.out_dir);
  std::cout << "report written to " << args.out_dir << " from " << paths.size()
            << " metrics file(s)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"conformally calibrated policy steering harness"};
  app.require_subcommand(1);

  CommonArgs args;
  bool argmax_baseline = false;
  std::vector<std::string> report_inputs;

  add_common(app.add_subcommand("generate", "write scenario sets as jsonl"), args);
  add_common(app.add_subcommand("calibrate", "build calibration set and thresholds"), args);
  add_common(app.add_subcommand("evaluate", "open-loop uncertainty metrics"), args, true);
  auto* steer = app.add_subcommand("steer", "closed-loop episodes");
  add_common(steer, args, true);
  steer->add_flag("--argmax-baseline", argmax_baseline,
                  "uncalibrated argmax steering instead of prediction sets");
  add_common(app.add_subcommand("train-residual", "collect interventions and fit the residual"),
             args, true);
  add_common(app.add_subcommand("recalibrate", "recalibrate under the combined policy"), args);
  auto* report = app.add_subcommand("report", "merge metrics files into tables");
  add_common(report, args);
  report->add_option("inputs", report_inputs, "metrics json files to merge");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("generate")) return cmd_generate(args);
    if (app.got_subcommand("calibrate")) return cmd_calibrate(args);
    if (app.got_subcommand("evaluate")) return cmd_evaluate(args);
    if (app.got_subcommand("steer")) return cmd_steer(args, argmax_baseline);
    if (app.got_subcommand("train-residual")) return cmd_train_residual(args);
    if (app.got_subcommand("recalibrate")) return cmd_recalibrate(args);
    if (app.got_subcommand("report")) return cmd_report(args, report_inputs);
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 1;
}
