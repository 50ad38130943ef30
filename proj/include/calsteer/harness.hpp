#ifndef CALSTEER_HARNESS_HPP
#define CALSTEER_HARNESS_HPP

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "calsteer/residual.hpp"
#include "calsteer/steering.hpp"

// Experiment orchestration: dataset generation, calibration, evaluation
// sweeps over the (set constructor x score shaping) grid, closed-loop
// steering runs, metric computation and reporting.

namespace calsteer {

struct MethodKey {
  SetConstructor constructor = SetConstructor::CP;
  ScoreShaping shaping = ScoreShaping::BayesianIntent;

  bool operator<(const MethodKey& other) const {
    if (constructor != other.constructor) return constructor < other.constructor;
    return shaping < other.shaping;
  }
  bool operator==(const MethodKey& other) const {
    return constructor == other.constructor && shaping == other.shaping;
  }
};

std::string to_string(const MethodKey& key);           // "cp:bayesian"
MethodKey method_key_from_string(const std::string&);  // inverse

struct RunConfig {
  std::uint64_t seed = 20240817;
  double epsilon = 0.15;
  int k_samples = 10;
  int num_phases = 2;
  int n_calib = 80;
  int n_test = 40;
  int threads = 1;

  double frac_ambiguous = 0.5;
  double frac_straightforward_capable = 0.375;
  double frac_straightforward_incapable = 0.125;
  bool exact_category_quota = false;

  PolicyParams policy;  // mode weights are overwritten per scenario
  MixConfig mix;

  double smoothing_delta = 0.05;
  MiscalibrationProfile profile{0.5, 0.5, 0.0};

  ScoreFamily score_family = ScoreFamily::MinMin;
  std::vector<MethodKey> methods = {
      {SetConstructor::CP, ScoreShaping::BayesianIntent},
      {SetConstructor::CP, ScoreShaping::Vanilla},
      {SetConstructor::SimpleSet, ScoreShaping::BayesianIntent},
      {SetConstructor::SimpleSet, ScoreShaping::Vanilla},
      {SetConstructor::APS, ScoreShaping::BayesianIntent},
      {SetConstructor::APS, ScoreShaping::Vanilla},
  };

  int max_clarifications = 3;

  ResidualHyperparams residual;
  int intervention_budget = 16;
  double variance_gate_threshold = 0.25;

  void validate() const;
  VerifierSetup verifier(ScoreShaping shaping) const {
    return VerifierSetup{shaping, profile, smoothing_delta};
  }
};

// Flat key = value text; '#' starts a comment. Unknown keys are errors.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);
std::string canonical_config_text(const RunConfig& config);
std::uint64_t config_hash(const RunConfig& config);

enum class Split { Calibration, Test };

// Scenario streams are disjoint between splits; scenario i depends only on
// (config seed, split, i).
std::vector<Scenario> generate_scenarios(const RunConfig& config, Split split, int count);
std::vector<Scenario> generate_scenarios(const RunConfig& config, Split split);

// One scenario pushed through the sampling/narration/labeling pipeline. The
// true-label sets are shared across shapings; only the probabilities differ.
struct PipelineSequence {
  int scenario_index = 0;
  Category category = Category::StraightforwardCapable;
  std::array<CalibSequence, kNumShapings> shaped;
  // Ambiguity the samples could not express: only one of the two plausible
  // place modes showed up among the K rollouts.
  bool ambiguous_partial = false;
};

std::vector<PipelineSequence> run_pipeline(const RunConfig& config,
                                           const std::vector<Scenario>& scenarios,
                                           const PolicySampler& sampler);

// Nonconformity scores of one shaping's sequences under a score family.
std::vector<double> sequence_scores(const std::vector<PipelineSequence>& sequences,
                                    ScoreShaping shaping, ScoreFamily family);

struct CalibrationOutput {
  std::vector<PipelineSequence> sequences;
  std::map<MethodKey, Threshold> thresholds;
  std::uint64_t config_hash = 0;
};

CalibrationOutput build_calibration_set(const RunConfig& config, const PolicySampler& sampler);

struct UqRecord {
  MethodKey method;
  Category category = Category::StraightforwardCapable;
  int phase = -1;  // 0..M-1 per phase; -1 = sequence summary row
  double coverage = 0.0;           // all true labels inside the set
  double clarification_rate = 0.0; // |set| > 1
  double mean_set_size = 0.0;
  int count = 0;
};

struct SteerRecord {
  std::string method;  // "cp:bayesian", "argmax:bayesian", "variance_gate"
  Category category = Category::StraightforwardCapable;
  bool overall = false;
  int tp = 0, tn = 0, fp = 0, fn = 0;
  double success_rate = 0.0;
  double intervention_rate = 0.0;
  double clarification_rate = 0.0;  // mean clarifications per episode
  int count = 0;
};

struct MetricsReport {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::vector<UqRecord> uq;
  std::vector<SteerRecord> steering;

  // Refuses to combine reports produced under different configurations.
  void merge(const MetricsReport& other);
};

std::vector<UqRecord> uq_metrics_from_sequences(const RunConfig& config,
                                                const std::vector<PipelineSequence>& sequences,
                                                const std::map<MethodKey, Threshold>& thresholds);

MetricsReport evaluate(const RunConfig& config, const std::map<MethodKey, Threshold>& thresholds,
                       const PolicySampler& sampler);

struct SteerRunResult {
  std::vector<EpisodeLog> episodes;
  std::vector<InterventionTrace> traces;
  MetricsReport metrics;
};

SteerRunResult run_steering(const RunConfig& config, const MethodKey& method, SteeringMode mode,
                            const Threshold& threshold, const PolicySampler& sampler,
                            const std::vector<Scenario>& scenarios, bool collect_traces);

// EnsembleDAgger-style baseline: the expert completes any phase whose
// across-sample terminal spread exceeds the variance threshold.
std::vector<EpisodeLog> run_variance_gated(const RunConfig& config,
                                           const std::vector<Scenario>& scenarios);

// Mean over episodes of human steps / trajectory length. A clarify-only
// episode counts as one human step; zero-length episodes are skipped with a
// warning.
double intervention_rate(const std::vector<EpisodeLog>& episodes);

SteerRecord summarize_steering(const std::string& method_name,
                               const std::vector<EpisodeLog>& episodes, Category category,
                               bool overall);

// Fresh thresholds for the shifted action distribution of the combined
// policy; reuses the calibration scenario stream.
std::map<MethodKey, Threshold> recalibrate(const RunConfig& config, const ResidualModel& model);

// records.csv (one row per method x category x metric), report.txt and
// plot_data.csv under out_dir; the directory is created when missing.
void write_report(const MetricsReport& report, const std::string& out_dir);

void parallel_for(int n, int threads, const std::function<void(int)>& body);

}  // namespace calsteer

#endif
