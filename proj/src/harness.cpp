#include "calsteer/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <thread>

#include "calsteer/rng.hpp"

namespace calsteer {

namespace {

constexpr Category kCategories[] = {Category::Ambiguous, Category::StraightforwardCapable,
                                    Category::StraightforwardIncapable};

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string format_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

BehaviorMode mode_from_string(const std::string& name) {
  if (name == "left" || name == "place_left") return BehaviorMode::PlaceLeft;
  if (name == "right" || name == "place_right") return BehaviorMode::PlaceRight;
  throw ConfigError("unknown behavior mode: " + name);
}

const char* mode_to_config_string(BehaviorMode m) {
  return m == BehaviorMode::PlaceLeft ? "left" : "right";
}

// Instruction-consistency labeling: every option realizing a supported
// intent is a true label; when none does, the correct answer is "none".
std::vector<int> true_label_set(const OptionSet& options, const InstructionSpec& instruction) {
  std::vector<int> labels;
  for (int i = 0; i < static_cast<int>(options.groups.size()); ++i) {
    const NarrationLabel label = options.groups[i].label;
    if (std::any_of(instruction.intent_support.begin(), instruction.intent_support.end(),
                    [&](BehaviorMode intent) { return realizes(label, intent); }))
      labels.push_back(i);
  }
  if (labels.empty()) labels.push_back(options.none_index());
  return labels;
}

// Advance the calibration pipeline between phases: execute a sample that
// realizes the hidden intent, or let the expert produce the next observation
// when no such sample exists.
SimState advance_phase(const SimState& state, const std::vector<TrajectorySample>& samples,
                       const Scenario& scenario) {
  for (const auto& sample : samples) {
    if (realizes(narrate(sample, state.phase), scenario.hidden_intent)) return sample.terminal();
  }
  SimState cur = state;
  for (int t = 0; t < scenario.policy_params.horizon; ++t) {
    cur = step_dynamics(cur, expert_action(cur, cur.phase, scenario.hidden_intent));
    if (phase_goal_reached(cur, cur.phase, scenario.hidden_intent)) break;
  }
  return cur;
}

PredictionSet build_set(SetConstructor constructor, const ProbVector& probs,
                        const Threshold& threshold) {
  switch (constructor) {
    case SetConstructor::CP: return prediction_set_cp(probs, threshold);
    case SetConstructor::SimpleSet: return prediction_set_simple(probs, threshold.epsilon);
    case SetConstructor::APS: return prediction_set_aps(probs, threshold);
  }
  throw std::logic_error("unreachable set constructor");
}

}  // namespace

std::string to_string(const MethodKey& key) {
  return std::string(to_string(key.constructor)) + ":" + to_string(key.shaping);
}

MethodKey method_key_from_string(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos)
    throw ConfigError("method must look like constructor:shaping, got: " + text);
  return {set_constructor_from_string(text.substr(0, colon)),
          shaping_from_string(text.substr(colon + 1))};
}

void RunConfig::validate() const {
  if (epsilon <= 0.0 || epsilon >= 1.0) throw ConfigError("config: epsilon outside (0,1)");
  if (k_samples < 2) throw ConfigError("config: k_samples must be at least 2");
  if (num_phases < 1 || num_phases > 2) throw ConfigError("config: phases must be 1 or 2");
  if (n_calib < 1 || n_test < 1) throw ConfigError("config: dataset sizes must be positive");
  if (threads < 1) throw ConfigError("config: threads must be positive");
  const double frac_sum =
      frac_ambiguous + frac_straightforward_capable + frac_straightforward_incapable;
  if (std::abs(frac_sum - 1.0) > 1e-9) throw ConfigError("config: category fractions must sum to 1");
  if (frac_ambiguous < 0.0 || frac_straightforward_capable < 0.0 ||
      frac_straightforward_incapable < 0.0)
    throw ConfigError("config: negative category fraction");
  if (smoothing_delta < 0.0 || smoothing_delta > 0.2)
    throw ConfigError("config: smoothing_delta outside [0, 0.2]");
  if (methods.empty()) throw ConfigError("config: empty method grid");
  if (intervention_budget < 0) throw ConfigError("config: negative intervention budget");
  if (variance_gate_threshold < 0.0) throw ConfigError("config: negative variance threshold");
  if (max_clarifications < 0) throw ConfigError("config: negative clarification cap");
  policy.validate();
  mix.validate();
  profile.validate();
  residual.validate();
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig config;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  std::vector<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError("config line " + std::to_string(line_no) + ": empty key or value");
    if (std::find(seen.begin(), seen.end(), key) != seen.end())
      throw ConfigError("config: duplicate key '" + key + "'");
    seen.push_back(key);

    auto parse_or_throw = [&](auto parser) {
      try {
        return parser(value);
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception&) {
        throw ConfigError("config: cannot parse value '" + value + "' for key '" + key + "'");
      }
    };
    auto as_double = [&] { return parse_or_throw([](const std::string& v) { return std::stod(v); }); };
    auto as_int = [&] { return parse_or_throw([](const std::string& v) { return std::stoi(v); }); };
    auto as_u64 = [&] {
      return parse_or_throw(
          [](const std::string& v) { return static_cast<std::uint64_t>(std::stoull(v)); });
    };
    auto as_bool = [&] {
      if (value == "true" || value == "1") return true;
      if (value == "false" || value == "0") return false;
      throw ConfigError("config: boolean expected for '" + key + "'");
    };

    if (key == "seed") config.seed = as_u64();
    else if (key == "epsilon") config.epsilon = as_double();
    else if (key == "k_samples") config.k_samples = as_int();
    else if (key == "phases") config.num_phases = as_int();
    else if (key == "n_calib") config.n_calib = as_int();
    else if (key == "n_test") config.n_test = as_int();
    else if (key == "threads") config.threads = as_int();
    else if (key == "frac_ambiguous") config.frac_ambiguous = as_double();
    else if (key == "frac_straightforward_capable") config.frac_straightforward_capable = as_double();
    else if (key == "frac_straightforward_incapable")
      config.frac_straightforward_incapable = as_double();
    else if (key == "exact_category_quota") config.exact_category_quota = as_bool();
    else if (key == "horizon") config.policy.horizon = as_int();
    else if (key == "chunk_length") config.policy.chunk_length = as_int();
    else if (key == "waypoint_noise_sigma") config.policy.waypoint_noise_sigma = as_double();
    else if (key == "grasp_success_prob") config.policy.grasp_success_prob = as_double();
    else if (key == "fail_weight") config.mix.fail_weight = as_double();
    else if (key == "ambiguous_balance_jitter") config.mix.ambiguous_balance_jitter = as_double();
    else if (key == "capable_offmode_weight") config.mix.capable_offmode_weight = as_double();
    else if (key == "incapable_instructed_weight")
      config.mix.incapable_instructed_weight = as_double();
    else if (key == "incapable_fail_weight") config.mix.incapable_fail_weight = as_double();
    else if (key == "incapable_intent") config.mix.incapable_intent = mode_from_string(value);
    else if (key == "smoothing_delta") config.smoothing_delta = as_double();
    else if (key == "profile_temperature") config.profile.temperature = as_double();
    else if (key == "profile_majority_bias") config.profile.majority_bias = as_double();
    else if (key == "profile_noise_sigma") config.profile.noise_sigma = as_double();
    else if (key == "score_family") config.score_family = score_family_from_string(value);
    else if (key == "methods") {
      config.methods.clear();
      std::istringstream list(value);
      std::string item;
      while (std::getline(list, item, ','))
        config.methods.push_back(method_key_from_string(trim(item)));
    } else if (key == "max_clarifications") config.max_clarifications = as_int();
    else if (key == "residual_learning_rate") config.residual.learning_rate = as_double();
    else if (key == "residual_batch_size") config.residual.batch_size = as_int();
    else if (key == "residual_iterations") config.residual.iterations = as_int();
    else if (key == "residual_hidden_units") config.residual.hidden_units = as_int();
    else if (key == "intervention_budget") config.intervention_budget = as_int();
    else if (key == "variance_gate_threshold") config.variance_gate_threshold = as_double();
    else throw ConfigError("config: unknown key '" + key + "'");
  }
  config.residual.seed = config.seed;
  config.validate();
  return config;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str());
}

std::string canonical_config_text(const RunConfig& config) {
  std::ostringstream out;
  out << "seed = " << config.seed << "\n";
  out << "epsilon = " << format_double(config.epsilon) << "\n";
  out << "k_samples = " << config.k_samples << "\n";
  out << "phases = " << config.num_phases << "\n";
  out << "n_calib = " << config.n_calib << "\n";
  out << "n_test = " << config.n_test << "\n";
  out << "threads = " << config.threads << "\n";
  out << "frac_ambiguous = " << format_double(config.frac_ambiguous) << "\n";
  out << "frac_straightforward_capable = " << format_double(config.frac_straightforward_capable)
      << "\n";
  out << "frac_straightforward_incapable = "
      << format_double(config.frac_straightforward_incapable) << "\n";
  out << "exact_category_quota = " << (config.exact_category_quota ? "true" : "false") << "\n";
  out << "horizon = " << config.policy.horizon << "\n";
  out << "chunk_length = " << config.policy.chunk_length << "\n";
  out << "waypoint_noise_sigma = " << format_double(config.policy.waypoint_noise_sigma) << "\n";
  out << "grasp_success_prob = " << format_double(config.policy.grasp_success_prob) << "\n";
  out << "fail_weight = " << format_double(config.mix.fail_weight) << "\n";
  out << "ambiguous_balance_jitter = " << format_double(config.mix.ambiguous_balance_jitter)
      << "\n";
  out << "capable_offmode_weight = " << format_double(config.mix.capable_offmode_weight) << "\n";
  out << "incapable_instructed_weight = "
      << format_double(config.mix.incapable_instructed_weight) << "\n";
  out << "incapable_fail_weight = " << format_double(config.mix.incapable_fail_weight) << "\n";
  out << "incapable_intent = " << mode_to_config_string(config.mix.incapable_intent) << "\n";
  out << "smoothing_delta = " << format_double(config.smoothing_delta) << "\n";
  out << "profile_temperature = " << format_double(config.profile.temperature) << "\n";
  out << "profile_majority_bias = " << format_double(config.profile.majority_bias) << "\n";
  out << "profile_noise_sigma = " << format_double(config.profile.noise_sigma) << "\n";
  out << "score_family = " << to_string(config.score_family) << "\n";
  out << "methods = ";
  for (std::size_t i = 0; i < config.methods.size(); ++i) {
    if (i) out << ",";
    out << to_string(config.methods[i]);
  }
  out << "\n";
  out << "max_clarifications = " << config.max_clarifications << "\n";
  out << "residual_learning_rate = " << format_double(config.residual.learning_rate) << "\n";
  out << "residual_batch_size = " << config.residual.batch_size << "\n";
  out << "residual_iterations = " << config.residual.iterations << "\n";
  out << "residual_hidden_units = " << config.residual.hidden_units << "\n";
  out << "intervention_budget = " << config.intervention_budget << "\n";
  out << "variance_gate_threshold = " << format_double(config.variance_gate_threshold) << "\n";
  return out.str();
}

std::uint64_t config_hash(const RunConfig& config) {
  return fnv1a64(canonical_config_text(config));
}

std::vector<Scenario> generate_scenarios(const RunConfig& config, Split split, int count) {
  config.validate();
  const std::uint64_t salt =
      split == Split::Calibration ? stream::kScenarioCalib : stream::kScenarioTest;

  std::vector<Category> categories(count);
  if (config.exact_category_quota) {
    // Largest-remainder apportionment, assigned in blocks.
    const double fracs[] = {config.frac_ambiguous, config.frac_straightforward_capable,
                            config.frac_straightforward_incapable};
    int counts[3];
    int assigned = 0;
    double remainders[3];
    for (int c = 0; c < 3; ++c) {
      const double exact = fracs[c] * count;
      counts[c] = static_cast<int>(std::floor(exact));
      remainders[c] = exact - counts[c];
      assigned += counts[c];
    }
    while (assigned < count) {
      const int best = static_cast<int>(std::max_element(remainders, remainders + 3) - remainders);
      ++counts[best];
      remainders[best] = -1.0;
      ++assigned;
    }
    int idx = 0;
    for (int c = 0; c < 3; ++c)
      for (int j = 0; j < counts[c]; ++j) categories[idx++] = kCategories[c];
  }

  std::vector<Scenario> scenarios(count);
  for (int i = 0; i < count; ++i) {
    auto rng = make_rng(derive_seed(config.seed, salt, static_cast<std::uint64_t>(i)));
    Category category;
    if (config.exact_category_quota) {
      category = categories[i];
    } else {
      const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      if (u < config.frac_ambiguous) category = Category::Ambiguous;
      else if (u < config.frac_ambiguous + config.frac_straightforward_capable)
        category = Category::StraightforwardCapable;
      else category = Category::StraightforwardIncapable;
    }
    scenarios[i] = generate_scenario(category, config.mix, config.policy, rng);
    scenarios[i].index = i;
  }
  return scenarios;
}

std::vector<Scenario> generate_scenarios(const RunConfig& config, Split split) {
  return generate_scenarios(config, split,
                            split == Split::Calibration ? config.n_calib : config.n_test);
}

std::vector<PipelineSequence> run_pipeline(const RunConfig& config,
                                           const std::vector<Scenario>& scenarios,
                                           const PolicySampler& sampler) {
  std::vector<PipelineSequence> sequences(scenarios.size());
  parallel_for(static_cast<int>(scenarios.size()), config.threads, [&](int i) {
    const Scenario& scenario = scenarios[i];
    PipelineSequence out;
    out.scenario_index = scenario.index;
    out.category = scenario.category;

    SimState state = scenario.initial_state;
    for (int phase = 0; phase < config.num_phases; ++phase) {
      const auto samples =
          sampler(state, scenario.policy_params, config.k_samples,
                  derive_seed(scenario.seed, stream::kPhaseSample, static_cast<std::uint64_t>(phase)));
      std::vector<NarrationLabel> labels;
      labels.reserve(samples.size());
      for (const auto& s : samples) labels.push_back(narrate(s, state.phase));
      const OptionSet options = group_narrations(labels);
      const std::vector<int> truth = true_label_set(options, scenario.instruction);
      if (scenario.category == Category::Ambiguous && state.phase == Phase::Place) {
        const bool left = std::count(labels.begin(), labels.end(), NarrationLabel::PlaceLeft) > 0;
        const bool right =
            std::count(labels.begin(), labels.end(), NarrationLabel::PlaceRight) > 0;
        if (left != right) out.ambiguous_partial = true;
      }

      auto vanilla_rng = make_rng(derive_seed(scenario.seed, stream::kVerifier,
                                              static_cast<std::uint64_t>(phase), 0));
      out.shaped[static_cast<int>(ScoreShaping::Vanilla)].phases.push_back(
          {vanilla_scores(options, scenario.instruction, config.profile, vanilla_rng), truth});
      out.shaped[static_cast<int>(ScoreShaping::BayesianIntent)].phases.push_back(
          {bayesian_intent_scores(options, scenario.instruction, config.smoothing_delta), truth});

      if (phase + 1 < config.num_phases) {
        state = advance_phase(state, samples, scenario);
        state.phase = Phase::Place;
      }
    }
    sequences[i] = std::move(out);
  });
  return sequences;
}

std::vector<double> sequence_scores(const std::vector<PipelineSequence>& sequences,
                                    ScoreShaping shaping, ScoreFamily family) {
  std::vector<double> scores;
  scores.reserve(sequences.size());
  for (const auto& seq : sequences) {
    const CalibSequence& cs = seq.shaped[static_cast<int>(shaping)];
    switch (family) {
      case ScoreFamily::MinMin: scores.push_back(nonconformity_min_min(cs)); break;
      case ScoreFamily::MinMax: scores.push_back(nonconformity_min_max(cs)); break;
      case ScoreFamily::APS: scores.push_back(aps_nonconformity(cs)); break;
    }
  }
  return scores;
}

CalibrationOutput build_calibration_set(const RunConfig& config, const PolicySampler& sampler) {
  CalibrationOutput out;
  out.config_hash = config_hash(config);
  const auto scenarios = generate_scenarios(config, Split::Calibration);
  out.sequences = run_pipeline(config, scenarios, sampler);
  for (const MethodKey& method : config.methods) {
    if (method.constructor == SetConstructor::SimpleSet) {
      // No calibration required; epsilon drives the greedy construction.
      out.thresholds[method] =
          Threshold{1.0 - config.epsilon, 0, config.epsilon, ScoreFamily::MinMin};
      continue;
    }
    const ScoreFamily family =
        method.constructor == SetConstructor::APS ? ScoreFamily::APS : config.score_family;
    out.thresholds[method] =
        calibrate_quantile(sequence_scores(out.sequences, method.shaping, family),
                           config.epsilon, family);
  }
  return out;
}

std::vector<UqRecord> uq_metrics_from_sequences(const RunConfig& config,
                                                const std::vector<PipelineSequence>& sequences,
                                                const std::map<MethodKey, Threshold>& thresholds) {
  struct Accumulator {
    int count = 0;
    std::vector<int> covered;       // per phase
    std::vector<int> clarified;     // per phase
    std::vector<double> set_sizes;  // per phase
    int covered_all_phases = 0;
  };

  std::vector<UqRecord> records;
  for (const MethodKey& method : config.methods) {
    const Threshold& threshold = thresholds.at(method);
    std::map<Category, Accumulator> acc;
    for (const auto& seq : sequences) {
      const CalibSequence& cs = seq.shaped[static_cast<int>(method.shaping)];
      Accumulator& a = acc[seq.category];
      if (a.covered.empty()) {
        a.covered.assign(config.num_phases, 0);
        a.clarified.assign(config.num_phases, 0);
        a.set_sizes.assign(config.num_phases, 0.0);
      }
      ++a.count;
      bool all_covered = true;
      for (int p = 0; p < config.num_phases; ++p) {
        const LabeledPhase& phase = cs.phases[p];
        const PredictionSet set = build_set(method.constructor, phase.probs, threshold);
        const bool covered = std::all_of(phase.true_labels.begin(), phase.true_labels.end(),
                                         [&](int y) { return set.contains(y); });
        a.covered[p] += covered ? 1 : 0;
        all_covered = all_covered && covered;
        a.clarified[p] += set.size() > 1 ? 1 : 0;
        a.set_sizes[p] += set.size();
      }
      a.covered_all_phases += all_covered ? 1 : 0;
    }

    for (Category category : kCategories) {
      auto it = acc.find(category);
      if (it == acc.end()) continue;
      const Accumulator& a = it->second;
      const int final_phase = config.num_phases - 1;
      for (int p = 0; p < config.num_phases; ++p) {
        UqRecord rec;
        rec.method = method;
        rec.category = category;
        rec.phase = p;
        rec.coverage = static_cast<double>(a.covered[p]) / a.count;
        rec.clarification_rate = static_cast<double>(a.clarified[p]) / a.count;
        rec.mean_set_size = a.set_sizes[p] / a.count;
        rec.count = a.count;
        records.push_back(rec);
      }
      UqRecord summary;
      summary.method = method;
      summary.category = category;
      summary.phase = -1;
      summary.coverage = static_cast<double>(a.covered_all_phases) / a.count;
      summary.clarification_rate = static_cast<double>(a.clarified[final_phase]) / a.count;
      summary.mean_set_size = a.set_sizes[final_phase] / a.count;
      summary.count = a.count;
      records.push_back(summary);
    }
  }
  return records;
}

MetricsReport evaluate(const RunConfig& config, const std::map<MethodKey, Threshold>& thresholds,
                       const PolicySampler& sampler) {
  MetricsReport report;
  report.config_hash = config_hash(config);
  report.seed = config.seed;
  const auto scenarios = generate_scenarios(config, Split::Test);
  const auto sequences = run_pipeline(config, scenarios, sampler);
  report.uq = uq_metrics_from_sequences(config, sequences, thresholds);
  return report;
}

void MetricsReport::merge(const MetricsReport& other) {
  if (config_hash != other.config_hash)
    throw ConfigError("refusing to merge metrics from different configurations");
  uq.insert(uq.end(), other.uq.begin(), other.uq.end());
  steering.insert(steering.end(), other.steering.begin(), other.steering.end());
}

SteerRecord summarize_steering(const std::string& method_name,
                               const std::vector<EpisodeLog>& episodes, Category category,
                               bool overall) {
  SteerRecord rec;
  rec.method = method_name;
  rec.category = category;
  rec.overall = overall;
  std::vector<EpisodeLog> slice;
  for (const auto& e : episodes) {
    if (overall || e.category == category) slice.push_back(e);
  }
  rec.count = static_cast<int>(slice.size());
  if (slice.empty()) return rec;
  double clar = 0.0;
  for (const auto& e : slice) {
    switch (e.outcome.confusion) {
      case Confusion::TP: ++rec.tp; break;
      case Confusion::TN: ++rec.tn; break;
      case Confusion::FP: ++rec.fp; break;
      case Confusion::FN: ++rec.fn; break;
    }
    clar += e.outcome.clarification_count;
  }
  rec.success_rate = static_cast<double>(rec.tp) / rec.count;
  rec.clarification_rate = clar / rec.count;
  rec.intervention_rate = intervention_rate(slice);
  return rec;
}

SteerRunResult run_steering(const RunConfig& config, const MethodKey& method, SteeringMode mode,
                            const Threshold& threshold, const PolicySampler& sampler,
                            const std::vector<Scenario>& scenarios, bool collect_traces) {
  SteerRunResult result;
  result.episodes.resize(scenarios.size());

  EpisodeOptions options;
  options.mode = mode;
  options.constructor = method.constructor;
  options.max_clarifications = config.max_clarifications;
  const VerifierSetup verifier = config.verifier(method.shaping);

  parallel_for(static_cast<int>(scenarios.size()), config.threads, [&](int i) {
    result.episodes[i] = run_episode(scenarios[i], verifier, threshold, config.k_samples,
                                     config.num_phases, sampler, options);
  });

  // Intervention accounting and trace collection; the budget caps training
  // data, not the human effort spent.
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    EpisodeLog& episode = result.episodes[i];
    if (episode.intervened) {
      const auto trace = collect_intervention(
          scenarios[i], scenarios[i].policy_params, config.num_phases,
          derive_seed(config.seed, stream::kIntervene, static_cast<std::uint64_t>(i)));
      if (trace.has_value()) {
        episode.human_steps = trace->human_steps();
        episode.total_steps = static_cast<int>(trace->steps.size());
        if (collect_traces &&
            static_cast<int>(result.traces.size()) < config.intervention_budget)
          result.traces.push_back(*trace);
      } else {
        episode.human_steps = config.policy.horizon;
        episode.total_steps = episode.executed_steps + config.policy.horizon;
      }
    } else {
      episode.human_steps = episode.outcome.clarification_count > 0 ? 1 : 0;
      episode.total_steps = episode.executed_steps;
    }
  }

  const std::string name =
      (mode == SteeringMode::ArgmaxBaseline ? std::string("argmax:") + to_string(method.shaping)
                                            : to_string(method));
  result.metrics.config_hash = config_hash(config);
  result.metrics.seed = config.seed;
  for (Category category : kCategories)
    result.metrics.steering.push_back(
        summarize_steering(name, result.episodes, category, false));
  result.metrics.steering.push_back(
      summarize_steering(name, result.episodes, Category::StraightforwardCapable, true));
  return result;
}

std::vector<EpisodeLog> run_variance_gated(const RunConfig& config,
                                           const std::vector<Scenario>& scenarios) {
  std::vector<EpisodeLog> episodes(scenarios.size());
  const PolicySampler sampler = base_policy_sampler();
  parallel_for(static_cast<int>(scenarios.size()), config.threads, [&](int i) {
    const Scenario& scenario = scenarios[i];
    EpisodeLog log;
    log.scenario_index = scenario.index;
    log.category = scenario.category;
    log.hidden_intent = scenario.hidden_intent;

    SimState state = scenario.initial_state;
    bool took_over = false;
    bool any_matched_at_takeover = false;
    NarrationLabel last_executed = NarrationLabel::GraspMiss;
    for (int phase = 0; phase < config.num_phases; ++phase) {
      const auto samples = sampler(
          state, scenario.policy_params, config.k_samples,
          derive_seed(scenario.seed, stream::kPhaseSample, static_cast<std::uint64_t>(phase)));
      const double spread = terminal_waypoint_variance(samples);
      if (spread > config.variance_gate_threshold) {
        if (!took_over) {
          took_over = true;
          log.intervened = true;
          log.intervene_phase = state.phase;
          for (const auto& s : samples) {
            if (realizes(narrate(s, state.phase), scenario.hidden_intent))
              any_matched_at_takeover = true;
          }
        }
        for (int t = 0; t < scenario.policy_params.horizon; ++t) {
          state = step_dynamics(state, expert_action(state, state.phase, scenario.hidden_intent));
          ++log.human_steps;
          ++log.total_steps;
          if (phase_goal_reached(state, state.phase, scenario.hidden_intent)) break;
        }
        last_executed = narrate_state(state, state.phase);
      } else {
        auto pick_rng = make_rng(derive_seed(scenario.seed, 0xba5e11e, phase));
        const int pick =
            std::uniform_int_distribution<int>(0, config.k_samples - 1)(pick_rng);
        for (const ActionStep& action : samples[pick].actions) state = step_dynamics(state, action);
        log.executed_steps += scenario.policy_params.horizon;
        log.total_steps += scenario.policy_params.horizon;
        last_executed = narrate(samples[pick], state.phase);
      }
      state.phase = Phase::Place;
    }
    if (took_over) {
      log.outcome.confusion =
          classify_outcome(Resolution::Kind::Intervene, false, any_matched_at_takeover);
    } else {
      log.outcome.executed_outcome = last_executed;
      log.outcome.confusion = classify_outcome(
          Resolution::Kind::Execute, realizes(last_executed, scenario.hidden_intent), false);
    }
    log.outcome.success = log.outcome.confusion == Confusion::TP;
    episodes[i] = log;
  });
  return episodes;
}

double intervention_rate(const std::vector<EpisodeLog>& episodes) {
  double sum = 0.0;
  int n = 0;
  for (const auto& e : episodes) {
    if (e.total_steps <= 0) {
      std::cerr << "warning: skipping zero-length trajectory (scenario " << e.scenario_index
                << ") in intervention rate\n";
      continue;
    }
    sum += static_cast<double>(e.human_steps) / e.total_steps;
    ++n;
  }
  return n == 0 ? 0.0 : sum / n;
}

std::map<MethodKey, Threshold> recalibrate(const RunConfig& config, const ResidualModel& model) {
  return build_calibration_set(config, residual_policy_sampler(model)).thresholds;
}

void write_report(const MetricsReport& report, const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + out_dir + ": " + ec.message());

  auto open = [&](const std::string& name) {
    std::ofstream out(out_dir + "/" + name);
    if (!out) throw std::runtime_error("cannot write " + out_dir + "/" + name);
    return out;
  };

  char hash_line[64];
  std::snprintf(hash_line, sizeof(hash_line), "# config_hash = %016llx\n",
                static_cast<unsigned long long>(report.config_hash));

  {
    auto out = open("records.csv");
    out << hash_line;
    out << "method,category,metric,value\n";
    for (const auto& rec : report.uq) {
      if (rec.phase != -1) continue;
      const std::string prefix = to_string(rec.method) + "," + to_string(rec.category) + ",";
      out << prefix << "coverage," << format_metric(rec.coverage) << "\n";
      out << prefix << "clarification_rate," << format_metric(rec.clarification_rate) << "\n";
      out << prefix << "set_size," << format_metric(rec.mean_set_size) << "\n";
    }
    for (const auto& rec : report.steering) {
      const std::string category = rec.overall ? "overall" : to_string(rec.category);
      const std::string prefix = rec.method + "," + category + ",";
      out << prefix << "success_rate," << format_metric(rec.success_rate) << "\n";
      out << prefix << "intervention_rate," << format_metric(rec.intervention_rate) << "\n";
      out << prefix << "clarifications_per_episode," << format_metric(rec.clarification_rate)
          << "\n";
    }
  }

  {
    auto out = open("plot_data.csv");
    out << hash_line;
    out << "method,category,coverage,clarification_rate,set_size\n";
    for (const auto& rec : report.uq) {
      if (rec.phase != -1) continue;
      out << to_string(rec.method) << "," << to_string(rec.category) << ","
          << format_metric(rec.coverage) << "," << format_metric(rec.clarification_rate) << ","
          << format_metric(rec.mean_set_size) << "\n";
    }
  }

  {
    auto out = open("report.txt");
    char line[256];
    std::snprintf(line, sizeof(line), "config hash: %016llx  seed: %llu\n\n",
                  static_cast<unsigned long long>(report.config_hash),
                  static_cast<unsigned long long>(report.seed));
    out << line;
    if (!report.uq.empty()) {
      out << "uncertainty quantification (summary rows: sequence coverage, final-phase "
             "clarification rate and set size)\n";
      std::snprintf(line, sizeof(line), "%-18s %-26s %-7s %9s %9s %9s %6s\n", "method",
                    "category", "phase", "coverage", "clarify", "setsize", "n");
      out << line;
      for (const auto& rec : report.uq) {
        const std::string phase = rec.phase < 0 ? "all" : std::to_string(rec.phase);
        std::snprintf(line, sizeof(line), "%-18s %-26s %-7s %9.4f %9.4f %9.4f %6d\n",
                      to_string(rec.method).c_str(), to_string(rec.category), phase.c_str(),
                      rec.coverage, rec.clarification_rate, rec.mean_set_size, rec.count);
        out << line;
      }
      out << "\n";
    }
    if (!report.steering.empty()) {
      out << "closed-loop steering\n";
      std::snprintf(line, sizeof(line), "%-20s %-26s %4s %4s %4s %4s %9s %9s %6s\n", "method",
                    "category", "tp", "tn", "fp", "fn", "success", "intvrate", "n");
      out << line;
      for (const auto& rec : report.steering) {
        const std::string category = rec.overall ? "overall" : to_string(rec.category);
        std::snprintf(line, sizeof(line), "%-20s %-26s %4d %4d %4d %4d %9.4f %9.4f %6d\n",
                      rec.method.c_str(), category.c_str(), rec.tp, rec.tn, rec.fp, rec.fn,
                      rec.success_rate, rec.intervention_rate, rec.count);
        out << line;
      }
    }
  }
}

void parallel_for(int n, int threads, const std::function<void(int)>& body) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  const int workers = std::min(threads, n);
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < n; i += workers) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& err : errors) {
    if (err) std::rethrow_exception(err);
  }
}

}  // namespace calsteer
