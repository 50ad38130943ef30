#include "calsteer/steering.hpp"

#include <algorithm>
#include <cassert>

#include "calsteer/rng.hpp"

namespace calsteer {

namespace {

ProbVector score_options(const OptionSet& options, const InstructionSpec& instruction,
                         const VerifierSetup& verifier, std::uint64_t noise_seed) {
  if (verifier.shaping == ScoreShaping::BayesianIntent)
    return bayesian_intent_scores(options, instruction, verifier.smoothing_delta);
  auto rng = make_rng(noise_seed);
  return vanilla_scores(options, instruction, verifier.profile, rng);
}

int argmax_option(const ProbVector& probs) {
  int best = 0;
  for (int i = 1; i < probs.size(); ++i) {
    if (probs[i] > probs[best]) best = i;
  }
  return best;
}

}  // namespace

Resolution decide(const PredictionSet& set, int none_index) {
  Resolution res;
  if (set.size() == 1 && set.members[0] != none_index) {
    res.kind = Resolution::Kind::Execute;
    res.option = set.members[0];
  } else if (set.size() > 1) {
    res.kind = Resolution::Kind::Clarify;
  } else {
    // The none singleton, and the empty set as its conservative extension.
    res.kind = Resolution::Kind::Intervene;
  }
  return res;
}

InstructionSpec clarify(const InstructionSpec& instruction, const PredictionSet& set,
                        BehaviorMode oracle_intent) {
  if (set.size() <= 1) throw std::logic_error("clarify: prediction set is not ambiguous");
  if (instruction.clarified)
    throw std::logic_error("clarify: instruction is already clarified");
  if (std::find(instruction.intent_support.begin(), instruction.intent_support.end(),
                oracle_intent) == instruction.intent_support.end())
    throw ConfigError("clarify: oracle intent outside instruction support");
  InstructionSpec updated = make_instruction({oracle_intent});
  updated.clarified = true;
  return updated;
}

Confusion classify_outcome(Resolution::Kind final_kind, bool executed_matches,
                           bool any_sample_matched) {
  if (final_kind == Resolution::Kind::Execute)
    return executed_matches ? Confusion::TP : Confusion::FP;
  return any_sample_matched ? Confusion::FN : Confusion::TN;
}

EpisodeLog run_episode(const Scenario& scenario, const VerifierSetup& verifier,
                       const Threshold& threshold, int k_samples, int num_phases,
                       const PolicySampler& sampler, const EpisodeOptions& options) {
  EpisodeLog log;
  log.scenario_index = scenario.index;
  log.category = scenario.category;
  log.hidden_intent = scenario.hidden_intent;

  InstructionSpec instruction = scenario.instruction;
  SimState state = scenario.initial_state;
  NarrationLabel last_executed = NarrationLabel::GraspMiss;
  bool overflowed = false;

  for (int phase_idx = 0; phase_idx < num_phases; ++phase_idx) {
    const std::uint64_t phase_seed =
        derive_seed(scenario.seed, stream::kPhaseSample, static_cast<std::uint64_t>(phase_idx));
    const auto samples = sampler(state, scenario.policy_params, k_samples, phase_seed);

    std::vector<NarrationLabel> labels;
    labels.reserve(samples.size());
    for (const auto& s : samples) labels.push_back(narrate(s, state.phase));
    const OptionSet opts = group_narrations(labels);

    PhaseRecord record;
    record.phase = state.phase;
    for (const auto& g : opts.groups) record.group_labels.push_back(g.label);
    record.any_sample_matched = std::any_of(labels.begin(), labels.end(), [&](NarrationLabel l) {
      return realizes(l, scenario.hidden_intent);
    });
    if (scenario.category == Category::Ambiguous && state.phase == Phase::Place) {
      // Only one of the two plausible place modes appeared among the samples.
      const bool left = std::count(labels.begin(), labels.end(), NarrationLabel::PlaceLeft) > 0;
      const bool right = std::count(labels.begin(), labels.end(), NarrationLabel::PlaceRight) > 0;
      if (left != right) log.ambiguous_partial_presence = true;
    }

    Resolution resolution;
    ProbVector probs;
    int attempt = 0;
    for (;;) {
      const std::uint64_t noise_seed = derive_seed(
          scenario.seed, stream::kVerifier, static_cast<std::uint64_t>(phase_idx),
          static_cast<std::uint64_t>(attempt));
      probs = score_options(opts, instruction, verifier, noise_seed);

      if (options.mode == SteeringMode::ArgmaxBaseline) {
        const int best = argmax_option(probs);
        record.set.members = {best};
        resolution = best == opts.none_index()
                         ? Resolution{Resolution::Kind::Intervene, -1}
                         : Resolution{Resolution::Kind::Execute, best};
        break;
      }

      switch (options.constructor) {
        case SetConstructor::CP: record.set = prediction_set_cp(probs, threshold); break;
        case SetConstructor::SimpleSet:
          record.set = prediction_set_simple(probs, threshold.epsilon);
          break;
        case SetConstructor::APS: record.set = prediction_set_aps(probs, threshold); break;
      }
      resolution = decide(record.set, opts.none_index());
      if (resolution.kind != Resolution::Kind::Clarify) break;
      if (instruction.clarified || attempt >= options.max_clarifications) {
        overflowed = true;
        break;
      }
      instruction = clarify(instruction, record.set, scenario.hidden_intent);
      ++log.outcome.clarification_count;
      ++record.clarifications;
      ++attempt;
    }

    record.probs = probs;
    record.resolution = resolution;
    log.phase_records.push_back(record);

    if (overflowed) {
      log.outcome.confusion = Confusion::FN;
      log.outcome.success = false;
      log.total_steps = log.executed_steps;
      return log;
    }

    if (resolution.kind == Resolution::Kind::Intervene) {
      log.intervened = true;
      log.intervene_phase = state.phase;
      log.outcome.confusion =
          classify_outcome(Resolution::Kind::Intervene, false, record.any_sample_matched);
      log.outcome.success = false;
      log.total_steps = log.executed_steps;
      return log;
    }

    // Execute: replay the chosen group's first sample through the true
    // dynamics. The world model is exact, so the replay must land on the
    // imagined terminal state.
    assert(resolution.option != opts.none_index());
    const TrajectorySample& chosen = samples[opts.groups[resolution.option].members.front()];
    for (const ActionStep& action : chosen.actions) state = step_dynamics(state, action);
    assert((state.gripper_pos - chosen.terminal().gripper_pos).norm() == 0.0);
    log.executed_steps += static_cast<int>(chosen.actions.size());
    last_executed = narrate(chosen, chosen.phase);
    state.phase = Phase::Place;
  }

  log.outcome.executed_outcome = last_executed;
  log.outcome.confusion = classify_outcome(
      Resolution::Kind::Execute, realizes(last_executed, scenario.hidden_intent), false);
  log.outcome.success = log.outcome.confusion == Confusion::TP;
  log.total_steps = log.executed_steps;
  return log;
}

const char* to_string(SetConstructor c) {
  switch (c) {
    case SetConstructor::CP: return "cp";
    case SetConstructor::SimpleSet: return "simple";
    case SetConstructor::APS: return "aps";
  }
  return "?";
}

const char* to_string(Confusion c) {
  switch (c) {
    case Confusion::TP: return "tp";
    case Confusion::TN: return "tn";
    case Confusion::FP: return "fp";
    case Confusion::FN: return "fn";
  }
  return "?";
}

const char* to_string(Resolution::Kind k) {
  switch (k) {
    case Resolution::Kind::Execute: return "execute";
    case Resolution::Kind::Clarify: return "clarify";
    case Resolution::Kind::Intervene: return "intervene";
  }
  return "?";
}

const char* to_string(ScoreShaping s) {
  return s == ScoreShaping::Vanilla ? "vanilla" : "bayesian";
}

SetConstructor set_constructor_from_string(const std::string& name) {
  if (name == "cp") return SetConstructor::CP;
  if (name == "simple") return SetConstructor::SimpleSet;
  if (name == "aps") return SetConstructor::APS;
  throw ConfigError("unknown set constructor: " + name);
}

ScoreShaping shaping_from_string(const std::string& name) {
  if (name == "vanilla") return ScoreShaping::Vanilla;
  if (name == "bayesian") return ScoreShaping::BayesianIntent;
  throw ConfigError("unknown score shaping: " + name);
}

}  // namespace calsteer
