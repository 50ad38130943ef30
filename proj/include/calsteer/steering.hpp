#ifndef CALSTEER_STEERING_HPP
#define CALSTEER_STEERING_HPP

#include <optional>
#include <vector>

#include "calsteer/conformal.hpp"
#include "calsteer/sim.hpp"
#include "calsteer/types.hpp"
#include "calsteer/verifier.hpp"

// Maps prediction sets to resolution strategies and runs the closed loop:
// sample, narrate, verify, then execute / clarify / intervene per phase.

namespace calsteer {

enum class SetConstructor { CP, SimpleSet, APS };

struct Resolution {
  enum class Kind { Execute, Clarify, Intervene };
  Kind kind = Kind::Intervene;
  int option = -1;  // valid for Execute; never the none option
};

enum class Confusion { TP, TN, FP, FN };

struct EpisodeOutcome {
  Confusion confusion = Confusion::TN;
  int clarification_count = 0;
  std::optional<NarrationLabel> executed_outcome;  // empty for intervene episodes
  bool success = false;
};

struct VerifierSetup {
  ScoreShaping shaping = ScoreShaping::BayesianIntent;
  MiscalibrationProfile profile;
  double smoothing_delta = 0.05;
};

enum class SteeringMode { Calibrated, ArgmaxBaseline };

struct EpisodeOptions {
  SteeringMode mode = SteeringMode::Calibrated;
  SetConstructor constructor = SetConstructor::CP;
  int max_clarifications = 3;
};

struct PhaseRecord {
  Phase phase = Phase::Grasp;
  std::vector<NarrationLabel> group_labels;
  ProbVector probs;  // distribution used by the final decision of the phase
  PredictionSet set;
  Resolution resolution;
  int clarifications = 0;
  bool any_sample_matched = false;
};

struct EpisodeLog {
  int scenario_index = 0;
  Category category = Category::StraightforwardCapable;
  BehaviorMode hidden_intent = BehaviorMode::PlaceLeft;
  std::vector<PhaseRecord> phase_records;
  EpisodeOutcome outcome;
  bool intervened = false;
  Phase intervene_phase = Phase::Grasp;
  int executed_steps = 0;
  // Filled by the harness when interventions are collected for this episode.
  int human_steps = 0;
  int total_steps = 0;
  bool ambiguous_partial_presence = false;
};

// Singleton non-none set -> execute it; larger set -> clarify; the none
// singleton or an empty set -> intervene.
Resolution decide(const PredictionSet& set, int none_index);

// Truthful oracle answer: collapses the instruction to a point mass on the
// hidden intent. Requires an unresolved instruction and |set| > 1.
InstructionSpec clarify(const InstructionSpec& instruction, const PredictionSet& set,
                        BehaviorMode oracle_intent);

Confusion classify_outcome(Resolution::Kind final_kind, bool executed_matches,
                           bool any_sample_matched);

// Full closed-loop episode: per phase, sample K rollouts, verify, resolve.
// Execute replays the chosen sample through the true dynamics; Clarify
// re-scores with the updated instruction; Intervene ends the episode.
EpisodeLog run_episode(const Scenario& scenario, const VerifierSetup& verifier,
                       const Threshold& threshold, int k_samples, int num_phases,
                       const PolicySampler& sampler, const EpisodeOptions& options);

const char* to_string(SetConstructor c);
const char* to_string(Confusion c);
const char* to_string(Resolution::Kind k);
const char* to_string(ScoreShaping s);
SetConstructor set_constructor_from_string(const std::string& name);
ScoreShaping shaping_from_string(const std::string& name);

}  // namespace calsteer

#endif
