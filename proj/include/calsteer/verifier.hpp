#ifndef CALSTEER_VERIFIER_HPP
#define CALSTEER_VERIFIER_HPP

#include <random>
#include <vector>

#include "calsteer/types.hpp"

// Simulated verifier: turns grouped outcome narrations into probability
// vectors over options. Two generators are provided: a configurably
// miscalibrated "vanilla" scorer and an intent-marginalized Bayesian scorer.

namespace calsteer {

// Grouped narrations plus a trailing "none of the above" option.
struct OptionSet {
  struct Group {
    NarrationLabel label;
    std::vector<int> members;  // indices into the K samples
  };
  std::vector<Group> groups;

  int none_index() const { return static_cast<int>(groups.size()); }
  int num_options() const { return static_cast<int>(groups.size()) + 1; }
  int total_samples() const {
    int n = 0;
    for (const auto& g : groups) n += static_cast<int>(g.members.size());
    return n;
  }
};

struct IntentHypotheses {
  std::vector<BehaviorMode> intents;
  VecX prior;
};

// Knobs for the vanilla scorer's departure from honesty. Low temperature
// sharpens the distribution; majority_bias favors the most sampled outcome.
struct MiscalibrationProfile {
  double temperature = 0.5;
  double majority_bias = 0.0;
  double noise_sigma = 0.0;

  void validate() const {
    if (temperature <= 0.0) throw ConfigError("profile: temperature must be positive");
    if (majority_bias < 0.0) throw ConfigError("profile: negative majority bias");
    if (noise_sigma < 0.0) throw ConfigError("profile: negative noise sigma");
  }
};

enum class ScoreShaping { Vanilla, BayesianIntent };
constexpr int kNumShapings = 2;

// One group per distinct label, in order of first appearance; the "none"
// option is always appended last.
OptionSet group_narrations(const std::vector<NarrationLabel>& narrations);

VecX softmax(const VecX& scores, double temperature);

// Alignment-based scores pushed through the miscalibration transform:
// score 1 for options matching any supported intent (the none option scores
// 1 only when nothing matches), plus Gaussian noise, plus a majority-size
// boost, then softmax at the profile temperature.
ProbVector vanilla_scores(const OptionSet& options, const InstructionSpec& instruction,
                          const MiscalibrationProfile& profile, std::mt19937_64& rng);

IntentHypotheses hypothesize_intents(const InstructionSpec& instruction);

// Likelihood of each option under one hypothesized intent: mass (1 - delta)
// spread over options realizing the intent (or on "none" when no option
// does), the rest spread uniformly.
ProbVector conditional_option_likelihood(const OptionSet& options, BehaviorMode intent,
                                         double smoothing);

// Intent-marginalized option distribution: the mixture of conditional
// likelihoods weighted by the instruction's intent prior.
ProbVector bayesian_intent_scores(const OptionSet& options, const InstructionSpec& instruction,
                                  double smoothing);

// Postcondition check shared by all emitters.
void require_normalized(const ProbVector& probs);

}  // namespace calsteer

#endif
