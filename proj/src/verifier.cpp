#include "calsteer/verifier.hpp"

#include <algorithm>
#include <cmath>

namespace calsteer {

OptionSet group_narrations(const std::vector<NarrationLabel>& narrations) {
  if (narrations.empty()) throw ConfigError("group_narrations: need at least one narration");
  OptionSet options;
  for (int i = 0; i < static_cast<int>(narrations.size()); ++i) {
    auto it = std::find_if(options.groups.begin(), options.groups.end(),
                           [&](const OptionSet::Group& g) { return g.label == narrations[i]; });
    if (it == options.groups.end()) {
      options.groups.push_back({narrations[i], {i}});
    } else {
      it->members.push_back(i);
    }
  }
  return options;
}

VecX softmax(const VecX& scores, double temperature) {
  const VecX scaled = scores / temperature;
  const double peak = scaled.maxCoeff();
  VecX out = (scaled.array() - peak).exp();
  out /= out.sum();
  return out;
}

ProbVector vanilla_scores(const OptionSet& options, const InstructionSpec& instruction,
                          const MiscalibrationProfile& profile, std::mt19937_64& rng) {
  profile.validate();
  const int n = options.num_options();
  const int k = options.total_samples();

  auto matches = [&](NarrationLabel label) {
    return std::any_of(instruction.intent_support.begin(), instruction.intent_support.end(),
                       [&](BehaviorMode intent) { return realizes(label, intent); });
  };

  VecX base = VecX::Zero(n);
  bool any_match = false;
  for (int i = 0; i < static_cast<int>(options.groups.size()); ++i) {
    if (matches(options.groups[i].label)) {
      base[i] = 1.0;
      any_match = true;
    }
  }
  if (!any_match) base[options.none_index()] = 1.0;

  if (profile.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, profile.noise_sigma);
    for (int i = 0; i < n; ++i) base[i] += noise(rng);
  }

  if (profile.majority_bias > 0.0 && !options.groups.empty()) {
    int majority = 0;
    for (int i = 1; i < static_cast<int>(options.groups.size()); ++i) {
      if (options.groups[i].members.size() > options.groups[majority].members.size())
        majority = i;
    }
    base[majority] += profile.majority_bias *
                      static_cast<double>(options.groups[majority].members.size()) /
                      static_cast<double>(k);
  }

  ProbVector probs = softmax(base, profile.temperature);
  require_normalized(probs);
  return probs;
}

IntentHypotheses hypothesize_intents(const InstructionSpec& instruction) {
  instruction.validate();
  return {instruction.intent_support, instruction.intent_prior};
}

ProbVector conditional_option_likelihood(const OptionSet& options, BehaviorMode intent,
                                         double smoothing) {
  if (smoothing < 0.0 || smoothing > 0.2)
    throw ConfigError("conditional_option_likelihood: smoothing outside [0, 0.2]");
  const int n = options.num_options();
  ProbVector probs = VecX::Constant(n, smoothing / static_cast<double>(n));

  std::vector<int> matching;
  for (int i = 0; i < static_cast<int>(options.groups.size()); ++i) {
    if (realizes(options.groups[i].label, intent)) matching.push_back(i);
  }
  if (matching.empty()) {
    probs[options.none_index()] += 1.0 - smoothing;
  } else {
    const double share = (1.0 - smoothing) / static_cast<double>(matching.size());
    for (int i : matching) probs[i] += share;
  }
  require_normalized(probs);
  return probs;
}

ProbVector bayesian_intent_scores(const OptionSet& options, const InstructionSpec& instruction,
                                  double smoothing) {
  const IntentHypotheses hypotheses = hypothesize_intents(instruction);
  ProbVector probs = VecX::Zero(options.num_options());
  for (int t = 0; t < static_cast<int>(hypotheses.intents.size()); ++t) {
    probs += hypotheses.prior[t] *
             conditional_option_likelihood(options, hypotheses.intents[t], smoothing);
  }
  require_normalized(probs);
  return probs;
}

void require_normalized(const ProbVector& probs) {
  if ((probs.array() < -1e-12).any() || (probs.array() > 1.0 + 1e-12).any())
    throw std::logic_error("probability vector entry outside [0,1]");
  if (std::abs(probs.sum() - 1.0) > 1e-9)
    throw std::logic_error("probability vector does not sum to 1");
}

}  // namespace calsteer
