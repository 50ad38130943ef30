#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "calsteer/rng.hpp"
#include "calsteer/verifier.hpp"

using namespace calsteer;

namespace {

std::vector<NarrationLabel> repeat(NarrationLabel label, int n) {
  return std::vector<NarrationLabel>(n, label);
}

OptionSet left_right_options() {
  std::vector<NarrationLabel> labels = repeat(NarrationLabel::PlaceLeft, 6);
  const auto rights = repeat(NarrationLabel::PlaceRight, 4);
  labels.insert(labels.end(), rights.begin(), rights.end());
  return group_narrations(labels);
}

InstructionSpec ambiguous_instruction() {
  return make_instruction({BehaviorMode::PlaceLeft, BehaviorMode::PlaceRight});
}

InstructionSpec straightforward(BehaviorMode mode) { return make_instruction({mode}); }

}  // namespace

TEST_CASE("grouping keeps first-appearance order and appends none") {
  const OptionSet two = left_right_options();
  CHECK(two.num_options() == 3);
  CHECK(two.groups[0].label == NarrationLabel::PlaceLeft);
  CHECK(two.groups[0].members.size() == 6);
  CHECK(two.groups[1].members.size() == 4);
  CHECK(two.none_index() == 2);

  const OptionSet single = group_narrations(repeat(NarrationLabel::Drop, 10));
  CHECK(single.num_options() == 2);
  CHECK(single.none_index() == 1);
}

TEST_CASE("grouping partitions the sample indices") {
  auto rng = make_rng(3);
  std::vector<NarrationLabel> labels;
  const NarrationLabel pool[] = {NarrationLabel::PlaceLeft, NarrationLabel::PlaceRight,
                                 NarrationLabel::Drop};
  std::uniform_int_distribution<int> pick(0, 2);
  for (int i = 0; i < 10; ++i) labels.push_back(pool[pick(rng)]);
  const OptionSet options = group_narrations(labels);

  std::vector<int> seen;
  for (const auto& group : options.groups) {
    for (int idx : group.members) {
      CHECK(labels[idx] == group.label);
      seen.push_back(idx);
    }
  }
  std::sort(seen.begin(), seen.end());
  std::vector<int> expected(10);
  for (int i = 0; i < 10; ++i) expected[i] = i;
  CHECK(seen == expected);
}

TEST_CASE("vanilla at infinite temperature is uniform") {
  auto rng = make_rng(1);
  const MiscalibrationProfile profile{1e9, 0.0, 0.0};
  const ProbVector probs = vanilla_scores(left_right_options(), ambiguous_instruction(),
                                          profile, rng);
  for (int i = 0; i < probs.size(); ++i)
    CHECK(probs[i] == doctest::Approx(1.0 / probs.size()).epsilon(1e-6));
}

TEST_CASE("overconfident vanilla piles mass on the majority option") {
  // All ten samples place right under an ambiguous instruction.
  const OptionSet options = group_narrations(repeat(NarrationLabel::PlaceRight, 10));
  auto rng = make_rng(1);
  const MiscalibrationProfile profile{0.1, 1.0, 0.0};
  const ProbVector probs = vanilla_scores(options, ambiguous_instruction(), profile, rng);
  CHECK(probs[0] > 0.95);

  // Closed-form check: scores (1 + 1*10/10, 0) through softmax at tau=0.1.
  const double expected = 1.0 / (1.0 + std::exp((0.0 - 2.0) / 0.1));
  CHECK(probs[0] == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("alignment dominates an honest vanilla profile") {
  std::vector<NarrationLabel> labels = repeat(NarrationLabel::PlaceLeft, 5);
  const auto rights = repeat(NarrationLabel::PlaceRight, 5);
  labels.insert(labels.end(), rights.begin(), rights.end());
  const OptionSet options = group_narrations(labels);
  auto rng = make_rng(1);
  const MiscalibrationProfile profile{0.5, 0.0, 0.0};
  const ProbVector probs =
      vanilla_scores(options, straightforward(BehaviorMode::PlaceLeft), profile, rng);
  int argmax = 0;
  probs.maxCoeff(&argmax);
  CHECK(argmax == 0);
}

TEST_CASE("vanilla none option scores high only when nothing matches") {
  const OptionSet options = group_narrations(repeat(NarrationLabel::PlaceRight, 10));
  auto rng = make_rng(1);
  const MiscalibrationProfile profile{0.2, 0.0, 0.0};
  const ProbVector probs =
      vanilla_scores(options, straightforward(BehaviorMode::PlaceLeft), profile, rng);
  int argmax = 0;
  probs.maxCoeff(&argmax);
  CHECK(argmax == options.none_index());
}

TEST_CASE("softmax argmax is invariant to constant shifts") {
  auto rng = make_rng(17);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    VecX scores(5);
    for (int i = 0; i < 5; ++i) scores[i] = u(rng);
    const double shift = u(rng);
    const VecX a = softmax(scores, 0.3);
    const VecX b = softmax(scores.array() + shift, 0.3);
    int arg_a = 0, arg_b = 0;
    a.maxCoeff(&arg_a);
    b.maxCoeff(&arg_b);
    CHECK(arg_a == arg_b);
    for (int i = 0; i < 5; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
  }
}

TEST_CASE("intent hypotheses mirror the instruction") {
  const IntentHypotheses ambiguous = hypothesize_intents(ambiguous_instruction());
  CHECK(ambiguous.intents.size() == 2);
  CHECK(ambiguous.prior[0] == doctest::Approx(0.5));
  CHECK(ambiguous.prior[1] == doctest::Approx(0.5));

  InstructionSpec clarified = straightforward(BehaviorMode::PlaceLeft);
  clarified.clarified = true;
  const IntentHypotheses point = hypothesize_intents(clarified);
  CHECK(point.intents == std::vector<BehaviorMode>{BehaviorMode::PlaceLeft});
  CHECK(point.prior[0] == doctest::Approx(1.0));

  const IntentHypotheses right = hypothesize_intents(straightforward(BehaviorMode::PlaceRight));
  CHECK(right.intents == std::vector<BehaviorMode>{BehaviorMode::PlaceRight});
}

TEST_CASE("conditional likelihood: indicator, incapability and smoothing") {
  std::vector<NarrationLabel> labels = {NarrationLabel::PlaceLeft, NarrationLabel::PlaceRight};
  const OptionSet both = group_narrations(labels);

  ProbVector p = conditional_option_likelihood(both, BehaviorMode::PlaceLeft, 0.0);
  CHECK(p[0] == doctest::Approx(1.0));
  CHECK(p[1] == doctest::Approx(0.0));
  CHECK(p[2] == doctest::Approx(0.0));

  const OptionSet right_only = group_narrations(repeat(NarrationLabel::PlaceRight, 3));
  p = conditional_option_likelihood(right_only, BehaviorMode::PlaceLeft, 0.0);
  CHECK(p[0] == doctest::Approx(0.0));
  CHECK(p[right_only.none_index()] == doctest::Approx(1.0));

  p = conditional_option_likelihood(both, BehaviorMode::PlaceLeft, 0.06);
  CHECK(p[0] == doctest::Approx(0.96).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(0.02).epsilon(1e-12));
  CHECK(p[2] == doctest::Approx(0.02).epsilon(1e-12));
}

TEST_CASE("bayesian scores split mass between the option and none when biased") {
  // Every sample goes right, yet the user might be a left-intender: the
  // marginal puts half the mass on "none".
  const OptionSet options = group_narrations(repeat(NarrationLabel::PlaceRight, 10));
  const ProbVector probs = bayesian_intent_scores(options, ambiguous_instruction(), 0.0);
  CHECK(probs[0] == doctest::Approx(0.5));
  CHECK(probs[options.none_index()] == doctest::Approx(0.5));
}

TEST_CASE("bayesian scores: symmetry and degenerate mixtures") {
  const OptionSet both = left_right_options();
  ProbVector probs = bayesian_intent_scores(both, ambiguous_instruction(), 0.0);
  CHECK(probs[0] == doctest::Approx(0.5));
  CHECK(probs[1] == doctest::Approx(0.5));
  CHECK(probs[2] == doctest::Approx(0.0));

  probs = bayesian_intent_scores(both, straightforward(BehaviorMode::PlaceLeft), 0.0);
  CHECK(probs[0] == doctest::Approx(1.0));
  CHECK(probs[1] == doctest::Approx(0.0));
}

TEST_CASE("bayesian with one intent equals the conditional exactly") {
  const OptionSet options = left_right_options();
  for (double delta : {0.0, 0.05, 0.2}) {
    const ProbVector mixture =
        bayesian_intent_scores(options, straightforward(BehaviorMode::PlaceRight), delta);
    const ProbVector conditional =
        conditional_option_likelihood(options, BehaviorMode::PlaceRight, delta);
    for (int i = 0; i < mixture.size(); ++i) CHECK(mixture[i] == conditional[i]);
  }
}

TEST_CASE("bayesian mixture is elementwise linear in the prior") {
  const OptionSet options = left_right_options();
  auto rng = make_rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const double w = u(rng);
    const double delta = 0.2 * u(rng);
    InstructionSpec instruction = ambiguous_instruction();
    instruction.intent_prior = (VecX(2) << w, 1.0 - w).finished();
    const ProbVector mixture = bayesian_intent_scores(options, instruction, delta);
    const ProbVector left =
        conditional_option_likelihood(options, BehaviorMode::PlaceLeft, delta);
    const ProbVector right =
        conditional_option_likelihood(options, BehaviorMode::PlaceRight, delta);
    for (int i = 0; i < mixture.size(); ++i)
      CHECK(mixture[i] == doctest::Approx(w * left[i] + (1.0 - w) * right[i]).epsilon(1e-12));
  }
}

TEST_CASE("every emitted probability vector is normalized") {
  auto rng = make_rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const NarrationLabel pool[] = {NarrationLabel::PlaceLeft, NarrationLabel::PlaceRight,
                                 NarrationLabel::Drop, NarrationLabel::GraspSuccess,
                                 NarrationLabel::GraspMiss};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<NarrationLabel> labels;
    std::uniform_int_distribution<int> pick(0, 4);
    const int k = 1 + static_cast<int>(u(rng) * 10);
    for (int i = 0; i < k; ++i) labels.push_back(pool[pick(rng)]);
    const OptionSet options = group_narrations(labels);
    const InstructionSpec instruction =
        u(rng) < 0.5 ? ambiguous_instruction() : straightforward(BehaviorMode::PlaceRight);

    const MiscalibrationProfile profile{0.1 + u(rng), u(rng), 0.3 * u(rng)};
    const ProbVector vanilla = vanilla_scores(options, instruction, profile, rng);
    CHECK(vanilla.sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(vanilla.minCoeff() >= 0.0);

    const ProbVector bayes = bayesian_intent_scores(options, instruction, 0.2 * u(rng));
    CHECK(bayes.sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(bayes.minCoeff() >= 0.0);
  }
}

TEST_CASE("grasp narrations align with any placing intent") {
  const OptionSet options = group_narrations(
      {NarrationLabel::GraspSuccess, NarrationLabel::GraspSuccess, NarrationLabel::GraspMiss});
  const ProbVector probs = bayesian_intent_scores(options, ambiguous_instruction(), 0.0);
  CHECK(probs[0] == doctest::Approx(1.0));  // GraspSuccess realizes both intents
  CHECK(probs[1] == doctest::Approx(0.0));
}
