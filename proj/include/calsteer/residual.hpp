#ifndef CALSTEER_RESIDUAL_HPP
#define CALSTEER_RESIDUAL_HPP

#include <cstdint>
#include <optional>
#include <vector>

#include "calsteer/sim.hpp"
#include "calsteer/types.hpp"

// Continual learning from interventions: scripted-expert trace collection,
// a logistic gate plus a bounded delta-action corrector, and mixed sampling
// that keeps half of the rollouts on the frozen base policy.

namespace calsteer {

struct InterventionStep {
  SimState state;
  ActionStep base_action;
  ActionStep human_action;  // equals base + delta at gated steps, exactly
  Vec2 delta{0.0, 0.0};
  int gate_label = 0;  // 1 while the expert is in control
};

struct InterventionTrace {
  std::vector<InterventionStep> steps;
  int scenario_index = 0;
  Phase intervene_phase = Phase::Place;
  int human_steps() const {
    int n = 0;
    for (const auto& s : steps) n += s.gate_label;
    return n;
  }
};

struct ResidualHyperparams {
  double learning_rate = 1e-4;
  int batch_size = 64;
  int iterations = 5000;
  int hidden_units = 32;
  std::uint64_t seed = 0;

  void validate() const {
    if (learning_rate <= 0.0) throw ConfigError("residual: learning rate must be positive");
    if (batch_size <= 0 || iterations <= 0 || hidden_units <= 0)
      throw ConfigError("residual: nonpositive training size");
  }
};

// Gating classifier (logistic) and delta-action corrector (one hidden tanh
// layer, tanh output) over normalized (state, base action) features.
struct ResidualModel {
  VecX gate_weights;  // kFeatureDim
  double gate_bias = 0.0;
  MatX corrector_w1;  // hidden x kFeatureDim
  VecX corrector_b1;
  MatX corrector_w2;  // 2 x hidden
  VecX corrector_b2;
  double gate_threshold = 0.5;
  ResidualHyperparams hyperparams;
};

constexpr int kResidualFeatureDim = 8;

// Features normalized to [-1, 1]: gripper, object, holding, phase, base delta.
VecX residual_features(const SimState& state, const ActionStep& base_action);

double gate_probability(const ResidualModel& model, const VecX& features);

// Componentwise strictly inside (-1, 1) for any input.
Vec2 corrector_delta(const ResidualModel& model, const VecX& features);

// Analytic waypoint planner toward the intent's goal for the given phase.
ActionStep expert_action(const SimState& state, Phase phase, BehaviorMode intent);
bool phase_goal_reached(const SimState& state, Phase phase, BehaviorMode intent);

// Re-run the scenario with a randomly selected base sample per phase; the
// expert seizes control at the start of the first phase whose predicted
// outcome mismatches the hidden intent and keeps it until the phase goal.
// While the expert drives, the base policy keeps planning (undeployed) so
// per-step deltas are defined. Returns nullopt when the expert cannot reach
// a phase goal within the horizon (trace discarded with a warning).
std::optional<InterventionTrace> collect_intervention(const Scenario& scenario,
                                                      const PolicyParams& base_params,
                                                      int num_phases, std::uint64_t seed);

// Weighted-BCE gate on all steps, MSE corrector on gate-positive steps.
// Throws CalibrationError when no positive gate label exists.
ResidualModel train_residual(const std::vector<InterventionTrace>& traces,
                             const ResidualHyperparams& hyperparams);

// K/2 rollouts with gated corrections applied on top of the base chunks plus
// K/2 untouched base rollouts, in that order.
std::vector<TrajectorySample> mixed_sample(const SimState& state, const PolicyParams& params,
                                           const ResidualModel& model, int k_samples,
                                           std::uint64_t seed);

PolicySampler residual_policy_sampler(const ResidualModel& model);

// Across-sample spread of terminal gripper positions; the trigger statistic
// of the variance-gated intervention baseline.
double terminal_waypoint_variance(const std::vector<TrajectorySample>& samples);

}  // namespace calsteer

#endif
