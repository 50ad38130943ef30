#ifndef CALSTEER_SIM_HPP
#define CALSTEER_SIM_HPP

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "calsteer/types.hpp"

// Planar pick-and-place world. The dynamics are exact and double as the
// world model: imagined rollouts and executed rollouts follow the same
// step function, so imagination always matches execution.

namespace calsteer {

// World geometry. Positions live in [-kWorldHalfWidth, kWorldHalfWidth]^2.
constexpr double kWorldHalfWidth = 2.0;
constexpr double kActionBound = 0.5;   // per-component |delta| limit per step
constexpr double kGraspRadius = 0.15;  // grip Close latches within this range
constexpr double kBinRadius = 0.2;     // place narration region
constexpr double kReleaseRadius = 0.05;

struct SimState {
  Vec2 gripper_pos{0.0, 0.0};
  Vec2 object_pos{0.0, -1.0};
  bool holding = false;
  Phase phase = Phase::Grasp;
  Vec2 bin_left{-1.0, 1.0};
  Vec2 bin_right{1.0, 1.0};

  const Vec2& bin(BehaviorMode mode) const {
    return mode == BehaviorMode::PlaceRight ? bin_right : bin_left;
  }
};

struct ActionStep {
  Vec2 delta{0.0, 0.0};
  GripCommand grip = GripCommand::Hold;
};

struct ActionChunk {
  std::vector<ActionStep> steps;
};

struct PolicyParams {
  Vec3 mode_weights{0.45, 0.45, 0.1};  // PlaceLeft, PlaceRight, Fail
  double waypoint_noise_sigma = 0.06;
  double grasp_success_prob = 1.0;
  int chunk_length = 4;  // H
  int horizon = 16;      // T

  int chunks_per_rollout() const { return horizon / chunk_length; }
  void validate() const;
};

struct TrajectorySample {
  BehaviorMode mode = BehaviorMode::PlaceLeft;  // drawn behavior mode
  Phase phase = Phase::Grasp;                   // phase the rollout started in
  std::vector<ActionStep> actions;              // length T
  std::vector<SimState> states;                 // length T+1
  // Terminal outcome evaluated under each phase's narration rule.
  std::array<NarrationLabel, 2> outcome_per_phase{NarrationLabel::GraspMiss,
                                                  NarrationLabel::Drop};

  const SimState& terminal() const { return states.back(); }
  NarrationLabel outcome() const { return outcome_per_phase[static_cast<int>(phase)]; }
};

struct Scenario {
  InstructionSpec instruction;
  BehaviorMode hidden_intent = BehaviorMode::PlaceLeft;
  SimState initial_state;
  PolicyParams policy_params;
  std::uint64_t seed = 0;
  Category category = Category::StraightforwardCapable;
  int index = 0;  // position within its scenario set
};

// Mode-weight ranges and layout knobs used by generate_scenario.
struct MixConfig {
  double fail_weight = 0.1;                 // Fail-mode weight in capable scenarios
  double ambiguous_balance_jitter = 0.05;   // +/- shift between the two place modes
  double capable_offmode_weight = 0.05;     // non-instructed place mode, capable case
  double incapable_instructed_weight = 0.0; // must stay <= 0.02
  double incapable_fail_weight = 0.4;
  BehaviorMode incapable_intent = BehaviorMode::PlaceLeft;

  void validate() const;
};

// One gripper step: translate (clipped to the world box), carry the object
// while holding, then latch/release per the grip command.
SimState step_dynamics(const SimState& state, const ActionStep& action);

// Noisy straight-line chunk toward the target mode's goal: the waypoint is
// perturbed by Gaussian noise per component, the remaining distance is split
// equally over H steps, and each step is clamped to the action bound.
ActionChunk sample_action_chunk(const SimState& state, const PolicyParams& params,
                                BehaviorMode target_mode, std::mt19937_64& rng);

// Per-step hook applied to every planned action before it is imagined;
// used by the residual policy. Must not consume rollout randomness.
using StepModifier =
    std::function<ActionStep(const SimState& state, const ActionStep& base)>;

// Interleaved generation-imagination rollout: draw a behavior mode, then
// alternate chunk sampling and T/H blocks of dynamics, feeding the last
// imagined state back into the chunk sampler.
TrajectorySample imagine_rollout(const SimState& state, const PolicyParams& params,
                                 std::mt19937_64& rng);
TrajectorySample imagine_rollout_modified(const SimState& state, const PolicyParams& params,
                                          std::mt19937_64& rng, const StepModifier* modifier);

// Deterministic symbolic narration of a rollout's terminal state.
NarrationLabel narrate(const TrajectorySample& traj, Phase phase);
NarrationLabel narrate_state(const SimState& terminal, Phase phase);

// Seeded scenario constructor: builds the instruction for the category, draws
// the hidden intent from its support, fills mode weights from the mix ranges
// and randomizes the initial layout. The scenario's own seed is drawn last.
Scenario generate_scenario(Category category, const MixConfig& mix,
                           const PolicyParams& base_params, std::mt19937_64& rng);

// Draw K independent rollouts; sample k uses the stream (seed, k).
std::vector<TrajectorySample> sample_rollouts(const SimState& state, const PolicyParams& params,
                                              int k_samples, std::uint64_t seed);

using PolicySampler = std::function<std::vector<TrajectorySample>(
    const SimState& state, const PolicyParams& params, int k_samples, std::uint64_t seed)>;

PolicySampler base_policy_sampler();

}  // namespace calsteer

#endif
