#include "calsteer/sim.hpp"

#include <algorithm>
#include <cmath>

#include "calsteer/rng.hpp"

namespace calsteer {

namespace {

double clamp_abs(double v, double bound) { return std::clamp(v, -bound, bound); }

Vec2 clamp_action(const Vec2& delta) {
  return Vec2(clamp_abs(delta.x(), kActionBound), clamp_abs(delta.y(), kActionBound));
}

Vec2 clip_world(const Vec2& p) {
  return Vec2(clamp_abs(p.x(), kWorldHalfWidth), clamp_abs(p.y(), kWorldHalfWidth));
}

BehaviorMode draw_mode(const Vec3& weights, std::mt19937_64& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  for (int i = 0; i < 3; ++i) {
    acc += weights[i];
    if (u <= acc) return static_cast<BehaviorMode>(i);
  }
  return BehaviorMode::Fail;
}

// Uniform point in the world box, rejected while inside either bin region.
Vec2 draw_far_point(const SimState& state, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-kWorldHalfWidth, kWorldHalfWidth);
  for (;;) {
    const Vec2 p(u(rng), u(rng));
    if ((p - state.bin_left).norm() > kBinRadius && (p - state.bin_right).norm() > kBinRadius)
      return p;
  }
}

enum class GripPolicy { CloseAlways, HoldAlways, OpenNearTarget };

struct RolloutGoal {
  Vec2 target;
  GripPolicy grip;
};

// Goal resolution for one chunk. Fail-mode targets are drawn from rng.
RolloutGoal resolve_goal(const SimState& state, BehaviorMode mode, std::mt19937_64& rng) {
  if (state.phase == Phase::Grasp) {
    if (mode == BehaviorMode::Fail) return {draw_far_point(state, rng), GripPolicy::HoldAlways};
    return {state.object_pos, GripPolicy::CloseAlways};
  }
  if (mode == BehaviorMode::Fail) return {draw_far_point(state, rng), GripPolicy::OpenNearTarget};
  return {state.bin(mode), GripPolicy::OpenNearTarget};
}

// Chunk planner shared by the public sampler and the rollout loop. The noise
// perturbs the chunk's waypoint, so a sampled chunk is a clean line toward a
// jittered target; the grip schedule follows the same planned path and a
// place chunk releases where the plan believes it has arrived.
ActionChunk plan_chunk(const SimState& state, const PolicyParams& params, const RolloutGoal& goal,
                       std::mt19937_64& rng) {
  const int h = params.chunk_length;
  Vec2 waypoint = goal.target;
  if (params.waypoint_noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, params.waypoint_noise_sigma);
    waypoint.x() += noise(rng);
    waypoint.y() += noise(rng);
  }
  const Vec2 base = (waypoint - state.gripper_pos) / static_cast<double>(h);

  ActionChunk chunk;
  chunk.steps.resize(h);
  Vec2 planned = state.gripper_pos;
  for (int i = 0; i < h; ++i) {
    chunk.steps[i].delta = clamp_action(base);
    planned = clip_world(planned + clamp_action(base));
    switch (goal.grip) {
      case GripPolicy::CloseAlways: chunk.steps[i].grip = GripCommand::Close; break;
      case GripPolicy::HoldAlways: chunk.steps[i].grip = GripCommand::Hold; break;
      case GripPolicy::OpenNearTarget:
        chunk.steps[i].grip = (planned - waypoint).norm() <= kReleaseRadius
                                  ? GripCommand::Open
                                  : GripCommand::Hold;
        break;
    }
  }
  return chunk;
}

}  // namespace

void PolicyParams::validate() const {
  if ((mode_weights.array() < -1e-12).any()) throw ConfigError("policy: negative mode weight");
  if (std::abs(mode_weights.sum() - 1.0) > 1e-9)
    throw ConfigError("policy: mode weights must sum to 1");
  if (waypoint_noise_sigma < 0.0) throw ConfigError("policy: negative noise sigma");
  if (grasp_success_prob < 0.0 || grasp_success_prob > 1.0)
    throw ConfigError("policy: grasp_success_prob outside [0,1]");
  if (chunk_length <= 0 || horizon <= 0) throw ConfigError("policy: nonpositive horizon");
  if (horizon % chunk_length != 0) throw ConfigError("policy: horizon not a multiple of chunk length");
}

void MixConfig::validate() const {
  auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in01(fail_weight) || !in01(capable_offmode_weight) || !in01(incapable_fail_weight))
    throw ConfigError("mix: weight outside [0,1]");
  if (incapable_instructed_weight < 0.0 || incapable_instructed_weight > 0.02)
    throw ConfigError("mix: incapable instructed weight must lie in [0, 0.02]");
  if (ambiguous_balance_jitter < 0.0 ||
      ambiguous_balance_jitter > (1.0 - fail_weight) / 2.0)
    throw ConfigError("mix: ambiguous balance jitter out of range");
  if (fail_weight + capable_offmode_weight > 1.0) throw ConfigError("mix: capable weights exceed 1");
  if (incapable_instructed_weight + incapable_fail_weight > 1.0)
    throw ConfigError("mix: incapable weights exceed 1");
  if (incapable_intent == BehaviorMode::Fail) throw ConfigError("mix: incapable intent must be a place mode");
}

SimState step_dynamics(const SimState& state, const ActionStep& action) {
  SimState next = state;
  const Vec2 delta = clamp_action(action.delta);
  const Vec2 moved = clip_world(state.gripper_pos + delta);
  next.gripper_pos = moved;
  if (state.holding) next.object_pos = clip_world(state.object_pos + (moved - state.gripper_pos));
  if (action.grip == GripCommand::Close) {
    if ((next.gripper_pos - next.object_pos).norm() <= kGraspRadius) next.holding = true;
  } else if (action.grip == GripCommand::Open) {
    next.holding = false;
  }
  return next;
}

ActionChunk sample_action_chunk(const SimState& state, const PolicyParams& params,
                                BehaviorMode target_mode, std::mt19937_64& rng) {
  return plan_chunk(state, params, resolve_goal(state, target_mode, rng), rng);
}

TrajectorySample imagine_rollout(const SimState& state, const PolicyParams& params,
                                 std::mt19937_64& rng) {
  return imagine_rollout_modified(state, params, rng, nullptr);
}

TrajectorySample imagine_rollout_modified(const SimState& state, const PolicyParams& params,
                                          std::mt19937_64& rng, const StepModifier* modifier) {
  TrajectorySample traj;
  traj.phase = state.phase;
  traj.mode = draw_mode(params.mode_weights, rng);

  // A failed grasp behaves like a Fail-mode rollout for this phase.
  BehaviorMode effective = traj.mode;
  if (state.phase == Phase::Grasp && effective != BehaviorMode::Fail &&
      params.grasp_success_prob < 1.0) {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    if (u > params.grasp_success_prob) effective = BehaviorMode::Fail;
  }

  // The rollout commits to one goal; Fail endpoints are drawn once so the
  // noiseless trajectory terminates outside both bin regions.
  RolloutGoal goal = resolve_goal(state, effective, rng);

  traj.states.reserve(params.horizon + 1);
  traj.actions.reserve(params.horizon);
  traj.states.push_back(state);
  SimState cur = state;
  for (int c = 0; c < params.chunks_per_rollout(); ++c) {
    const ActionChunk chunk = plan_chunk(cur, params, goal, rng);
    for (const ActionStep& planned : chunk.steps) {
      const ActionStep applied = modifier ? (*modifier)(cur, planned) : planned;
      cur = step_dynamics(cur, applied);
      traj.actions.push_back(applied);
      traj.states.push_back(cur);
    }
  }
  traj.outcome_per_phase[static_cast<int>(Phase::Grasp)] = narrate_state(cur, Phase::Grasp);
  traj.outcome_per_phase[static_cast<int>(Phase::Place)] = narrate_state(cur, Phase::Place);
  return traj;
}

NarrationLabel narrate_state(const SimState& terminal, Phase phase) {
  if (phase == Phase::Grasp)
    return terminal.holding ? NarrationLabel::GraspSuccess : NarrationLabel::GraspMiss;
  if ((terminal.object_pos - terminal.bin_left).norm() <= kBinRadius)
    return NarrationLabel::PlaceLeft;
  if ((terminal.object_pos - terminal.bin_right).norm() <= kBinRadius)
    return NarrationLabel::PlaceRight;
  return NarrationLabel::Drop;
}

NarrationLabel narrate(const TrajectorySample& traj, Phase phase) {
  return narrate_state(traj.terminal(), phase);
}

Scenario generate_scenario(Category category, const MixConfig& mix,
                           const PolicyParams& base_params, std::mt19937_64& rng) {
  mix.validate();
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  Scenario scenario;
  scenario.category = category;
  scenario.policy_params = base_params;

  auto pick_side = [&]() {
    return u01(rng) < 0.5 ? BehaviorMode::PlaceLeft : BehaviorMode::PlaceRight;
  };
  auto weights_for = [](BehaviorMode left_like, double w_left, double w_right, double w_fail) {
    Vec3 w;
    w[static_cast<int>(BehaviorMode::PlaceLeft)] =
        left_like == BehaviorMode::PlaceLeft ? w_left : w_right;
    w[static_cast<int>(BehaviorMode::PlaceRight)] =
        left_like == BehaviorMode::PlaceLeft ? w_right : w_left;
    w[static_cast<int>(BehaviorMode::Fail)] = w_fail;
    return w;
  };

  switch (category) {
    case Category::Ambiguous: {
      scenario.instruction =
          make_instruction({BehaviorMode::PlaceLeft, BehaviorMode::PlaceRight});
      scenario.hidden_intent = pick_side();
      const double half = (1.0 - mix.fail_weight) / 2.0;
      const double jitter =
          std::uniform_real_distribution<double>(-mix.ambiguous_balance_jitter,
                                                 mix.ambiguous_balance_jitter)(rng);
      scenario.policy_params.mode_weights = weights_for(
          BehaviorMode::PlaceLeft, half + jitter, half - jitter, mix.fail_weight);
      break;
    }
    case Category::StraightforwardCapable: {
      const BehaviorMode instructed = pick_side();
      scenario.instruction = make_instruction({instructed});
      scenario.hidden_intent = instructed;
      scenario.policy_params.mode_weights = weights_for(
          instructed, 1.0 - mix.fail_weight - mix.capable_offmode_weight,
          mix.capable_offmode_weight, mix.fail_weight);
      break;
    }
    case Category::StraightforwardIncapable: {
      const BehaviorMode instructed = mix.incapable_intent;
      scenario.instruction = make_instruction({instructed});
      scenario.hidden_intent = instructed;
      scenario.policy_params.mode_weights = weights_for(
          instructed, mix.incapable_instructed_weight,
          1.0 - mix.incapable_instructed_weight - mix.incapable_fail_weight,
          mix.incapable_fail_weight);
      break;
    }
  }
  scenario.instruction.validate();
  scenario.policy_params.validate();

  SimState init;
  init.gripper_pos =
      Vec2(std::uniform_real_distribution<double>(-0.4, 0.4)(rng),
           std::uniform_real_distribution<double>(-0.2, 0.2)(rng));
  init.object_pos =
      Vec2(std::uniform_real_distribution<double>(-0.4, 0.4)(rng),
           std::uniform_real_distribution<double>(-1.1, -0.7)(rng));
  init.holding = false;
  init.phase = Phase::Grasp;
  scenario.initial_state = init;

  scenario.seed = rng();
  return scenario;
}

std::vector<TrajectorySample> sample_rollouts(const SimState& state, const PolicyParams& params,
                                              int k_samples, std::uint64_t seed) {
  std::vector<TrajectorySample> samples;
  samples.reserve(k_samples);
  for (int k = 0; k < k_samples; ++k) {
    auto rng = make_rng(derive_seed(seed, stream::kRollout, static_cast<std::uint64_t>(k)));
    samples.push_back(imagine_rollout(state, params, rng));
  }
  return samples;
}

PolicySampler base_policy_sampler() {
  return [](const SimState& state, const PolicyParams& params, int k, std::uint64_t seed) {
    return sample_rollouts(state, params, k, seed);
  };
}

const char* to_string(Phase p) { return p == Phase::Grasp ? "grasp" : "place"; }

const char* to_string(GripCommand g) {
  switch (g) {
    case GripCommand::Open: return "open";
    case GripCommand::Close: return "close";
    case GripCommand::Hold: return "hold";
  }
  return "?";
}

const char* to_string(BehaviorMode m) {
  switch (m) {
    case BehaviorMode::PlaceLeft: return "place_left";
    case BehaviorMode::PlaceRight: return "place_right";
    case BehaviorMode::Fail: return "fail";
  }
  return "?";
}

const char* to_string(NarrationLabel l) {
  switch (l) {
    case NarrationLabel::GraspSuccess: return "grasp_success";
    case NarrationLabel::GraspMiss: return "grasp_miss";
    case NarrationLabel::PlaceLeft: return "place_left";
    case NarrationLabel::PlaceRight: return "place_right";
    case NarrationLabel::Drop: return "drop";
  }
  return "?";
}

const char* to_string(Category c) {
  switch (c) {
    case Category::StraightforwardCapable: return "straightforward_capable";
    case Category::StraightforwardIncapable: return "straightforward_incapable";
    case Category::Ambiguous: return "ambiguous";
  }
  return "?";
}

}  // namespace calsteer
