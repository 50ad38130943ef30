#include <doctest.h>

#include <cmath>

#include "calsteer/rng.hpp"
#include "calsteer/sim.hpp"

using namespace calsteer;

namespace {

bool states_identical(const SimState& a, const SimState& b) {
  return a.gripper_pos == b.gripper_pos && a.object_pos == b.object_pos &&
         a.holding == b.holding && a.phase == b.phase;
}

bool trajectories_identical(const TrajectorySample& a, const TrajectorySample& b) {
  if (a.mode != b.mode || a.phase != b.phase) return false;
  if (a.actions.size() != b.actions.size()) return false;
  for (std::size_t i = 0; i < a.actions.size(); ++i) {
    if (a.actions[i].delta != b.actions[i].delta || a.actions[i].grip != b.actions[i].grip)
      return false;
  }
  for (std::size_t i = 0; i < a.states.size(); ++i) {
    if (!states_identical(a.states[i], b.states[i])) return false;
  }
  return true;
}

PolicyParams noiseless(Vec3 weights) {
  PolicyParams params;
  params.mode_weights = weights;
  params.waypoint_noise_sigma = 0.0;
  return params;
}

SimState holding_state() {
  SimState state;
  state.gripper_pos = Vec2(0.0, 0.0);
  state.object_pos = Vec2(0.0, 0.0);
  state.holding = true;
  state.phase = Phase::Place;
  return state;
}

}  // namespace

TEST_CASE("step dynamics: translation, clipping, attachment") {
  SimState state;
  state.gripper_pos = Vec2(0.0, 0.0);
  state.object_pos = Vec2(1.5, 1.5);

  SimState next = step_dynamics(state, {Vec2(0.1, 0.0), GripCommand::Hold});
  CHECK(next.gripper_pos == Vec2(0.1, 0.0));
  CHECK(next.object_pos == state.object_pos);

  state.gripper_pos = Vec2(2.0, 0.0);
  next = step_dynamics(state, {Vec2(0.5, 0.0), GripCommand::Hold});
  CHECK(next.gripper_pos == Vec2(2.0, 0.0));

  SimState held = holding_state();
  next = step_dynamics(held, {Vec2(0.0, 0.2), GripCommand::Hold});
  CHECK(next.object_pos == Vec2(0.0, 0.2));
  CHECK(next.gripper_pos == Vec2(0.0, 0.2));
}

TEST_CASE("step dynamics: grasp latch and release") {
  SimState state;
  state.gripper_pos = Vec2(0.0, 0.0);
  state.object_pos = Vec2(0.1, 0.0);
  SimState next = step_dynamics(state, {Vec2(0.0, 0.0), GripCommand::Close});
  CHECK(next.holding);

  state.object_pos = Vec2(0.5, 0.0);  // out of reach
  next = step_dynamics(state, {Vec2(0.0, 0.0), GripCommand::Close});
  CHECK_FALSE(next.holding);

  next = step_dynamics(holding_state(), {Vec2(0.0, 0.0), GripCommand::Open});
  CHECK_FALSE(next.holding);

  // Oversized deltas are clamped, not rejected.
  next = step_dynamics(state, {Vec2(3.0, -3.0), GripCommand::Hold});
  CHECK(next.gripper_pos == Vec2(0.5, -0.5));
}

TEST_CASE("noiseless chunk subdivides the line to the goal") {
  SimState state = holding_state();
  auto rng = make_rng(1);
  const ActionChunk chunk =
      sample_action_chunk(state, noiseless({1.0, 0.0, 0.0}), BehaviorMode::PlaceLeft, rng);
  REQUIRE(chunk.steps.size() == 4);
  for (const auto& step : chunk.steps) {
    CHECK(step.delta.x() == doctest::Approx(-0.25));
    CHECK(step.delta.y() == doctest::Approx(0.25));
  }
  // The plan arrives exactly at the goal on the last step; release there.
  CHECK(chunk.steps.back().grip == GripCommand::Open);
  CHECK(chunk.steps.front().grip == GripCommand::Hold);
}

TEST_CASE("fail chunks are deterministic under a fixed seed") {
  SimState state = holding_state();
  const PolicyParams params = noiseless({0.0, 0.0, 1.0});
  auto rng_a = make_rng(99);
  auto rng_b = make_rng(99);
  const ActionChunk a = sample_action_chunk(state, params, BehaviorMode::Fail, rng_a);
  const ActionChunk b = sample_action_chunk(state, params, BehaviorMode::Fail, rng_b);
  REQUIRE(a.steps.size() == b.steps.size());
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    CHECK(a.steps[i].delta == b.steps[i].delta);
    CHECK(a.steps[i].grip == b.steps[i].grip);
  }
}

TEST_CASE("noisy chunks replay bit-for-bit with the same seed") {
  SimState state = holding_state();
  PolicyParams params = noiseless({1.0, 0.0, 0.0});
  params.waypoint_noise_sigma = 0.1;
  auto rng_a = make_rng(12345);
  auto rng_b = make_rng(12345);
  const ActionChunk a = sample_action_chunk(state, params, BehaviorMode::PlaceRight, rng_a);
  const ActionChunk b = sample_action_chunk(state, params, BehaviorMode::PlaceRight, rng_b);
  for (std::size_t i = 0; i < a.steps.size(); ++i) CHECK(a.steps[i].delta == b.steps[i].delta);
}

TEST_CASE("single-chunk rollout equals the chunk rolled through dynamics") {
  SimState state = holding_state();
  PolicyParams params = noiseless({1.0, 0.0, 0.0});
  params.horizon = params.chunk_length;  // degenerate interleave
  auto rng = make_rng(5);
  const TrajectorySample traj = imagine_rollout(state, params, rng);
  REQUIRE(traj.actions.size() == 4);

  // Noiseless PlaceLeft: both routes must produce the identical line.
  auto rng2 = make_rng(6);
  const ActionChunk chunk = sample_action_chunk(state, params, BehaviorMode::PlaceLeft, rng2);
  SimState cur = state;
  for (std::size_t i = 0; i < chunk.steps.size(); ++i) {
    cur = step_dynamics(cur, chunk.steps[i]);
    CHECK(traj.actions[i].delta == chunk.steps[i].delta);
    CHECK(states_identical(traj.states[i + 1], cur));
  }
}

TEST_CASE("noiseless place rollout reaches the bin") {
  SimState state = holding_state();
  PolicyParams params = noiseless({1.0, 0.0, 0.0});
  params.horizon = 2 * params.chunk_length;
  auto rng = make_rng(11);
  const TrajectorySample traj = imagine_rollout(state, params, rng);
  CHECK((traj.terminal().object_pos - state.bin_left).norm() <= 0.15);
  CHECK(narrate(traj, Phase::Place) == NarrationLabel::PlaceLeft);
}

TEST_CASE("noiseless fail rollout always drops") {
  SimState state = holding_state();
  const PolicyParams params = noiseless({0.0, 0.0, 1.0});
  for (int k = 0; k < 50; ++k) {
    auto rng = make_rng(derive_seed(400, k));
    const TrajectorySample traj = imagine_rollout(state, params, rng);
    CHECK(narrate(traj, Phase::Place) == NarrationLabel::Drop);
  }
}

TEST_CASE("noiseless grasp rollout succeeds; fail-mode grasp misses") {
  SimState state;
  state.gripper_pos = Vec2(0.2, 0.1);
  state.object_pos = Vec2(-0.1, -0.9);
  state.phase = Phase::Grasp;

  auto rng = make_rng(21);
  const TrajectorySample ok = imagine_rollout(state, noiseless({1.0, 0.0, 0.0}), rng);
  CHECK(narrate(ok, Phase::Grasp) == NarrationLabel::GraspSuccess);

  auto rng2 = make_rng(22);
  const TrajectorySample miss = imagine_rollout(state, noiseless({0.0, 0.0, 1.0}), rng2);
  CHECK(narrate(miss, Phase::Grasp) == NarrationLabel::GraspMiss);
}

TEST_CASE("grasp success probability gates the grasp") {
  SimState state;
  state.gripper_pos = Vec2(0.0, 0.0);
  state.object_pos = Vec2(0.0, -1.0);
  PolicyParams params = noiseless({1.0, 0.0, 0.0});
  params.grasp_success_prob = 0.0;
  auto rng = make_rng(23);
  const TrajectorySample traj = imagine_rollout(state, params, rng);
  CHECK(narrate(traj, Phase::Grasp) == NarrationLabel::GraspMiss);
}

TEST_CASE("parallel rollouts: left-mode counts behave binomially") {
  SimState state = holding_state();
  const PolicyParams params = noiseless({0.5, 0.5, 0.0});
  const int repeats = 1000;
  const int k_samples = 10;
  double total_left = 0.0;
  for (int r = 0; r < repeats; ++r) {
    const auto samples = sample_rollouts(state, params, k_samples, derive_seed(777, r));
    for (const auto& s : samples)
      total_left += narrate(s, Phase::Place) == NarrationLabel::PlaceLeft ? 1 : 0;
  }
  const double mean_left = total_left / repeats;
  CHECK(mean_left == doctest::Approx(5.0).epsilon(0.04));  // 5 +/- 0.2
}

TEST_CASE("mode frequencies match the weights over many rollouts") {
  SimState state = holding_state();
  PolicyParams params;
  params.mode_weights = Vec3(0.3, 0.6, 0.1);
  params.waypoint_noise_sigma = 0.0;
  const int n = 10000;
  int counts[3] = {0, 0, 0};
  for (int i = 0; i < n; ++i) {
    auto rng = make_rng(derive_seed(31337, i));
    counts[static_cast<int>(imagine_rollout(state, params, rng).mode)] += 1;
  }
  for (int m = 0; m < 3; ++m) {
    const double p = params.mode_weights[m];
    const double se = std::sqrt(p * (1.0 - p) / n);
    CHECK(std::abs(static_cast<double>(counts[m]) / n - p) <= 3.0 * se);
  }
}

TEST_CASE("narration is total and deterministic") {
  SimState state;
  state.holding = false;
  for (double x = -2.0; x <= 2.0; x += 0.37) {
    for (double y = -2.0; y <= 2.0; y += 0.41) {
      state.object_pos = Vec2(x, y);
      const NarrationLabel label = narrate_state(state, Phase::Place);
      const bool near_left = (state.object_pos - state.bin_left).norm() <= 0.2;
      const bool near_right = (state.object_pos - state.bin_right).norm() <= 0.2;
      if (near_left) CHECK(label == NarrationLabel::PlaceLeft);
      else if (near_right) CHECK(label == NarrationLabel::PlaceRight);
      else CHECK(label == NarrationLabel::Drop);
    }
  }
  state.object_pos = Vec2(-1.0, 1.05);
  CHECK(narrate_state(state, Phase::Place) == NarrationLabel::PlaceLeft);
  state.object_pos = Vec2(0.0, -1.0);
  CHECK(narrate_state(state, Phase::Place) == NarrationLabel::Drop);
  CHECK(narrate_state(state, Phase::Grasp) == NarrationLabel::GraspMiss);
}

TEST_CASE("identical scenario seeds give bitwise-identical rollouts") {
  PolicyParams params;
  params.waypoint_noise_sigma = 0.1;
  MixConfig mix;
  auto gen_rng = make_rng(5150);
  const Scenario scenario = generate_scenario(Category::Ambiguous, mix, params, gen_rng);

  const auto a =
      sample_rollouts(scenario.initial_state, scenario.policy_params, 10, scenario.seed);
  const auto b =
      sample_rollouts(scenario.initial_state, scenario.policy_params, 10, scenario.seed);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(trajectories_identical(a[i], b[i]));
}

TEST_CASE("replaying stored actions reproduces the state sequence exactly") {
  PolicyParams params;
  params.waypoint_noise_sigma = 0.1;
  SimState state;
  state.object_pos = Vec2(0.2, -0.9);
  for (int trial = 0; trial < 20; ++trial) {
    auto rng = make_rng(derive_seed(888, trial));
    const TrajectorySample traj = imagine_rollout(state, params, rng);
    SimState cur = traj.states.front();
    for (std::size_t i = 0; i < traj.actions.size(); ++i) {
      cur = step_dynamics(cur, traj.actions[i]);
      CHECK(states_identical(cur, traj.states[i + 1]));
    }
  }
}

TEST_CASE("scenario generation honors the category contracts") {
  PolicyParams params;
  MixConfig mix;

  auto rng = make_rng(2718);
  const Scenario ambiguous = generate_scenario(Category::Ambiguous, mix, params, rng);
  CHECK(ambiguous.instruction.intent_support.size() == 2);
  CHECK((ambiguous.hidden_intent == BehaviorMode::PlaceLeft ||
         ambiguous.hidden_intent == BehaviorMode::PlaceRight));

  const Scenario incapable =
      generate_scenario(Category::StraightforwardIncapable, mix, params, rng);
  CHECK(incapable.instruction.intent_support.size() == 1);
  CHECK(incapable.policy_params
            .mode_weights[static_cast<int>(incapable.instruction.intent_support[0])] <= 0.02);

  const Scenario capable = generate_scenario(Category::StraightforwardCapable, mix, params, rng);
  CHECK(capable.instruction.intent_support == std::vector<BehaviorMode>{capable.hidden_intent});
  CHECK(capable.policy_params.mode_weights.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("invalid mix configuration is rejected") {
  PolicyParams params;
  MixConfig mix;
  mix.incapable_instructed_weight = 0.1;  // above the 0.02 cap
  auto rng = make_rng(1);
  CHECK_THROWS_AS(generate_scenario(Category::StraightforwardIncapable, mix, params, rng),
                  ConfigError);

  MixConfig jitter;
  jitter.ambiguous_balance_jitter = 0.9;
  CHECK_THROWS_AS(generate_scenario(Category::Ambiguous, jitter, params, rng), ConfigError);
}

TEST_CASE("invalid policy parameters are rejected") {
  PolicyParams params;
  params.horizon = 10;  // not a multiple of the chunk length
  CHECK_THROWS_AS(params.validate(), ConfigError);

  params = PolicyParams{};
  params.mode_weights = Vec3(0.5, 0.4, 0.4);
  CHECK_THROWS_AS(params.validate(), ConfigError);

  params = PolicyParams{};
  params.waypoint_noise_sigma = -0.1;
  CHECK_THROWS_AS(params.validate(), ConfigError);

  params = PolicyParams{};
  params.grasp_success_prob = 1.5;
  CHECK_THROWS_AS(params.validate(), ConfigError);
}
