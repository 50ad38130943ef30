#include "calsteer/residual.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "calsteer/rng.hpp"

namespace calsteer {

namespace {

constexpr double kDeltaBound = 1.0 - 1e-9;

double clamp_abs(double v, double bound) { return std::clamp(v, -bound, bound); }

Vec2 greedy_step(const Vec2& from, const Vec2& to) {
  return Vec2(clamp_abs(to.x() - from.x(), kActionBound),
              clamp_abs(to.y() - from.y(), kActionBound));
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Minimal Adam state for one parameter block.
struct AdamState {
  MatX m, v;
  explicit AdamState(Eigen::Index rows, Eigen::Index cols)
      : m(MatX::Zero(rows, cols)), v(MatX::Zero(rows, cols)) {}
  void update(MatX& param, const MatX& grad, double lr, int t) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    m = b1 * m + (1.0 - b1) * grad;
    v = b2 * v + (1.0 - b2) * grad.cwiseProduct(grad);
    const double correction = lr * std::sqrt(1.0 - std::pow(b2, t)) / (1.0 - std::pow(b1, t));
    param.array() -= correction * (m.array() / (v.array().sqrt() + eps));
  }
};

std::vector<int> shuffled_batch(int dataset_size, int batch_size, std::mt19937_64& rng) {
  std::vector<int> batch(batch_size);
  std::uniform_int_distribution<int> pick(0, dataset_size - 1);
  for (int& idx : batch) idx = pick(rng);
  return batch;
}

}  // namespace

VecX residual_features(const SimState& state, const ActionStep& base_action) {
  VecX f(kResidualFeatureDim);
  f[0] = state.gripper_pos.x() / kWorldHalfWidth;
  f[1] = state.gripper_pos.y() / kWorldHalfWidth;
  f[2] = state.object_pos.x() / kWorldHalfWidth;
  f[3] = state.object_pos.y() / kWorldHalfWidth;
  f[4] = state.holding ? 1.0 : -1.0;
  f[5] = state.phase == Phase::Place ? 1.0 : -1.0;
  f[6] = base_action.delta.x() / kActionBound;
  f[7] = base_action.delta.y() / kActionBound;
  return f;
}

double gate_probability(const ResidualModel& model, const VecX& features) {
  return sigmoid(model.gate_weights.dot(features) + model.gate_bias);
}

Vec2 corrector_delta(const ResidualModel& model, const VecX& features) {
  const VecX hidden = (model.corrector_w1 * features + model.corrector_b1).array().tanh();
  const VecX out = (model.corrector_w2 * hidden + model.corrector_b2).array().tanh();
  return Vec2(clamp_abs(out[0], kDeltaBound), clamp_abs(out[1], kDeltaBound));
}

ActionStep expert_action(const SimState& state, Phase phase, BehaviorMode intent) {
  ActionStep step;
  if (phase == Phase::Grasp) {
    step.delta = greedy_step(state.gripper_pos, state.object_pos);
    step.grip = GripCommand::Close;
  } else {
    const Vec2& bin = state.bin(intent);
    step.delta = greedy_step(state.gripper_pos, bin);
    step.grip = (state.gripper_pos + step.delta - bin).norm() <= kReleaseRadius
                    ? GripCommand::Open
                    : GripCommand::Hold;
  }
  return step;
}

bool phase_goal_reached(const SimState& state, Phase phase, BehaviorMode intent) {
  if (phase == Phase::Grasp) return state.holding;
  return (state.object_pos - state.bin(intent)).norm() <= kBinRadius && !state.holding;
}

std::optional<InterventionTrace> collect_intervention(const Scenario& scenario,
                                                      const PolicyParams& base_params,
                                                      int num_phases, std::uint64_t seed) {
  InterventionTrace trace;
  trace.scenario_index = scenario.index;

  SimState state = scenario.initial_state;
  bool expert_used = false;
  for (int phase_idx = 0; phase_idx < num_phases; ++phase_idx) {
    const std::uint64_t phase_seed =
        derive_seed(seed, stream::kIntervene, static_cast<std::uint64_t>(phase_idx));
    auto rollout_rng = make_rng(derive_seed(phase_seed, 0));
    const TrajectorySample sample = imagine_rollout(state, base_params, rollout_rng);

    if (realizes(narrate(sample, state.phase), scenario.hidden_intent)) {
      // Base trajectory is on track for this phase: deploy it untouched.
      for (std::size_t i = 0; i < sample.actions.size(); ++i) {
        InterventionStep rec;
        rec.state = sample.states[i];
        rec.base_action = sample.actions[i];
        rec.human_action = sample.actions[i];
        rec.delta = Vec2(0.0, 0.0);
        rec.gate_label = 0;
        trace.steps.push_back(rec);
      }
      state = sample.terminal();
    } else {
      // Expert takes over from the first step of the mismatching phase; the
      // base policy keeps planning chunks from the live state, undeployed.
      if (!expert_used) {
        trace.intervene_phase = state.phase;
        expert_used = true;
      }
      auto base_rng = make_rng(derive_seed(phase_seed, 1));
      ActionChunk base_chunk;
      BehaviorMode chunk_mode = BehaviorMode::Fail;
      int step_in_chunk = 0;
      bool reached = false;
      for (int t = 0; t < base_params.horizon; ++t) {
        if (step_in_chunk == 0) {
          chunk_mode = [&] {
            const double u = std::uniform_real_distribution<double>(0.0, 1.0)(base_rng);
            double acc = 0.0;
            for (int m = 0; m < 3; ++m) {
              acc += base_params.mode_weights[m];
              if (u <= acc) return static_cast<BehaviorMode>(m);
            }
            return BehaviorMode::Fail;
          }();
          base_chunk = sample_action_chunk(state, base_params, chunk_mode, base_rng);
        }
        InterventionStep rec;
        rec.state = state;
        rec.base_action = base_chunk.steps[step_in_chunk];
        const ActionStep expert = expert_action(state, state.phase, scenario.hidden_intent);
        rec.delta = expert.delta - rec.base_action.delta;
        rec.human_action.delta = rec.base_action.delta + rec.delta;  // exact delta identity
        rec.human_action.grip = expert.grip;
        rec.gate_label = 1;
        trace.steps.push_back(rec);

        state = step_dynamics(state, rec.human_action);
        step_in_chunk = (step_in_chunk + 1) % base_params.chunk_length;
        if (phase_goal_reached(state, state.phase, scenario.hidden_intent)) {
          reached = true;
          break;
        }
      }
      if (!reached) {
        std::cerr << "warning: expert could not reach the " << to_string(state.phase)
                  << " goal within the horizon; trace discarded (scenario "
                  << scenario.index << ")\n";
        return std::nullopt;
      }
    }
    state.phase = Phase::Place;
  }
  return trace;
}

ResidualModel train_residual(const std::vector<InterventionTrace>& traces,
                             const ResidualHyperparams& hyperparams) {
  hyperparams.validate();

  std::vector<VecX> features;
  std::vector<int> gate_labels;
  std::vector<Vec2> deltas;
  for (const auto& trace : traces) {
    for (const auto& step : trace.steps) {
      features.push_back(residual_features(step.state, step.base_action));
      gate_labels.push_back(step.gate_label);
      deltas.push_back(step.delta);
    }
  }
  if (features.empty()) throw CalibrationError("train_residual: no trace data");
  const int n = static_cast<int>(features.size());
  const int n_pos = std::accumulate(gate_labels.begin(), gate_labels.end(), 0);
  if (n_pos == 0) throw CalibrationError("no intervention signal: all gate labels are zero");

  ResidualModel model;
  model.hyperparams = hyperparams;
  auto rng = make_rng(derive_seed(hyperparams.seed, stream::kTraining));
  std::normal_distribution<double> init(0.0, 1.0);
  const int hidden = hyperparams.hidden_units;

  // Gate: logistic regression with positive-class weighting.
  {
    const double pos_weight =
        n_pos < n ? static_cast<double>(n - n_pos) / static_cast<double>(n_pos) : 1.0;
    MatX w = MatX::Zero(kResidualFeatureDim, 1);
    MatX b = MatX::Zero(1, 1);
    AdamState w_state(kResidualFeatureDim, 1), b_state(1, 1);
    for (int it = 1; it <= hyperparams.iterations; ++it) {
      const auto batch = shuffled_batch(n, hyperparams.batch_size, rng);
      MatX grad_w = MatX::Zero(kResidualFeatureDim, 1);
      MatX grad_b = MatX::Zero(1, 1);
      for (int idx : batch) {
        const double p = sigmoid((w.col(0).dot(features[idx])) + b(0, 0));
        const double weight = gate_labels[idx] == 1 ? pos_weight : 1.0;
        const double err = weight * (p - static_cast<double>(gate_labels[idx]));
        grad_w.col(0) += err * features[idx];
        grad_b(0, 0) += err;
      }
      grad_w /= static_cast<double>(batch.size());
      grad_b /= static_cast<double>(batch.size());
      w_state.update(w, grad_w, hyperparams.learning_rate, it);
      b_state.update(b, grad_b, hyperparams.learning_rate, it);
    }
    model.gate_weights = w.col(0);
    model.gate_bias = b(0, 0);
  }

  // Corrector: one hidden tanh layer, tanh output, MSE on gated steps only.
  {
    std::vector<int> positives;
    for (int i = 0; i < n; ++i) {
      if (gate_labels[i] == 1) positives.push_back(i);
    }
    const double scale1 = 1.0 / std::sqrt(static_cast<double>(kResidualFeatureDim));
    const double scale2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    MatX w1(hidden, kResidualFeatureDim), w2(2, hidden);
    for (int r = 0; r < w1.rows(); ++r)
      for (int c = 0; c < w1.cols(); ++c) w1(r, c) = scale1 * init(rng);
    for (int r = 0; r < w2.rows(); ++r)
      for (int c = 0; c < w2.cols(); ++c) w2(r, c) = scale2 * init(rng);
    MatX b1 = MatX::Zero(hidden, 1), b2 = MatX::Zero(2, 1);
    AdamState w1_state(hidden, kResidualFeatureDim), b1_state(hidden, 1);
    AdamState w2_state(2, hidden), b2_state(2, 1);

    const int n_pos_steps = static_cast<int>(positives.size());
    for (int it = 1; it <= hyperparams.iterations; ++it) {
      const auto pick = shuffled_batch(n_pos_steps, hyperparams.batch_size, rng);
      MatX g_w1 = MatX::Zero(hidden, kResidualFeatureDim), g_b1 = MatX::Zero(hidden, 1);
      MatX g_w2 = MatX::Zero(2, hidden), g_b2 = MatX::Zero(2, 1);
      for (int j : pick) {
        const int idx = positives[j];
        const VecX& x = features[idx];
        const VecX h = (w1 * x + b1.col(0)).array().tanh();
        const VecX z = w2 * h + b2.col(0);
        const VecX y = z.array().tanh();
        const Vec2 target = deltas[idx];
        // d(MSE)/dz through the output tanh.
        VecX dz(2);
        for (int d = 0; d < 2; ++d)
          dz[d] = 2.0 * (y[d] - target[d]) * (1.0 - y[d] * y[d]);
        g_w2 += dz * h.transpose();
        g_b2.col(0) += dz;
        VecX dh = (w2.transpose() * dz).array() * (1.0 - h.array().square());
        g_w1 += dh * x.transpose();
        g_b1.col(0) += dh;
      }
      const double inv = 1.0 / static_cast<double>(pick.size());
      g_w1 *= inv; g_b1 *= inv; g_w2 *= inv; g_b2 *= inv;
      w1_state.update(w1, g_w1, hyperparams.learning_rate, it);
      b1_state.update(b1, g_b1, hyperparams.learning_rate, it);
      w2_state.update(w2, g_w2, hyperparams.learning_rate, it);
      b2_state.update(b2, g_b2, hyperparams.learning_rate, it);
    }
    model.corrector_w1 = w1;
    model.corrector_b1 = b1.col(0);
    model.corrector_w2 = w2;
    model.corrector_b2 = b2.col(0);
  }
  return model;
}

std::vector<TrajectorySample> mixed_sample(const SimState& state, const PolicyParams& params,
                                           const ResidualModel& model, int k_samples,
                                           std::uint64_t seed) {
  if (k_samples % 2 != 0) throw ConfigError("mixed_sample: K must be even");
  const StepModifier corrected = [&model](const SimState& s, const ActionStep& base) {
    const VecX f = residual_features(s, base);
    if (gate_probability(model, f) <= model.gate_threshold) return base;
    const Vec2 delta = corrector_delta(model, f);
    ActionStep out = base;
    out.delta = Vec2(clamp_abs(base.delta.x() + delta.x(), kActionBound),
                     clamp_abs(base.delta.y() + delta.y(), kActionBound));
    return out;
  };

  std::vector<TrajectorySample> samples;
  samples.reserve(k_samples);
  for (int k = 0; k < k_samples; ++k) {
    auto rng = make_rng(derive_seed(seed, stream::kRollout, static_cast<std::uint64_t>(k)));
    const bool combined = k < k_samples / 2;
    samples.push_back(
        imagine_rollout_modified(state, params, rng, combined ? &corrected : nullptr));
  }
  return samples;
}

PolicySampler residual_policy_sampler(const ResidualModel& model) {
  return [model](const SimState& state, const PolicyParams& params, int k, std::uint64_t seed) {
    return mixed_sample(state, params, model, k, seed);
  };
}

double terminal_waypoint_variance(const std::vector<TrajectorySample>& samples) {
  if (samples.empty()) return 0.0;
  Vec2 mean(0.0, 0.0);
  for (const auto& s : samples) mean += s.terminal().gripper_pos;
  mean /= static_cast<double>(samples.size());
  double var = 0.0;
  for (const auto& s : samples) var += (s.terminal().gripper_pos - mean).squaredNorm();
  return var / static_cast<double>(samples.size());
}

}  // namespace calsteer
