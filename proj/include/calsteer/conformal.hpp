#ifndef CALSTEER_CONFORMAL_HPP
#define CALSTEER_CONFORMAL_HPP

#include <vector>

#include "calsteer/types.hpp"

// Sequence-level split conformal calibration over verifier probabilities.
// A calibration point is a sequence of per-phase (probability vector,
// true-label set) pairs; its nonconformity score aggregates the worst phase
// so the guarantee survives temporal dependence between verifier calls.

namespace calsteer {

struct LabeledPhase {
  ProbVector probs;
  std::vector<int> true_labels;  // nonempty; may be exactly {none_index}
};

struct CalibSequence {
  std::vector<LabeledPhase> phases;
};

enum class ScoreFamily { MinMin, MinMax, APS };

struct Threshold {
  double q_hat = 1.0;
  int n = 0;
  double epsilon = 0.0;
  ScoreFamily family = ScoreFamily::MinMin;
};

struct PredictionSet {
  std::vector<int> members;  // ascending option indices

  bool contains(int option) const;
  int size() const { return static_cast<int>(members.size()); }
  bool empty() const { return members.empty(); }
};

// 1 minus the minimum, over phases, of the minimum true-label probability.
// Penalizes any missed true option, so the calibrated set tends to include
// all of them.
double nonconformity_min_min(const CalibSequence& seq);

// 1 minus the minimum, over phases, of the maximum true-label probability;
// only guarantees at least one true option is captured.
double nonconformity_min_max(const CalibSequence& seq);

// q_hat is the ceil((N+1)(1-epsilon))-th smallest calibration score. Throws
// CalibrationError when the index exceeds N (too little calibration data for
// the requested coverage).
Threshold calibrate_quantile(std::vector<double> scores, double epsilon, ScoreFamily family);

// C(x) = { y : 1 - p(y) <= q_hat }. The comparison is inclusive.
PredictionSet prediction_set_cp(const ProbVector& probs, const Threshold& thr);

// Greedy descending-probability prefix whose cumulative mass first reaches
// 1 - epsilon; ties broken toward the lower option index.
PredictionSet prediction_set_simple(const ProbVector& probs, double epsilon);

// Per phase, the descending cumulative mass needed to include every true
// label; the sequence score takes the worst phase.
double aps_nonconformity(const CalibSequence& seq);

// Descending-probability prefix with cumulative mass first at or above
// q_hat; requires an APS-family threshold.
PredictionSet prediction_set_aps(const ProbVector& probs, const Threshold& thr);

const char* to_string(ScoreFamily family);
ScoreFamily score_family_from_string(const std::string& name);

}  // namespace calsteer

#endif
