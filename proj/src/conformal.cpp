#include "calsteer/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace calsteer {

namespace {

void check_sequence(const CalibSequence& seq) {
  if (seq.phases.empty()) throw ConfigError("calib sequence: no phases");
  for (const LabeledPhase& phase : seq.phases) {
    if (phase.true_labels.empty()) throw ConfigError("calib sequence: empty true-label set");
    for (int y : phase.true_labels) {
      if (y < 0 || y >= phase.probs.size())
        throw ConfigError("calib sequence: true label index out of range");
    }
  }
}

// Option order used by both APS routines: probability descending, index
// ascending on ties. Sharing the order and the accumulation loop keeps the
// calibration score and the deployed set bitwise consistent.
std::vector<int> descending_order(const ProbVector& probs) {
  std::vector<int> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return probs[a] > probs[b]; });
  return order;
}

}  // namespace

bool PredictionSet::contains(int option) const {
  return std::binary_search(members.begin(), members.end(), option);
}

double nonconformity_min_min(const CalibSequence& seq) {
  check_sequence(seq);
  double worst = -std::numeric_limits<double>::infinity();
  for (const LabeledPhase& phase : seq.phases) {
    for (int y : phase.true_labels) worst = std::max(worst, 1.0 - phase.probs[y]);
  }
  return worst;
}

double nonconformity_min_max(const CalibSequence& seq) {
  check_sequence(seq);
  double worst = -std::numeric_limits<double>::infinity();
  for (const LabeledPhase& phase : seq.phases) {
    double best = std::numeric_limits<double>::infinity();
    for (int y : phase.true_labels) best = std::min(best, 1.0 - phase.probs[y]);
    worst = std::max(worst, best);
  }
  return worst;
}

Threshold calibrate_quantile(std::vector<double> scores, double epsilon, ScoreFamily family) {
  const int n = static_cast<int>(scores.size());
  if (n < 1) throw CalibrationError("calibrate_quantile: no calibration scores");
  if (epsilon <= 0.0 || epsilon >= 1.0)
    throw ConfigError("calibrate_quantile: epsilon outside (0,1)");
  const int k = static_cast<int>(std::ceil((n + 1) * (1.0 - epsilon)));
  if (k > n)
    throw CalibrationError("insufficient calibration data: need ceil((N+1)(1-eps)) <= N, got N=" +
                           std::to_string(n));
  std::nth_element(scores.begin(), scores.begin() + (k - 1), scores.end());
  Threshold thr;
  thr.q_hat = scores[k - 1];
  thr.n = n;
  thr.epsilon = epsilon;
  thr.family = family;
  return thr;
}

PredictionSet prediction_set_cp(const ProbVector& probs, const Threshold& thr) {
  if (thr.family == ScoreFamily::APS)
    throw std::logic_error("prediction_set_cp: APS threshold passed to CP constructor");
  PredictionSet set;
  for (int y = 0; y < probs.size(); ++y) {
    if (1.0 - probs[y] <= thr.q_hat) set.members.push_back(y);
  }
  return set;
}

PredictionSet prediction_set_simple(const ProbVector& probs, double epsilon) {
  if (epsilon <= 0.0 || epsilon >= 1.0)
    throw ConfigError("prediction_set_simple: epsilon outside (0,1)");
  const double target = 1.0 - epsilon;
  PredictionSet set;
  double cumulative = 0.0;
  for (int y : descending_order(probs)) {
    cumulative += probs[y];
    set.members.push_back(y);
    if (cumulative >= target) break;
  }
  std::sort(set.members.begin(), set.members.end());
  return set;
}

double aps_nonconformity(const CalibSequence& seq) {
  check_sequence(seq);
  double worst = -std::numeric_limits<double>::infinity();
  for (const LabeledPhase& phase : seq.phases) {
    int remaining = static_cast<int>(phase.true_labels.size());
    double cumulative = 0.0;
    for (int y : descending_order(phase.probs)) {
      cumulative += phase.probs[y];
      if (std::find(phase.true_labels.begin(), phase.true_labels.end(), y) !=
          phase.true_labels.end()) {
        if (--remaining == 0) break;
      }
    }
    worst = std::max(worst, cumulative);
  }
  return worst;
}

PredictionSet prediction_set_aps(const ProbVector& probs, const Threshold& thr) {
  if (thr.family != ScoreFamily::APS)
    throw std::logic_error("prediction_set_aps: threshold was not APS-calibrated");
  PredictionSet set;
  double cumulative = 0.0;
  for (int y : descending_order(probs)) {
    cumulative += probs[y];
    set.members.push_back(y);
    if (cumulative >= thr.q_hat) break;
  }
  std::sort(set.members.begin(), set.members.end());
  return set;
}

const char* to_string(ScoreFamily family) {
  switch (family) {
    case ScoreFamily::MinMin: return "min_min";
    case ScoreFamily::MinMax: return "min_max";
    case ScoreFamily::APS: return "aps";
  }
  return "?";
}

ScoreFamily score_family_from_string(const std::string& name) {
  if (name == "min_min") return ScoreFamily::MinMin;
  if (name == "min_max") return ScoreFamily::MinMax;
  if (name == "aps") return ScoreFamily::APS;
  throw ConfigError("unknown score family: " + name);
}

}  // namespace calsteer
