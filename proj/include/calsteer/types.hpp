#ifndef CALSTEER_TYPES_HPP
#define CALSTEER_TYPES_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

// Common aliases and small domain types shared across the library.

namespace calsteer {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

// A probability distribution over verifier options; entries in [0,1], sum 1.
using ProbVector = Eigen::VectorXd;

enum class Phase { Grasp, Place };

enum class GripCommand { Open, Close, Hold };

enum class BehaviorMode { PlaceLeft, PlaceRight, Fail };

enum class NarrationLabel { GraspSuccess, GraspMiss, PlaceLeft, PlaceRight, Drop };

enum class Category { StraightforwardCapable, StraightforwardIncapable, Ambiguous };

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct CalibrationError : std::runtime_error {
  explicit CalibrationError(const std::string& what) : std::runtime_error(what) {}
};

// True when executing an action with outcome `label` accomplishes `intent`.
// A successful grasp is progress toward any placing intent; a drop or a
// missed grasp accomplishes none.
inline bool realizes(NarrationLabel label, BehaviorMode intent) {
  switch (label) {
    case NarrationLabel::GraspSuccess: return true;
    case NarrationLabel::GraspMiss: return false;
    case NarrationLabel::PlaceLeft: return intent == BehaviorMode::PlaceLeft;
    case NarrationLabel::PlaceRight: return intent == BehaviorMode::PlaceRight;
    case NarrationLabel::Drop: return false;
  }
  return false;
}

// User task instruction: the set of intents it admits and their prior.
struct InstructionSpec {
  std::vector<BehaviorMode> intent_support;
  VecX intent_prior;
  bool clarified = false;

  void validate() const {
    if (intent_support.empty()) throw ConfigError("instruction: empty intent support");
    if (intent_prior.size() != static_cast<Eigen::Index>(intent_support.size()))
      throw ConfigError("instruction: prior size mismatch");
    if (std::abs(intent_prior.sum() - 1.0) > 1e-9)
      throw ConfigError("instruction: prior must sum to 1");
    if (clarified && intent_support.size() != 1)
      throw ConfigError("instruction: clarified implies a single intent");
  }
};

inline InstructionSpec make_instruction(std::vector<BehaviorMode> support) {
  InstructionSpec spec;
  spec.intent_prior = VecX::Constant(static_cast<Eigen::Index>(support.size()),
                                     1.0 / static_cast<double>(support.size()));
  spec.intent_support = std::move(support);
  return spec;
}

const char* to_string(Phase p);
const char* to_string(GripCommand g);
const char* to_string(BehaviorMode m);
const char* to_string(NarrationLabel l);
const char* to_string(Category c);

}  // namespace calsteer

#endif
