#include "calsteer/serialize.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace calsteer {

namespace {

using nlohmann::json;

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read file: " + path);
  return in;
}

json vec2_to_json(const Vec2& v) { return json::array({v.x(), v.y()}); }
Vec2 vec2_from_json(const json& j) { return Vec2(j.at(0).get<double>(), j.at(1).get<double>()); }

json state_to_json(const SimState& s) {
  return json{{"gripper", vec2_to_json(s.gripper_pos)},
              {"object", vec2_to_json(s.object_pos)},
              {"holding", s.holding},
              {"phase", to_string(s.phase)},
              {"bin_left", vec2_to_json(s.bin_left)},
              {"bin_right", vec2_to_json(s.bin_right)}};
}

SimState state_from_json(const json& j) {
  SimState s;
  s.gripper_pos = vec2_from_json(j.at("gripper"));
  s.object_pos = vec2_from_json(j.at("object"));
  s.holding = j.at("holding").get<bool>();
  s.phase = j.at("phase").get<std::string>() == "place" ? Phase::Place : Phase::Grasp;
  s.bin_left = vec2_from_json(j.at("bin_left"));
  s.bin_right = vec2_from_json(j.at("bin_right"));
  return s;
}

BehaviorMode mode_from_name(const std::string& name) {
  if (name == "place_left") return BehaviorMode::PlaceLeft;
  if (name == "place_right") return BehaviorMode::PlaceRight;
  if (name == "fail") return BehaviorMode::Fail;
  throw ConfigError("unknown behavior mode in file: " + name);
}

json matrix_param(const std::string& name, const MatX& m) {
  std::vector<double> values(m.size());
  for (Eigen::Index r = 0, k = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) values[k++] = m(r, c);
  return json{{"name", name}, {"shape", {m.rows(), m.cols()}}, {"values", values}};
}

MatX matrix_from_param(const json& p) {
  const auto shape = p.at("shape");
  MatX m(shape.at(0).get<Eigen::Index>(), shape.at(1).get<Eigen::Index>());
  const auto& values = p.at("values");
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = values.at(k++).get<double>();
  return m;
}

}  // namespace

void save_scenarios_jsonl(const std::vector<Scenario>& scenarios, std::uint64_t config_hash,
                          const std::string& path) {
  auto out = open_out(path);
  out << json{{"config_hash", config_hash}}.dump() << "\n";
  for (const Scenario& s : scenarios) {
    json support = json::array();
    for (BehaviorMode m : s.instruction.intent_support) support.push_back(to_string(m));
    json prior = json::array();
    for (Eigen::Index i = 0; i < s.instruction.intent_prior.size(); ++i)
      prior.push_back(s.instruction.intent_prior[i]);
    const json record{
        {"index", s.index},
        {"category", to_string(s.category)},
        {"support", support},
        {"prior", prior},
        {"hidden_intent", to_string(s.hidden_intent)},
        {"seed", s.seed},
        {"mode_weights",
         {s.policy_params.mode_weights[0], s.policy_params.mode_weights[1],
          s.policy_params.mode_weights[2]}},
        {"initial_state", state_to_json(s.initial_state)},
    };
    out << record.dump() << "\n";
  }
}

std::vector<Scenario> load_scenarios_jsonl(const std::string& path, const RunConfig& config) {
  auto in = open_in(path);
  std::vector<Scenario> scenarios;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    if (!header_seen) {
      header_seen = true;
      if (j.contains("config_hash")) {
        if (j.at("config_hash").get<std::uint64_t>() != config_hash(config))
          throw ConfigError("scenario file " + path + " was generated under a different config");
        continue;
      }
    }
    Scenario s;
    s.index = j.at("index").get<int>();
    const std::string category = j.at("category").get<std::string>();
    if (category == "ambiguous") s.category = Category::Ambiguous;
    else if (category == "straightforward_capable") s.category = Category::StraightforwardCapable;
    else if (category == "straightforward_incapable")
      s.category = Category::StraightforwardIncapable;
    else throw ConfigError("unknown category in scenario file: " + category);
    for (const auto& m : j.at("support"))
      s.instruction.intent_support.push_back(mode_from_name(m.get<std::string>()));
    const auto& prior = j.at("prior");
    s.instruction.intent_prior.resize(static_cast<Eigen::Index>(prior.size()));
    for (Eigen::Index i = 0; i < s.instruction.intent_prior.size(); ++i)
      s.instruction.intent_prior[i] = prior.at(i).get<double>();
    s.instruction.clarified = false;
    s.instruction.validate();
    s.hidden_intent = mode_from_name(j.at("hidden_intent").get<std::string>());
    s.seed = j.at("seed").get<std::uint64_t>();
    s.policy_params = config.policy;
    const auto& w = j.at("mode_weights");
    s.policy_params.mode_weights =
        Vec3(w.at(0).get<double>(), w.at(1).get<double>(), w.at(2).get<double>());
    s.policy_params.validate();
    s.initial_state = state_from_json(j.at("initial_state"));
    scenarios.push_back(std::move(s));
  }
  return scenarios;
}

void save_thresholds_json(const std::map<MethodKey, Threshold>& thresholds,
                          std::uint64_t config_hash, const std::string& path) {
  json methods = json::object();
  for (const auto& [key, thr] : thresholds) {
    methods[to_string(key)] = json{{"q_hat", thr.q_hat},
                                   {"n", thr.n},
                                   {"epsilon", thr.epsilon},
                                   {"family", to_string(thr.family)}};
  }
  const json doc{{"config_hash", config_hash}, {"thresholds", methods}};
  open_out(path) << doc.dump(2) << "\n";
}

std::map<MethodKey, Threshold> load_thresholds_json(const std::string& path,
                                                    std::uint64_t expected_hash) {
  json doc;
  open_in(path) >> doc;
  if (doc.at("config_hash").get<std::uint64_t>() != expected_hash)
    throw ConfigError("threshold file " + path + " was calibrated under a different config");
  std::map<MethodKey, Threshold> thresholds;
  for (const auto& [name, j] : doc.at("thresholds").items()) {
    Threshold thr;
    thr.q_hat = j.at("q_hat").get<double>();
    thr.n = j.at("n").get<int>();
    thr.epsilon = j.at("epsilon").get<double>();
    thr.family = score_family_from_string(j.at("family").get<std::string>());
    thresholds[method_key_from_string(name)] = thr;
  }
  return thresholds;
}

void save_residual_model(const ResidualModel& model, const std::string& path) {
  json params = json::array();
  MatX gate = model.gate_weights;
  params.push_back(matrix_param("gate.weight", gate));
  params.push_back(matrix_param("gate.bias", MatX::Constant(1, 1, model.gate_bias)));
  params.push_back(matrix_param("corrector.w1", model.corrector_w1));
  params.push_back(matrix_param("corrector.b1", model.corrector_b1));
  params.push_back(matrix_param("corrector.w2", model.corrector_w2));
  params.push_back(matrix_param("corrector.b2", model.corrector_b2));
  const json doc{
      {"format_version", 1},
      {"gate_threshold", model.gate_threshold},
      {"hyperparams",
       {{"learning_rate", model.hyperparams.learning_rate},
        {"batch_size", model.hyperparams.batch_size},
        {"iterations", model.hyperparams.iterations},
        {"hidden_units", model.hyperparams.hidden_units},
        {"seed", model.hyperparams.seed}}},
      {"params", params},
  };
  open_out(path) << doc.dump(2) << "\n";
}

ResidualModel load_residual_model(const std::string& path) {
  json doc;
  open_in(path) >> doc;
  if (doc.at("format_version").get<int>() != 1)
    throw ConfigError("unsupported residual model format in " + path);
  ResidualModel model;
  model.gate_threshold = doc.at("gate_threshold").get<double>();
  const auto& h = doc.at("hyperparams");
  model.hyperparams.learning_rate = h.at("learning_rate").get<double>();
  model.hyperparams.batch_size = h.at("batch_size").get<int>();
  model.hyperparams.iterations = h.at("iterations").get<int>();
  model.hyperparams.hidden_units = h.at("hidden_units").get<int>();
  model.hyperparams.seed = h.at("seed").get<std::uint64_t>();
  for (const auto& p : doc.at("params")) {
    const std::string name = p.at("name").get<std::string>();
    const MatX m = matrix_from_param(p);
    if (name == "gate.weight") model.gate_weights = m.col(0);
    else if (name == "gate.bias") model.gate_bias = m(0, 0);
    else if (name == "corrector.w1") model.corrector_w1 = m;
    else if (name == "corrector.b1") model.corrector_b1 = m.col(0);
    else if (name == "corrector.w2") model.corrector_w2 = m;
    else if (name == "corrector.b2") model.corrector_b2 = m.col(0);
    else throw ConfigError("unknown parameter '" + name + "' in " + path);
  }
  return model;
}

void save_episodes_jsonl(const std::vector<EpisodeLog>& episodes, std::uint64_t config_hash,
                         const std::string& path) {
  auto out = open_out(path);
  out << json{{"config_hash", config_hash}}.dump() << "\n";
  for (const EpisodeLog& e : episodes) {
    json phases = json::array();
    for (const PhaseRecord& rec : e.phase_records) {
      json labels = json::array();
      for (NarrationLabel l : rec.group_labels) labels.push_back(to_string(l));
      json probs = json::array();
      for (Eigen::Index i = 0; i < rec.probs.size(); ++i) probs.push_back(rec.probs[i]);
      phases.push_back(json{{"phase", to_string(rec.phase)},
                            {"group_labels", labels},
                            {"probs", probs},
                            {"set", rec.set.members},
                            {"resolution", to_string(rec.resolution.kind)},
                            {"executed_option", rec.resolution.option},
                            {"clarifications", rec.clarifications},
                            {"any_sample_matched", rec.any_sample_matched}});
    }
    json record{{"scenario", e.scenario_index},
                {"category", to_string(e.category)},
                {"hidden_intent", to_string(e.hidden_intent)},
                {"phases", phases},
                {"confusion", to_string(e.outcome.confusion)},
                {"success", e.outcome.success},
                {"clarification_count", e.outcome.clarification_count},
                {"intervened", e.intervened},
                {"human_steps", e.human_steps},
                {"total_steps", e.total_steps},
                {"ambiguous_partial_presence", e.ambiguous_partial_presence}};
    if (e.outcome.executed_outcome.has_value())
      record["executed_outcome"] = to_string(*e.outcome.executed_outcome);
    out << record.dump() << "\n";
  }
}

void save_traces_jsonl(const std::vector<InterventionTrace>& traces, std::uint64_t config_hash,
                       const std::string& path) {
  auto out = open_out(path);
  out << json{{"config_hash", config_hash}}.dump() << "\n";
  for (const InterventionTrace& trace : traces) {
    json steps = json::array();
    for (const InterventionStep& s : trace.steps) {
      steps.push_back(json{{"state", state_to_json(s.state)},
                           {"base_delta", vec2_to_json(s.base_action.delta)},
                           {"base_grip", to_string(s.base_action.grip)},
                           {"human_delta", vec2_to_json(s.human_action.delta)},
                           {"human_grip", to_string(s.human_action.grip)},
                           {"delta", vec2_to_json(s.delta)},
                           {"gate", s.gate_label}});
    }
    out << json{{"scenario", trace.scenario_index},
                {"intervene_phase", to_string(trace.intervene_phase)},
                {"steps", steps}}
               .dump()
        << "\n";
  }
}

std::vector<InterventionTrace> load_traces_jsonl(const std::string& path) {
  auto in = open_in(path);
  std::vector<InterventionTrace> traces;
  std::string line;
  auto grip_from = [](const std::string& g) {
    if (g == "open") return GripCommand::Open;
    if (g == "close") return GripCommand::Close;
    return GripCommand::Hold;
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    if (j.contains("config_hash")) continue;  // header line
    InterventionTrace trace;
    trace.scenario_index = j.at("scenario").get<int>();
    trace.intervene_phase =
        j.at("intervene_phase").get<std::string>() == "place" ? Phase::Place : Phase::Grasp;
    for (const auto& sj : j.at("steps")) {
      InterventionStep s;
      s.state = state_from_json(sj.at("state"));
      s.base_action.delta = vec2_from_json(sj.at("base_delta"));
      s.base_action.grip = grip_from(sj.at("base_grip").get<std::string>());
      s.human_action.delta = vec2_from_json(sj.at("human_delta"));
      s.human_action.grip = grip_from(sj.at("human_grip").get<std::string>());
      s.delta = vec2_from_json(sj.at("delta"));
      s.gate_label = sj.at("gate").get<int>();
      trace.steps.push_back(s);
    }
    traces.push_back(std::move(trace));
  }
  return traces;
}

void save_metrics_json(const MetricsReport& report, const std::string& path) {
  json uq = json::array();
  for (const UqRecord& rec : report.uq) {
    uq.push_back(json{{"method", to_string(rec.method)},
                      {"category", to_string(rec.category)},
                      {"phase", rec.phase},
                      {"coverage", rec.coverage},
                      {"clarification_rate", rec.clarification_rate},
                      {"mean_set_size", rec.mean_set_size},
                      {"count", rec.count}});
  }
  json steering = json::array();
  for (const SteerRecord& rec : report.steering) {
    steering.push_back(json{{"method", rec.method},
                            {"category", to_string(rec.category)},
                            {"overall", rec.overall},
                            {"tp", rec.tp},
                            {"tn", rec.tn},
                            {"fp", rec.fp},
                            {"fn", rec.fn},
                            {"success_rate", rec.success_rate},
                            {"intervention_rate", rec.intervention_rate},
                            {"clarification_rate", rec.clarification_rate},
                            {"count", rec.count}});
  }
  const json doc{{"config_hash", report.config_hash},
                 {"seed", report.seed},
                 {"uq", uq},
                 {"steering", steering}};
  open_out(path) << doc.dump(2) << "\n";
}

MetricsReport load_metrics_json(const std::string& path) {
  json doc;
  open_in(path) >> doc;
  MetricsReport report;
  report.config_hash = doc.at("config_hash").get<std::uint64_t>();
  report.seed = doc.at("seed").get<std::uint64_t>();
  auto category_from = [](const std::string& c) {
    if (c == "ambiguous") return Category::Ambiguous;
    if (c == "straightforward_capable") return Category::StraightforwardCapable;
    return Category::StraightforwardIncapable;
  };
  for (const auto& j : doc.at("uq")) {
    UqRecord rec;
    rec.method = method_key_from_string(j.at("method").get<std::string>());
    rec.category = category_from(j.at("category").get<std::string>());
    rec.phase = j.at("phase").get<int>();
    rec.coverage = j.at("coverage").get<double>();
    rec.clarification_rate = j.at("clarification_rate").get<double>();
    rec.mean_set_size = j.at("mean_set_size").get<double>();
    rec.count = j.at("count").get<int>();
    report.uq.push_back(rec);
  }
  for (const auto& j : doc.at("steering")) {
    SteerRecord rec;
    rec.method = j.at("method").get<std::string>();
    rec.category = category_from(j.at("category").get<std::string>());
    rec.overall = j.at("overall").get<bool>();
    rec.tp = j.at("tp").get<int>();
    rec.tn = j.at("tn").get<int>();
    rec.fp = j.at("fp").get<int>();
    rec.fn = j.at("fn").get<int>();
    rec.success_rate = j.at("success_rate").get<double>();
    rec.intervention_rate = j.at("intervention_rate").get<double>();
    rec.clarification_rate = j.at("clarification_rate").get<double>();
    rec.count = j.at("count").get<int>();
    report.steering.push_back(rec);
  }
  return report;
}

}  // namespace calsteer
