#ifndef CALSTEER_SERIALIZE_HPP
#define CALSTEER_SERIALIZE_HPP

#include <map>
#include <string>
#include <vector>

#include "calsteer/harness.hpp"

// File formats: line-delimited JSON for record streams (scenarios, episodes,
// traces), plain JSON for thresholds, metrics and model parameters.

namespace calsteer {

// Record streams open with a {"config_hash": ...} header line; loaders verify
// it against the active configuration.
void save_scenarios_jsonl(const std::vector<Scenario>& scenarios, std::uint64_t config_hash,
                          const std::string& path);
std::vector<Scenario> load_scenarios_jsonl(const std::string& path, const RunConfig& config);

void save_thresholds_json(const std::map<MethodKey, Threshold>& thresholds,
                          std::uint64_t config_hash, const std::string& path);
std::map<MethodKey, Threshold> load_thresholds_json(const std::string& path,
                                                    std::uint64_t expected_hash);

// Versioned flat parameter list: {name, shape, values} per tensor.
void save_residual_model(const ResidualModel& model, const std::string& path);
ResidualModel load_residual_model(const std::string& path);

void save_episodes_jsonl(const std::vector<EpisodeLog>& episodes, std::uint64_t config_hash,
                         const std::string& path);

void save_traces_jsonl(const std::vector<InterventionTrace>& traces, std::uint64_t config_hash,
                       const std::string& path);
std::vector<InterventionTrace> load_traces_jsonl(const std::string& path);

void save_metrics_json(const MetricsReport& report, const std::string& path);
MetricsReport load_metrics_json(const std::string& path);

}  // namespace calsteer

#endif
