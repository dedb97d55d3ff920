#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvlab/attractor.hpp"

namespace mvlab::cli {

using json = nlohmann::ordered_json;

inline constexpr const char* kVersion = "1.0.0";
inline constexpr const char* kSummarySchema = "mvlab.summary/1";
inline constexpr const char* kManifestSchema = "mvlab.manifest/1";
inline constexpr std::uint64_t kDefaultSeed = 2024;

/// One checked property: measured values next to their reference values and tolerances.
struct Criterion {
    std::string name;
    attractor::Status status = attractor::Status::inconclusive;
    json measured = json::object();
    json reference = json::object();
    json tolerance = json::object();
};

/// A named output file (CSV or JSON text) written next to the summary.
struct Artifact {
    std::string name;
    std::string content;
};

struct Outcome {
    std::vector<Criterion> criteria;
    std::vector<Artifact> artifacts;

    /// fail if any criterion fails, else inconclusive if any is, else pass.
    attractor::Status status() const;
    const Criterion& criterion(const std::string& name) const;
};

/// Experiment names in subcommand order.
const std::vector<std::string>& experiment_names();

/// Full default configuration: seed, output_dir, threads and one block per module.
json default_config();

/// Defaults, then MVLAB_SEED, then the file, then --set overrides and the --seed flag.
/// Unknown keys, mistyped values and a file experiment differing from `experiment`
/// raise ConfigurationError carrying the dotted key.
json resolve_config(const std::string& experiment, const json& file, std::optional<std::uint64_t> seed_flag,
                    const std::vector<std::string>& assignments, const char* env_seed);

/// Runs one experiment on a resolved configuration. Throws ConfigurationError for
/// invalid module parameters and SimulationDiverged when a run blows up.
Outcome run_experiment(const std::string& experiment, const json& config);

/// Versioned summary document; `timestamp` is the only field that varies between identical runs.
json summary_json(const std::string& experiment, const json& config, const Outcome& outcome,
                  const std::string& timestamp);

/// Replaces non-finite numbers by null so the document stays valid JSON.
json sanitize(const json& j);

}  // namespace mvlab::cli
