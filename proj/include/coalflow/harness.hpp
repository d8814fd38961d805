#pragma once

#include "coalflow/metrics.hpp"
#include "coalflow/reference_flows.hpp"

#include "json.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace coalflow {

/// Parameters of one named experiment.  Empty containers / zero scalars mean
/// "use the experiment's canonical defaults" (the acceptance-scale values
/// reported by experiment_defaults).
struct ExperimentConfig {
    std::string experiment;
    std::string kernel_id;            // "gaussian" | "indicator" | "mollified"
    double epsilon = 0.0;             // bump width for mollified kernels
    std::vector<long long> n_values;  // step counts; meaning documented per experiment
    std::vector<double> starts;       // tracked starts (gap list for lemma1_equiv)
    long long replicas = 0;
    std::uint64_t seed = 42;
    std::string out_dir;              // empty: no files written
    int jobs = 0;                     // replica workers; 0 = one per execution unit
};

/// One checked (or informational) statistic of an experiment run.  `claim`
/// states the mathematical property the value is tested against; `threshold`
/// is NaN for purely informational values (then pass is always true).
struct StatisticResult {
    std::string name;
    double value = 0.0;
    double threshold = 0.0;
    bool pass = true;
    std::string claim;
};

struct ExperimentReport {
    ExperimentConfig config;  // resolved: every default filled in
    std::vector<StatisticResult> statistics;
    bool pass = true;
    // measured but never serialized: reports must be bit-identical across
    // reruns and worker counts
    double wall_clock_seconds = 0.0;

    /// Canonical JSON (fixed key order, no volatile fields: out_dir, jobs and
    /// wall clock are execution details, not statistical configuration).
    nlohmann::ordered_json to_json() const;
};

const std::vector<std::string>& experiment_ids();

/// Canonical parameters for a named experiment (throws ConfigInvalid for
/// unknown ids).
ExperimentConfig experiment_defaults(const std::string& id);

/// Parse and strictly validate a config document:
///   {"schema_version": 1, "experiment": "...", "kernel": "...", "epsilon": x,
///    "n": [...], "starts": [...], "replicas": k, "seed": s, "out_dir": "...",
///    "jobs": j}
/// Only "experiment" is required; unknown keys are rejected.
ExperimentConfig config_from_json(const std::string& text);

/// Runs body(0..replicas-1) with `jobs` workers (0 = hardware concurrency)
/// into a replica-indexed slot table.  The slot order makes every downstream
/// reduction independent of the worker count.  Exceptions are rethrown with
/// the replica index (and `context`) appended to the message.
std::vector<std::vector<double>> map_replicas(
    long long replicas, int jobs, const std::function<std::vector<double>(long long)>& body,
    const std::string& context = "");

/// Compensated (Kahan) sum in slot order: one fixed reduction order for the
/// determinism contract.
double kahan_sum(const std::vector<double>& values);

/// Executes the named experiment: replicas over per-replica RngStreams,
/// deterministic reduction, optional report.json / samples.csv / *.dat output
/// under config.out_dir.  Identical (config, seed) give byte-identical files
/// for any jobs value.
ExperimentReport run_experiment(const ExperimentConfig& config);

} // namespace coalflow
