#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ilsc/beamformer.hpp"
#include "ilsc/estimator.hpp"
#include "ilsc/locator.hpp"
#include "ilsc/metrics.hpp"
#include "ilsc/scenario.hpp"

namespace ilsc {

enum class EstimatorScheme { kAmpPolarFd, kOmpPolarFd, kOmpPolarFlat, kOmpDft };

std::string scheme_name(EstimatorScheme s);
EstimatorScheme scheme_from_name(const std::string& name);

struct ExperimentSpec {
    SystemConfig config;
    std::string sweep_variable = "none";  // p | scatterer_distance | snr | n_bs | p_t_dl | bandwidth | none
    std::vector<double> values = {0.0};
    int trials = 20;
    std::vector<EstimatorScheme> schemes = {EstimatorScheme::kAmpPolarFd};
    std::string out_dir = ".";
    std::uint64_t seed = 1;
    unsigned threads = 1;
    bool locate_enabled = true;
    bool beamform_enabled = true;
    bool hybrid_combiner = true;
};

ExperimentSpec load_experiment_spec(const std::string& path);
SystemConfig apply_sweep(const SystemConfig& base, const std::string& variable, double value);

struct TrialResult {
    bool ok = false;
    std::string error;
    double nmse_db = 0.0;
    // Localization (UT polar coordinates).
    bool located = false;
    double truth_theta = 0.0, truth_r = 0.0;
    double coarse_theta = 0.0, coarse_r = 0.0;
    double refined_theta = 0.0, refined_r = 0.0;
    double los_theta = 0.0, los_r = 0.0;
    bool loss_trace_monotone = true;
    // Spectral efficiency per beamformer scheme.
    bool beamformed = false;
    std::map<std::string, double> se;
    std::map<std::string, double> se_spread;  // max - min over subcarriers
    std::map<std::string, double> se_edge;    // mean of the two band-edge subcarriers
    std::vector<std::string> flags;
};

struct PreparedDictionaries {
    PolarLattice lattice;
    std::optional<PolarDictionary> fd;
    std::optional<PolarDictionary> flat;
    std::optional<PolarDictionary> dft;
};

PreparedDictionaries prepare_dictionaries(const SystemConfig& config,
                                          const std::vector<EstimatorScheme>& schemes);

// One full pipeline pass: scenario, channel, pilots, estimation with the given
// scheme, then optionally localization and downlink design.
TrialResult run_trial(const SystemConfig& config, const PreparedDictionaries& dicts,
                      EstimatorScheme scheme, std::uint64_t trial_seed, bool do_locate,
                      bool do_beamform, bool hybrid_combiner);

struct TrialRow {
    int sweep_index = 0;
    double sweep_value = 0.0;
    int trial = 0;
    std::uint64_t seed = 0;
    std::string scheme;
    TrialResult result;
};

struct AggregateRow {
    std::string scheme;
    double sweep_value = 0.0;
    int trials_ok = 0;
    int trials_excluded = 0;
    double nmse_median_db = 0.0, nmse_mean_db = 0.0;
    double rmse_theta_coarse_db = 0.0, rmse_r_coarse_db = 0.0;
    double rmse_theta_refined_db = 0.0, rmse_r_refined_db = 0.0;
    double rmse_theta_los_db = 0.0, rmse_r_los_db = 0.0;
    std::map<std::string, double> se_median;
    std::map<std::string, double> se_spread_median;
    std::map<std::string, double> se_edge_median;
};

struct MetricsTable {
    std::vector<TrialRow> trial_rows;
    std::vector<AggregateRow> aggregate_rows;
};

// Runs the full sweep with a deterministic per-trial seed lineage and writes
// trials.csv, metrics.csv, and manifest.json under spec.out_dir. The outputs
// are byte-identical for identical specs regardless of thread count.
MetricsTable run_pipeline(const ExperimentSpec& spec);

std::string serialize_config(const SystemConfig& config);
double median(std::vector<double> values);

}  // namespace ilsc
