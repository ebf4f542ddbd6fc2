#include "ilsc/harness.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "ilsc/io.hpp"
#include "ilsc/parallel.hpp"
#include "ilsc/pilot.hpp"
#include "ilsc/rng.hpp"

namespace ilsc {

std::string scheme_name(EstimatorScheme s) {
    switch (s) {
        case EstimatorScheme::kAmpPolarFd: return "amp-polar-fd";
        case EstimatorScheme::kOmpPolarFd: return "omp-polar-fd";
        case EstimatorScheme::kOmpPolarFlat: return "omp-polar-flat";
        case EstimatorScheme::kOmpDft: return "omp-dft";
    }
    return "unknown";
}

EstimatorScheme scheme_from_name(const std::string& name) {
    if (name == "amp-polar-fd") return EstimatorScheme::kAmpPolarFd;
    if (name == "omp-polar-fd") return EstimatorScheme::kOmpPolarFd;
    if (name == "omp-polar-flat") return EstimatorScheme::kOmpPolarFlat;
    if (name == "omp-dft") return EstimatorScheme::kOmpDft;
    throw std::invalid_argument("unknown scheme '" + name + "'");
}

SystemConfig apply_sweep(const SystemConfig& base, const std::string& variable, double value) {
    SystemConfig cfg = base;
    if (variable == "none") return cfg;
    if (variable == "p") {
        cfg.q_bs = std::max(1, static_cast<int>(std::lround(value / cfg.n_rf_bs)));
    } else if (variable == "scatterer_distance") {
        cfg.sc_r_min = std::max(1.0, value - 2.5);
        cfg.sc_r_max = value + 2.5;
    } else if (variable == "snr") {
        cfg.target_snr_ul_db = value;
    } else if (variable == "n_bs") {
        cfg.n_bs = static_cast<int>(value);
    } else if (variable == "p_t_dl") {
        cfg.p_t_dl_dbm = value;
    } else if (variable == "bandwidth") {
        cfg.bandwidth = value;
    } else {
        throw std::invalid_argument("unknown sweep variable '" + variable + "'");
    }
    cfg.validate();
    return cfg;
}

ExperimentSpec load_experiment_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open experiment spec '" + path + "'");
    nlohmann::json j;
    in >> j;
    ExperimentSpec spec;
    if (j.contains("profile") && j["profile"].get<std::string>() == "paper") {
        spec.config = SystemConfig::paper_profile();
    } else {
        spec.config = SystemConfig::desk_profile();
    }
    if (j.contains("config")) {
        for (const auto& [key, value] : j["config"].items()) {
            std::ostringstream os;
            if (value.is_string()) os << value.get<std::string>();
            else os << value;
            apply_config_entry(spec.config, key, os.str());
        }
    }
    spec.config.validate();
    if (j.contains("sweep")) {
        spec.sweep_variable = j["sweep"].at("variable").get<std::string>();
        spec.values = j["sweep"].at("values").get<std::vector<double>>();
    }
    if (spec.values.empty()) throw std::invalid_argument("experiment spec: empty sweep values");
    if (j.contains("trials")) spec.trials = j["trials"].get<int>();
    if (spec.trials < 1) throw std::invalid_argument("experiment spec: trials must be >= 1");
    if (j.contains("schemes")) {
        spec.schemes.clear();
        for (const auto& s : j["schemes"]) spec.schemes.push_back(scheme_from_name(s.get<std::string>()));
    }
    if (j.contains("seed")) spec.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("out_dir")) spec.out_dir = j["out_dir"].get<std::string>();
    if (j.contains("locate")) spec.locate_enabled = j["locate"].get<bool>();
    if (j.contains("beamform")) spec.beamform_enabled = j["beamform"].get<bool>();
    if (j.contains("hybrid_combiner")) spec.hybrid_combiner = j["hybrid_combiner"].get<bool>();
    return spec;
}

PreparedDictionaries prepare_dictionaries(const SystemConfig& config,
                                          const std::vector<EstimatorScheme>& schemes) {
    PreparedDictionaries out;
    out.lattice = build_lattice(config);
    bool need_fd = false, need_flat = false, need_dft = false;
    for (EstimatorScheme s : schemes) {
        need_fd |= (s == EstimatorScheme::kAmpPolarFd || s == EstimatorScheme::kOmpPolarFd);
        need_flat |= (s == EstimatorScheme::kOmpPolarFlat);
        need_dft |= (s == EstimatorScheme::kOmpDft);
    }
    if (need_fd) out.fd.emplace(out.lattice, DictionaryVariant::kFrequencyDependent, config);
    if (need_flat) out.flat.emplace(out.lattice, DictionaryVariant::kFrequencyFlat, config);
    if (need_dft) out.dft.emplace(out.lattice, DictionaryVariant::kFarFieldDft, config);
    return out;
}

namespace {

const PolarDictionary& dictionary_for(const PreparedDictionaries& dicts, EstimatorScheme scheme) {
    switch (scheme) {
        case EstimatorScheme::kAmpPolarFd:
        case EstimatorScheme::kOmpPolarFd:
            return *dicts.fd;
        case EstimatorScheme::kOmpPolarFlat:
            return *dicts.flat;
        case EstimatorScheme::kOmpDft:
            return *dicts.dft;
    }
    throw std::logic_error("dictionary_for: unknown scheme");
}

struct BeamSchemeEntry {
    const char* name;
    BeamformerScheme scheme;
};

constexpr BeamSchemeEntry kBeamSchemes[] = {
    {"proposed", BeamformerScheme::kProposed},
    {"focused", BeamformerScheme::kFocusedNearField},
    {"ff-broadened", BeamformerScheme::kFarFieldBroadened},
    {"ideal-center", BeamformerScheme::kIdealCenterSteering},
    {"dft-somp", BeamformerScheme::kDftCodebook},
};

}  // namespace

TrialResult run_trial(const SystemConfig& config, const PreparedDictionaries& dicts,
                      EstimatorScheme scheme, std::uint64_t trial_seed, bool do_locate,
                      bool do_beamform, bool hybrid_combiner) {
    TrialResult out;
    try {
        const ScenarioGeometry scenario = sample_scenario(config, derive_seed(trial_seed, 1));
        const ChannelTensor channel = build_channel(scenario, config);
        const PilotFrame frame = build_pilot_frame(config, derive_seed(trial_seed, 2));
        const MeasurementSet meas = simulate_uplink(channel, frame, config, derive_seed(trial_seed, 3));
        const PolarDictionary& dict = dictionary_for(dicts, scheme);

        SparseChannelEstimate estimate;
        if (scheme == EstimatorScheme::kAmpPolarFd) {
            AmpOptions opts;
            opts.t_iter = config.t_iter;
            opts.damping = config.damping;
            opts.tol = config.amp_tol;
            opts.init_snr_db = config.amp_init_snr_db;
            estimate = amp_em_estimate(meas, dict, frame, opts);
        } else {
            estimate = omp_estimate(meas, dict, frame,
                                    std::min(config.l_max + config.g_los, frame.p()));
        }

        const ChannelTensor reconstructed = reconstruct_spatial(estimate, dict);
        out.nmse_db = nmse_db(channel, reconstructed);

        out.truth_theta = scenario.los.theta_bs;
        out.truth_r = scenario.los.r_bs;

        LocationReport report;
        const bool polar_grid = dict.variant() != DictionaryVariant::kFarFieldDft;
        if (do_locate && polar_grid) {
            report = locate(meas, estimate, dict.grid(), config, scenario.los_present,
                            derive_seed(trial_seed, 4));
            out.located = true;
            out.coarse_theta = std::atan2(report.coarse_y, report.coarse_x);
            out.coarse_r = std::hypot(report.coarse_x, report.coarse_y);
            out.refined_theta = std::atan2(report.refined_y, report.refined_x);
            out.refined_r = std::hypot(report.refined_x, report.refined_y);
            out.los_theta = std::isfinite(report.los_only_x)
                                ? std::atan2(report.los_only_y, report.los_only_x)
                                : 0.0;
            out.los_r = std::hypot(report.los_only_x, report.los_only_y);
            for (std::size_t i = 1; i < report.loss_trace.size(); ++i) {
                if (report.loss_trace[i] > report.loss_trace[i - 1] * (1.0 + 1e-12) + 1e-300) {
                    out.loss_trace_monotone = false;
                }
            }
            out.flags = report.flags;
        }

        if (do_beamform && out.located) {
            const ChannelTensor h_dl_true = downlink_from_uplink(channel);
            ChannelTensor h_dl_design = downlink_from_uplink(reconstructed);
            for (const auto& [name, beam_scheme] : kBeamSchemes) {
                const DownlinkDesign design =
                    design_downlink(h_dl_design, report, config, beam_scheme, &scenario,
                                    hybrid_combiner, &h_dl_true);
                out.se[name] = design.se;
                out.se_spread[name] =
                    design.se_per_subcarrier.maxCoeff() - design.se_per_subcarrier.minCoeff();
                out.se_edge[name] = 0.5 * (design.se_per_subcarrier(0) +
                                           design.se_per_subcarrier(design.se_per_subcarrier.size() - 1));
            }
            out.beamformed = true;
        }
        out.ok = true;
    } catch (const std::exception& e) {
        out.ok = false;
        out.error = e.what();
    }
    return out;
}

double median(std::vector<double> values) {
    if (values.empty()) return std::nan("");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::string serialize_config(const SystemConfig& c) {
    std::ostringstream os;
    os.precision(17);
    os << "n_bs=" << c.n_bs << "\nn_ut=" << c.n_ut << "\nn_rf_bs=" << c.n_rf_bs
       << "\nn_rf_ut=" << c.n_rf_ut << "\nf_c=" << c.f_c << "\nbandwidth=" << c.bandwidth
       << "\nm_subcarriers=" << c.m_subcarriers << "\nd_spacing=" << c.d_spacing
       << "\nq_bs=" << c.q_bs << "\np_t_ul_dbm=" << c.p_t_ul_dbm
       << "\np_t_dl_dbm=" << c.p_t_dl_dbm << "\ntarget_snr_ul_db=" << c.target_snr_ul_db
       << "\nnoise_psd_dbm_hz=" << c.noise_psd_dbm_hz << "\nrho=" << c.lattice.rho
       << "\ns_rings=" << c.lattice.s_rings << "\neta=" << c.lattice.eta
       << "\ndamping=" << c.damping << "\nt_iter=" << c.t_iter << "\nt_grd=" << c.t_grd
       << "\ng_los=" << c.g_los << "\nl_max=" << c.l_max << "\nlos_blocked=" << c.los_blocked
       << "\nk_smooth=" << c.k_smooth << "\nn_streams_dl=" << c.n_streams_dl
       << "\nrho_ut=" << c.rho_ut << "\namp_init_snr_db=" << c.amp_init_snr_db
       << "\namp_tol=" << c.amp_tol << "\nut_r_min=" << c.ut_r_min << "\nut_r_max=" << c.ut_r_max
       << "\nsc_r_min=" << c.sc_r_min << "\nsc_r_max=" << c.sc_r_max
       << "\nangle_span=" << c.angle_span << "\npl_intercept_db=" << c.path_loss_model.intercept_db
       << "\npl_exponent_los=" << c.path_loss_model.exponent_los
       << "\npl_exponent_nlos=" << c.path_loss_model.exponent_nlos
       << "\npl_nlos_offset_db=" << c.path_loss_model.nlos_offset_db
       << "\nrng_seed=" << c.rng_seed << "\n";
    return os.str();
}

namespace {

std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

void write_trials_csv(const MetricsTable& table, const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("cannot open '" + path + "'");
    std::fprintf(f,
                 "sweep_value,trial,seed,scheme,ok,error,nmse_db,truth_theta,truth_r,"
                 "coarse_theta,coarse_r,refined_theta,refined_r,los_theta,los_r,"
                 "se_proposed,se_focused,se_ff_broadened,se_ideal_center,se_dft_somp,"
                 "spread_proposed,spread_focused,spread_ideal_center\n");
    for (const TrialRow& row : table.trial_rows) {
        const TrialResult& r = row.result;
        const auto se = [&](const char* k) { return r.se.count(k) ? r.se.at(k) : std::nan(""); };
        const auto sp = [&](const char* k) {
            return r.se_spread.count(k) ? r.se_spread.at(k) : std::nan("");
        };
        std::string err = r.error;
        std::replace(err.begin(), err.end(), ',', ';');
        std::replace(err.begin(), err.end(), '\n', ' ');
        std::fprintf(f,
                     "%.10g,%d,%" PRIu64 ",%s,%d,%s,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,"
                     "%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                     row.sweep_value, row.trial, row.seed, row.scheme.c_str(), r.ok ? 1 : 0,
                     err.c_str(), r.nmse_db, r.truth_theta, r.truth_r, r.coarse_theta, r.coarse_r,
                     r.refined_theta, r.refined_r, r.los_theta, r.los_r, se("proposed"),
                     se("focused"), se("ff-broadened"), se("ideal-center"), se("dft-somp"),
                     sp("proposed"), sp("focused"), sp("ideal-center"));
    }
    std::fclose(f);
}

void write_metrics_csv(const MetricsTable& table, const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("cannot open '" + path + "'");
    std::fprintf(f,
                 "scheme,sweep_value,trials_ok,trials_excluded,nmse_median_db,nmse_mean_db,"
                 "rmse_theta_coarse_db,rmse_r_coarse_db,rmse_theta_refined_db,rmse_r_refined_db,"
                 "rmse_theta_los_db,rmse_r_los_db,se_proposed_median,se_focused_median,"
                 "se_ff_broadened_median,se_ideal_center_median,se_dft_somp_median,"
                 "spread_proposed_median,spread_focused_median,spread_ideal_center_median\n");
    for (const AggregateRow& a : table.aggregate_rows) {
        const auto get = [&](const std::map<std::string, double>& m, const char* k) {
            return m.count(k) ? m.at(k) : std::nan("");
        };
        std::fprintf(f,
                     "%s,%.10g,%d,%d,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,"
                     "%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                     a.scheme.c_str(), a.sweep_value, a.trials_ok, a.trials_excluded,
                     a.nmse_median_db, a.nmse_mean_db, a.rmse_theta_coarse_db, a.rmse_r_coarse_db,
                     a.rmse_theta_refined_db, a.rmse_r_refined_db, a.rmse_theta_los_db,
                     a.rmse_r_los_db, get(a.se_median, "proposed"), get(a.se_median, "focused"),
                     get(a.se_median, "ff-broadened"), get(a.se_median, "ideal-center"),
                     get(a.se_median, "dft-somp"), get(a.se_spread_median, "proposed"),
                     get(a.se_spread_median, "focused"), get(a.se_spread_median, "ideal-center"));
    }
    std::fclose(f);
}

}  // namespace

MetricsTable run_pipeline(const ExperimentSpec& spec) {
    spec.config.validate();
    std::filesystem::create_directories(spec.out_dir);

    const std::size_t n_values = spec.values.size();
    const std::size_t n_trials = static_cast<std::size_t>(spec.trials);
    const std::size_t n_schemes = spec.schemes.size();

    // Per-sweep-value configs and dictionaries (immutable, shared across trials).
    std::vector<SystemConfig> configs;
    std::vector<PreparedDictionaries> dicts;
    configs.reserve(n_values);
    for (std::size_t vi = 0; vi < n_values; ++vi) {
        configs.push_back(apply_sweep(spec.config, spec.sweep_variable, spec.values[vi]));
        dicts.push_back(prepare_dictionaries(configs.back(), spec.schemes));
    }

    MetricsTable table;
    table.trial_rows.assign(n_values * n_trials * n_schemes, TrialRow{});

    parallel_for(n_values * n_trials, [&](std::size_t task) {
        const std::size_t vi = task / n_trials;
        const std::size_t trial = task % n_trials;
        const std::uint64_t trial_seed = derive_seed(spec.seed, vi, trial);
        for (std::size_t si = 0; si < n_schemes; ++si) {
            TrialRow& row = table.trial_rows[(vi * n_trials + trial) * n_schemes + si];
            row.sweep_index = static_cast<int>(vi);
            row.sweep_value = spec.values[vi];
            row.trial = static_cast<int>(trial);
            row.seed = trial_seed;
            row.scheme = scheme_name(spec.schemes[si]);
            row.result = run_trial(configs[vi], dicts[vi], spec.schemes[si], trial_seed,
                                   spec.locate_enabled, spec.beamform_enabled,
                                   spec.hybrid_combiner);
        }
    }, spec.threads);

    // Aggregates.
    for (std::size_t vi = 0; vi < n_values; ++vi) {
        for (std::size_t si = 0; si < n_schemes; ++si) {
            AggregateRow agg;
            agg.scheme = scheme_name(spec.schemes[si]);
            agg.sweep_value = spec.values[vi];
            std::vector<double> nmse;
            std::vector<std::pair<double, double>> truth, coarse, refined, los;
            std::map<std::string, std::vector<double>> se, spread, edge;
            for (std::size_t trial = 0; trial < n_trials; ++trial) {
                const TrialRow& row = table.trial_rows[(vi * n_trials + trial) * n_schemes + si];
                if (!row.result.ok) {
                    ++agg.trials_excluded;
                    continue;
                }
                ++agg.trials_ok;
                nmse.push_back(row.result.nmse_db);
                if (row.result.located) {
                    truth.emplace_back(row.result.truth_theta, row.result.truth_r);
                    coarse.emplace_back(row.result.coarse_theta, row.result.coarse_r);
                    refined.emplace_back(row.result.refined_theta, row.result.refined_r);
                    los.emplace_back(row.result.los_theta, row.result.los_r);
                }
                for (const auto& [k, v] : row.result.se) se[k].push_back(v);
                for (const auto& [k, v] : row.result.se_spread) spread[k].push_back(v);
                for (const auto& [k, v] : row.result.se_edge) edge[k].push_back(v);
            }
            agg.nmse_median_db = median(nmse);
            agg.nmse_mean_db =
                nmse.empty() ? std::nan("")
                             : std::accumulate(nmse.begin(), nmse.end(), 0.0) / nmse.size();
            if (!truth.empty()) {
                const RmseResult rc = rmse(truth, coarse);
                const RmseResult rr = rmse(truth, refined);
                const RmseResult rl = rmse(truth, los);
                agg.rmse_theta_coarse_db = rc.rmse_theta_db;
                agg.rmse_r_coarse_db = rc.rmse_r_db;
                agg.rmse_theta_refined_db = rr.rmse_theta_db;
                agg.rmse_r_refined_db = rr.rmse_r_db;
                agg.rmse_theta_los_db = rl.rmse_theta_db;
                agg.rmse_r_los_db = rl.rmse_r_db;
            } else {
                agg.rmse_theta_coarse_db = agg.rmse_r_coarse_db = std::nan("");
                agg.rmse_theta_refined_db = agg.rmse_r_refined_db = std::nan("");
                agg.rmse_theta_los_db = agg.rmse_r_los_db = std::nan("");
            }
            for (auto& [k, v] : se) agg.se_median[k] = median(v);
            for (auto& [k, v] : spread) agg.se_spread_median[k] = median(v);
            for (auto& [k, v] : edge) agg.se_edge_median[k] = median(v);
            table.aggregate_rows.push_back(std::move(agg));
        }
    }

    write_trials_csv(table, spec.out_dir + "/trials.csv");
    write_metrics_csv(table, spec.out_dir + "/metrics.csv");

    nlohmann::json manifest;
    manifest["version"] = "1.0.0";
    manifest["seed"] = spec.seed;
    manifest["trials"] = spec.trials;
    manifest["sweep_variable"] = spec.sweep_variable;
    manifest["sweep_values"] = spec.values;
    std::vector<std::string> names;
    for (EstimatorScheme s : spec.schemes) names.push_back(scheme_name(s));
    manifest["schemes"] = names;
    manifest["config_hash"] = fnv1a(serialize_config(spec.config));
    manifest["locate"] = spec.locate_enabled;
    manifest["beamform"] = spec.beamform_enabled;
    std::ofstream mf(spec.out_dir + "/manifest.json");
    mf << manifest.dump(2) << "\n";

    return table;
}

}  // namespace ilsc
