#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <thread>

#include "ilsc/harness.hpp"
#include "ilsc/io.hpp"
#include "ilsc/rng.hpp"

namespace {

using namespace ilsc;

SystemConfig make_config(const std::string& profile, const std::string& config_path,
                         std::uint64_t seed) {
    SystemConfig cfg =
        profile == "paper" ? SystemConfig::paper_profile() : SystemConfig::desk_profile();
    if (!config_path.empty()) {
        const SystemConfig defaults = cfg;
        // Config file entries override the profile.
        std::ifstream in(config_path);
        if (!in) throw std::runtime_error("cannot open config '" + config_path + "'");
        std::string line;
        while (std::getline(in, line)) {
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            auto trim = [](std::string s) {
                const auto a = s.find_first_not_of(" \t\r\n");
                if (a == std::string::npos) return std::string();
                const auto b = s.find_last_not_of(" \t\r\n");
                return s.substr(a, b - a + 1);
            };
            const std::string key = trim(line.substr(0, eq));
            if (key.empty()) continue;
            apply_config_entry(cfg, key, trim(line.substr(eq + 1)));
        }
    }
    cfg.rng_seed = seed;
    cfg.validate();
    return cfg;
}

int cmd_simulate(const SystemConfig& cfg, const std::string& out_dir, std::uint64_t seed) {
    std::filesystem::create_directories(out_dir);

    const ScenarioGeometry scenario = sample_scenario(cfg, derive_seed(seed, 1));
    const ChannelTensor channel = build_channel(scenario, cfg);
    const PilotFrame frame = build_pilot_frame(cfg, derive_seed(seed, 2));
    const MeasurementSet meas = simulate_uplink(channel, frame, cfg, derive_seed(seed, 3));
    const PolarLattice lattice = build_lattice(cfg);
    const PolarDictionary dict(lattice, DictionaryVariant::kFrequencyDependent, cfg);

    AmpOptions opts;
    opts.t_iter = cfg.t_iter;
    opts.damping = cfg.damping;
    opts.tol = cfg.amp_tol;
    opts.init_snr_db = cfg.amp_init_snr_db;
    const SparseChannelEstimate estimate = amp_em_estimate(meas, dict, frame, opts);
    const ChannelTensor reconstructed = reconstruct_spatial(estimate, dict);

    dump_channel(channel, out_dir + "/channel.csv");
    dump_measurements(meas, out_dir + "/measurements.csv");
    dump_estimate(estimate, out_dir + "/estimate.csv");
    dump_channel(reconstructed, out_dir + "/channel_estimate.csv");

    const double nmse = nmse_db(channel, reconstructed);
    std::printf("nmse_db %.4f (snr %.2f dB, amp iterations %d)\n", nmse, meas.snr_db,
                estimate.iterations);

    const LocationReport report =
        locate(meas, estimate, lattice, cfg, scenario.los_present, derive_seed(seed, 4));
    dump_location_report(report, out_dir + "/location_report.json");
    std::printf("ut truth (%.4f, %.4f)  coarse (%.4f, %.4f)  refined (%.4f, %.4f)\n",
                scenario.ut_x, scenario.ut_y, report.coarse_x, report.coarse_y, report.refined_x,
                report.refined_y);

    const ChannelTensor h_dl_true = downlink_from_uplink(channel);
    const ChannelTensor h_dl_design = downlink_from_uplink(reconstructed);
    std::vector<double> freqs;
    for (int m = 1; m <= cfg.m_subcarriers; ++m) freqs.push_back(cfg.subcarrier_freq(m));
    const struct {
        const char* name;
        BeamformerScheme scheme;
    } schemes[] = {
        {"proposed", BeamformerScheme::kProposed},
        {"focused", BeamformerScheme::kFocusedNearField},
        {"ff_broadened", BeamformerScheme::kFarFieldBroadened},
        {"ideal_center", BeamformerScheme::kIdealCenterSteering},
        {"dft_somp", BeamformerScheme::kDftCodebook},
    };
    for (const auto& s : schemes) {
        const DownlinkDesign design =
            design_downlink(h_dl_design, report, cfg, s.scheme, &scenario, true, &h_dl_true);
        dump_se_csv(design.se_per_subcarrier, freqs, out_dir + "/se_" + s.name + ".csv");
        std::printf("se %-13s %.4f bits/s/Hz\n", s.name, design.se);
    }
    return 0;
}

int cmd_locate(const SystemConfig& cfg, const std::string& channel_path,
               const std::string& out_dir, std::uint64_t seed) {
    std::filesystem::create_directories(out_dir);
    const ChannelTensor channel = load_channel(channel_path);
    if (channel.subcarriers() != cfg.m_subcarriers ||
        channel.h[0].rows() != cfg.n_bs || channel.h[0].cols() != cfg.n_ut) {
        throw std::runtime_error("locate: channel dump does not match the config dimensions");
    }
    const PilotFrame frame = build_pilot_frame(cfg, derive_seed(seed, 2));
    const MeasurementSet meas = simulate_uplink(channel, frame, cfg, derive_seed(seed, 3));
    const PolarLattice lattice = build_lattice(cfg);
    const PolarDictionary dict(lattice, DictionaryVariant::kFrequencyDependent, cfg);
    AmpOptions opts;
    opts.t_iter = cfg.t_iter;
    opts.damping = cfg.damping;
    opts.tol = cfg.amp_tol;
    const SparseChannelEstimate estimate = amp_em_estimate(meas, dict, frame, opts);
    const LocationReport report =
        locate(meas, estimate, lattice, cfg, !cfg.los_blocked, derive_seed(seed, 4));
    dump_location_report(report, out_dir + "/location_report.json");
    std::printf("coarse (%.4f, %.4f)  refined (%.4f, %.4f)  l_hat %d\n", report.coarse_x,
                report.coarse_y, report.refined_x, report.refined_y, report.l_hat);
    return 0;
}

int cmd_beamform(const SystemConfig& cfg, const std::string& channel_path,
                 const std::string& report_path, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    const ChannelTensor channel = load_channel(channel_path);
    const LocationReport report = load_location_report(report_path);
    const ChannelTensor h_dl = downlink_from_uplink(channel);
    std::vector<double> freqs;
    for (int m = 1; m <= cfg.m_subcarriers; ++m) freqs.push_back(cfg.subcarrier_freq(m));

    const struct {
        const char* name;
        BeamformerScheme scheme;
    } schemes[] = {
        {"proposed", BeamformerScheme::kProposed},
        {"focused", BeamformerScheme::kFocusedNearField},
        {"ff_broadened", BeamformerScheme::kFarFieldBroadened},
        {"dft_somp", BeamformerScheme::kDftCodebook},
    };
    for (const auto& s : schemes) {
        const DownlinkDesign design = design_downlink(h_dl, report, cfg, s.scheme, nullptr, true);
        dump_se_csv(design.se_per_subcarrier, freqs, out_dir + "/se_" + s.name + ".csv");
        std::printf("se %-13s %.4f bits/s/Hz\n", s.name, design.se);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hybrid-field beam-squint ILSC simulation harness"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path, out_dir = "out", profile = "desk";
    std::uint64_t seed = 1;
    app.add_option("--config", config_path, "key = value config file");
    app.add_option("--seed", seed, "base RNG seed");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--profile", profile, "desk | paper")
        ->check(CLI::IsMember({"desk", "paper"}));

    auto* sim = app.add_subcommand("simulate", "run one trial and dump all intermediates");

    auto* sweep = app.add_subcommand("sweep", "run an experiment spec (Monte-Carlo sweep)");
    std::string spec_path, schemes_csv;
    int trials_override = 0;
    unsigned threads = std::max(1u, std::thread::hardware_concurrency());
    sweep->add_option("spec", spec_path, "experiment spec JSON")->required();
    sweep->add_option("--schemes", schemes_csv, "comma-separated scheme list override");
    sweep->add_option("--trials", trials_override, "trial count override");
    sweep->add_option("--threads", threads, "worker count");

    auto* loc = app.add_subcommand("locate", "channel dump in, location report out");
    std::string channel_path;
    loc->add_option("channel", channel_path, "channel dump CSV")->required();

    auto* beam = app.add_subcommand("beamform", "location report + channel in, SE tables out");
    std::string beam_channel, beam_report;
    beam->add_option("channel", beam_channel, "channel dump CSV")->required();
    beam->add_option("report", beam_report, "location report JSON")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        const SystemConfig cfg = make_config(profile, config_path, seed);
        if (sim->parsed()) return cmd_simulate(cfg, out_dir, seed);
        if (sweep->parsed()) {
            ExperimentSpec spec = load_experiment_spec(spec_path);
            if (!config_path.empty() || profile == "paper") spec.config = cfg;
            if (!schemes_csv.empty()) {
                spec.schemes.clear();
                std::stringstream ss(schemes_csv);
                std::string item;
                while (std::getline(ss, item, ',')) spec.schemes.push_back(scheme_from_name(item));
            }
            if (trials_override > 0) spec.trials = trials_override;
            spec.threads = threads;
            spec.out_dir = out_dir;
            spec.seed = seed;
            const MetricsTable table = run_pipeline(spec);
            int excluded = 0;
            for (const auto& agg : table.aggregate_rows) excluded += agg.trials_excluded;
            std::printf("wrote %s/trials.csv and %s/metrics.csv (%zu aggregate rows, %d excluded trials)\n",
                        out_dir.c_str(), out_dir.c_str(), table.aggregate_rows.size(), excluded);
            return 0;
        }
        if (loc->parsed()) return cmd_locate(cfg, channel_path, out_dir, seed);
        if (beam->parsed()) return cmd_beamform(cfg, beam_channel, beam_report, out_dir);
    } catch (const std::exception& e) {
        nlohmann::json err;
        err["error"] = e.what();
        std::cerr << err.dump() << "\n";
        return 1;
    }
    return 0;
}
