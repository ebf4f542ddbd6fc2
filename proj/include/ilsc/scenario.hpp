#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ilsc/types.hpp"

namespace ilsc {

enum class LinkType { kLos, kNlos };

// Log-distance path loss: PL_dB = A + 10 n log10(d) + 20 log10(f_GHz), with an
// extra fixed offset for NLoS links.
struct PathLossModel {
    double intercept_db = 32.4;
    double exponent_los = 2.1;
    double exponent_nlos = 3.19;
    double nlos_offset_db = 10.0;
};

double path_loss_db(const PathLossModel& model, LinkType link, double distance_m, double f_c_hz);

// Linear power gain beta = 10^(-PL/10). Throws std::domain_error for d <= 0.
double path_loss(const PathLossModel& model, LinkType link, double distance_m, double f_c_hz);

struct LatticeParams {
    double rho = 2.0;  // angular oversampling
    int s_rings = 20;  // distance rings including the far-field ring s=0
    double eta = 1.5;  // distance-ring density
};

struct SystemConfig {
    int n_bs = 512;
    int n_ut = 32;
    int n_rf_bs = 4;
    int n_rf_ut = 4;
    double f_c = 47e9;        // Hz
    double bandwidth = 5e9;   // Hz
    int m_subcarriers = 64;
    double d_spacing = 0.0;   // m; 0 means lambda_c / 2
    int q_bs = 18;            // training subframes, P = q_bs * n_rf_bs
    double p_t_ul_dbm = std::nan("");  // NaN: solved from target_snr_ul_db
    double p_t_dl_dbm = 30.0;
    double target_snr_ul_db = 30.0;
    double noise_psd_dbm_hz = -174.0;
    LatticeParams lattice;
    double damping = 0.8;
    int t_iter = 100;
    int t_grd = 10;
    int g_los = 4;   // UT subarrays for the piecewise-planar LoS view
    int l_max = 6;   // scatterer count
    bool los_blocked = false;
    int k_smooth = 0;       // 0: n_ut / 2
    int n_streams_dl = 0;   // 0: n_rf_ut
    double rho_ut = 0.0;    // UT angular grid oversampling; 0: lattice.rho
    double amp_init_snr_db = 10.0;
    double amp_tol = 1e-6;
    double ut_r_min = 5.0, ut_r_max = 50.0;
    double sc_r_min = 5.0, sc_r_max = 20.0;
    double angle_span = kPi / 3.0;  // angles drawn from U[-span, span]
    PathLossModel path_loss_model;
    std::uint64_t rng_seed = 1;

    double lambda_c() const { return kSpeedOfLight / f_c; }
    double spacing() const { return d_spacing > 0.0 ? d_spacing : lambda_c() / 2.0; }
    int p_measurements() const { return q_bs * n_rf_bs; }
    double subcarrier_freq(int m) const {  // m in [1, M]
        return f_c - bandwidth / 2.0 + (m - 0.5) * bandwidth / m_subcarriers;
    }
    std::vector<double> wavelengths() const;
    double noise_power_dbm() const { return noise_psd_dbm_hz + 10.0 * std::log10(bandwidth); }
    double bs_aperture() const { return (n_bs - 1) * spacing(); }
    double ut_aperture() const { return (n_ut - 1) * spacing(); }
    int effective_k_smooth() const { return k_smooth > 0 ? k_smooth : n_ut / 2; }
    int effective_n_streams() const { return n_streams_dl > 0 ? n_streams_dl : n_rf_ut; }
    double effective_rho_ut() const { return rho_ut > 0.0 ? rho_ut : lattice.rho; }

    void validate() const;

    static SystemConfig paper_profile();
    static SystemConfig desk_profile();
};

// Reads a flat "key = value" file (# comments allowed); unknown keys throw.
SystemConfig load_config(const std::string& path);
void apply_config_entry(SystemConfig& cfg, const std::string& key, const std::string& value);

struct PathPolar {
    double theta_bs = 0.0;  // rad, seen from the BS broadside
    double r_bs = 0.0;      // m
    double theta_ut = 0.0;  // rad, seen from the UT broadside
    double r_ut = 0.0;      // m
};

struct ScenarioGeometry {
    double ut_x = 0.0, ut_y = 0.0;
    double ut_phi = 0.0;  // UT broadside direction angle, U[0, pi)
    bool los_present = true;
    PathPolar los;                                // BS<->UT link
    std::vector<std::pair<double, double>> scatterers;  // (x, y)
    std::vector<PathPolar> nlos;                  // per scatterer
    std::vector<cplx> alpha;                      // small-scale gains
    double beta_los = 0.0;
    std::vector<double> beta_nlos;
};

ScenarioGeometry sample_scenario(const SystemConfig& config, std::uint64_t seed);

}  // namespace ilsc
