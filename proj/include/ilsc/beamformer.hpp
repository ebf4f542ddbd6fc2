#pragma once

#include <utility>
#include <vector>

#include "ilsc/channel.hpp"
#include "ilsc/locator.hpp"
#include "ilsc/scenario.hpp"
#include "ilsc/types.hpp"

namespace ilsc {

// Where a beam focused on (r0, theta0) at the reference wavelength actually
// lands on subcarrier wavelength lambda_m (angle and distance squint).
// Throws std::domain_error when the squinted angle leaves the visible region.
std::pair<double, double> squint_position(double r0, double theta0, double lambda_m,
                                          double lambda_c);

// Inverse map: where to aim at the reference wavelength so the beam lands on
// (r0, theta0) at lambda_m. squint_position(presquint(...)) is the identity.
std::pair<double, double> presquint_position(double r0, double theta0, double lambda_m,
                                             double lambda_c);

// |a_BS(theta, r, lambda_m)^H f| for a unit-norm beam; in [0, 1].
double array_gain(const CVec& beam, double r, double theta, double lambda_m, double d);

// Phase-only beam focused on (r0, theta0) at the center frequency.
CVec focused_beam(double r0, double theta0, const SystemConfig& config);

// Subarray-aggregated beam broadened over the pre-squint span in both the
// angle and inverse-distance domains. g_out reports the subarray count;
// fallback is set when no divisor of n_bs covers the span.
CVec broadened_beam(double r0, double theta0, const SystemConfig& config, int* g_out = nullptr,
                    bool* fallback = nullptr);

// Far-field variant: angle-domain broadening only, distance term dropped.
CVec far_field_broadened_beam(double theta0, const SystemConfig& config, int* g_out = nullptr);

struct BeamCodebook {
    CMat columns;                                // n_bs x count, unit-modulus entries
    std::vector<std::pair<double, double>> tags; // (r, theta) per column
    std::vector<int> subarrays;                  // G per column
};

// Proposed codebook: one broadened beam for the refined UT position, one per
// refined scatterer, one per LoS subarray-center VA.
BeamCodebook build_codebook(const LocationReport& report, const SystemConfig& config);

enum class BeamformerScheme {
    kProposed,            // broadened beams at sensed locations
    kFocusedNearField,    // focused beams at sensed locations
    kFarFieldBroadened,   // angle-only broadening at sensed locations
    kIdealCenterSteering, // focused beams at the true locations
    kDftCodebook,         // far-field DFT grid
};

BeamCodebook build_codebook_variant(const LocationReport& report, const SystemConfig& config,
                                    BeamformerScheme scheme,
                                    const ScenarioGeometry* truth = nullptr);

struct HybridPrecoder {
    CMat f_rf;                  // n x n_rf, codebook columns
    std::vector<CMat> f_bb;     // per subcarrier: n_rf x n_s
    double power_per_m = 0.0;   // ||F_RF F_BB[m]||_F^2 after scaling
    bool pinv_flag = false;     // rank-deficient selection hit the pseudo-inverse
    std::vector<int> selected;  // codebook column indices
};

// SOMP selection of n_rf codebook columns against per-subcarrier targets, with
// per-subcarrier least-squares baseband stages scaled to the power budget.
HybridPrecoder somp_hybrid(const std::vector<CMat>& f_opt, const CMat& codebook, int n_rf,
                           double power_per_m);

// Subcarrier-averaged log-det spectral efficiency; r_n = sigma2 W^H W.
// Throws std::runtime_error when the combined noise covariance is singular.
double spectral_efficiency(const ChannelTensor& h_dl, const std::vector<CMat>& precoder,
                           const std::vector<CMat>& combiner, double sigma2,
                           RVec* per_subcarrier = nullptr);

// Full-digital per-subcarrier MMSE combiners for the given precoder.
std::vector<CMat> mmse_combiner(const ChannelTensor& h_dl, const std::vector<CMat>& precoder,
                                double sigma2);

struct DownlinkDesign {
    HybridPrecoder precoder;
    std::vector<CMat> combiner;  // effective N_ut x n_s per subcarrier
    double se = 0.0;
    RVec se_per_subcarrier;
};

// End-to-end downlink design for one scheme: codebook, SOMP precoder, UT-side
// combiner (hybrid SOMP against a far-field broadened codebook, or full MMSE),
// and the resulting spectral efficiency. The precoder targets come from h_dl
// (typically the reconstructed estimate); combining and the SE evaluation use
// h_eval when given (the true link), else h_dl.
DownlinkDesign design_downlink(const ChannelTensor& h_dl, const LocationReport& report,
                               const SystemConfig& config, BeamformerScheme scheme,
                               const ScenarioGeometry* truth = nullptr,
                               bool hybrid_combiner = true,
                               const ChannelTensor* h_eval = nullptr);

}  // namespace ilsc
