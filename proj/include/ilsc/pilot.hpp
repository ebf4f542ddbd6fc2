#pragma once

#include <cstdint>
#include <vector>

#include "ilsc/channel.hpp"
#include "ilsc/scenario.hpp"
#include "ilsc/types.hpp"

namespace ilsc {

struct PilotFrame {
    CMat w_ul;              // n_bs x P analog combiner, entries 1/sqrt(n_bs) e^{j theta}
    CMat f_ul;              // n_ut x n_ut DFT pilot matrix, F^H F = n_ut I
    std::vector<CVec> s;    // per subcarrier: n_ut unit-modulus baseband symbols
    int q_bs = 0;
    int p() const { return static_cast<int>(w_ul.cols()); }
};

PilotFrame build_pilot_frame(const SystemConfig& config, std::uint64_t seed);

struct MeasurementSet {
    std::vector<CMat> y;     // per subcarrier: P x n_ut post-processed measurements
    double noise_var = 0.0;  // effective per-entry noise variance (linear)
    double snr_db = 0.0;     // realized average per-entry SNR
    double p_t_ul_dbm = 0.0; // transmit power actually used
    int subcarriers() const { return static_cast<int>(y.size()); }
};

// Simulates the uplink training round trip: transmit, combine, despread.
// Post-processing is exact, so Y[m] = W^H H[m] + N_eff[m] with white effective
// noise. The transmit power is taken from config.p_t_ul_dbm when set, else
// solved so the average per-entry SNR meets config.target_snr_ul_db
// (an infinite target gives a noiseless set).
MeasurementSet simulate_uplink(const ChannelTensor& channel, const PilotFrame& frame,
                               const SystemConfig& config, std::uint64_t seed);

}  // namespace ilsc
