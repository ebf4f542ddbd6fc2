#pragma once

#include <vector>

#include "ilsc/channel.hpp"
#include "ilsc/types.hpp"

namespace ilsc {

inline constexpr double kFloorDb = -300.0;

// Subcarrier-averaged normalized channel error in dB (exact estimates floor at
// -300 dB). Throws std::domain_error on a zero-norm truth.
double nmse_db(const ChannelTensor& truth, const ChannelTensor& estimate);

struct RmseResult {
    double rmse_theta_db = kFloorDb;  // 20 log10 of the angle RMSE (rad)
    double rmse_r_db = kFloorDb;      // 20 log10 of the distance RMSE (m)
    std::vector<double> theta_errors; // per trial |error|, for CDF output
    std::vector<double> r_errors;
};

// RMSE over trials of polar position errors. Entries are (truth, estimate)
// pairs of (theta, r).
RmseResult rmse(const std::vector<std::pair<double, double>>& truth_polar,
                const std::vector<std::pair<double, double>>& estimate_polar);

}  // namespace ilsc
