#pragma once

#include <vector>

#include "ilsc/scenario.hpp"
#include "ilsc/types.hpp"

namespace ilsc {

// Spherical-wavefront ULA manifold with unit 2-norm. Entry n (1-based) is
// (1/sqrt(N)) exp(-j 2pi (r_n - r) / lambda) with
// r_n = sqrt(r^2 + delta_n^2 d^2 - 2 r delta_n d sin(theta)) and
// delta_n = (2n - N - 1) / 2. r = inf gives the planar-wave limit
// (1/sqrt(N)) exp(+j 2pi delta_n d sin(theta) / lambda).
// Throws std::domain_error for finite r <= 0.
CVec steering_vector(double theta, double r, double lambda, int n_ant, double d);

struct ChannelTensor {
    std::vector<CMat> h;   // per subcarrier
    bool downlink = false; // uplink tensors are n_bs x n_ut
    int subcarriers() const { return static_cast<int>(h.size()); }
};

// Exact hybrid-field uplink channel: the LoS block is built elementwise from
// pairwise antenna distances; NLoS paths are spherical-wave rank-one products.
ChannelTensor build_channel(const ScenarioGeometry& scenario, const SystemConfig& config);

// TDD reciprocity: D[m] = H[m]^H.
ChannelTensor downlink_from_uplink(const ChannelTensor& uplink);

// Antenna element positions (n x 2). The BS array lies along the y axis
// centered at the origin; the UT array axis direction is (sin phi, -cos phi)
// so that phi is the broadside direction angle.
RMat bs_antenna_positions(const SystemConfig& config);
RMat ut_antenna_positions(const ScenarioGeometry& scenario, const SystemConfig& config);

}  // namespace ilsc
