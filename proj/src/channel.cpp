#include "ilsc/channel.hpp"

#include <cmath>
#include <stdexcept>

namespace ilsc {

CVec steering_vector(double theta, double r, double lambda, int n_ant, double d) {
    if (n_ant < 1) throw std::invalid_argument("steering_vector: n_ant must be >= 1");
    if (!(r > 0.0) && !std::isinf(r)) {
        throw std::domain_error("steering_vector: r must be positive or infinite");
    }
    CVec a(n_ant);
    const double scale = 1.0 / std::sqrt(static_cast<double>(n_ant));
    const double s = std::sin(theta);
    const double two_pi_over_lambda = 2.0 * kPi / lambda;
    for (int n = 1; n <= n_ant; ++n) {
        const double delta = (2.0 * n - n_ant - 1.0) / 2.0;
        double phase;
        if (std::isinf(r)) {
            phase = two_pi_over_lambda * delta * d * s;
        } else {
            const double rn = std::sqrt(r * r + delta * delta * d * d - 2.0 * r * delta * d * s);
            phase = -two_pi_over_lambda * (rn - r);
        }
        a(n - 1) = std::polar(scale, phase);
    }
    return a;
}

RMat bs_antenna_positions(const SystemConfig& config) {
    RMat pos(config.n_bs, 2);
    const double d = config.spacing();
    for (int n = 1; n <= config.n_bs; ++n) {
        const double delta = (2.0 * n - config.n_bs - 1.0) / 2.0;
        pos(n - 1, 0) = 0.0;
        pos(n - 1, 1) = delta * d;
    }
    return pos;
}

RMat ut_antenna_positions(const ScenarioGeometry& scenario, const SystemConfig& config) {
    RMat pos(config.n_ut, 2);
    const double d = config.spacing();
    const double ux = std::sin(scenario.ut_phi);
    const double uy = -std::cos(scenario.ut_phi);
    for (int n = 1; n <= config.n_ut; ++n) {
        const double delta = (2.0 * n - config.n_ut - 1.0) / 2.0;
        pos(n - 1, 0) = scenario.ut_x + delta * d * ux;
        pos(n - 1, 1) = scenario.ut_y + delta * d * uy;
    }
    return pos;
}

ChannelTensor build_channel(const ScenarioGeometry& scenario, const SystemConfig& config) {
    if (!scenario.los_present && scenario.scatterers.empty()) {
        throw std::invalid_argument("build_channel: scenario has no LoS and no scatterers");
    }
    const int n_bs = config.n_bs;
    const int n_ut = config.n_ut;
    const int m_sub = config.m_subcarriers;
    const double d = config.spacing();
    const auto lambdas = config.wavelengths();

    ChannelTensor out;
    out.downlink = false;
    out.h.assign(static_cast<std::size_t>(m_sub), CMat::Zero(n_bs, n_ut));

    // Pairwise BS-UT antenna distances for the exact LoS block.
    RMat pair_dist;
    if (scenario.los_present) {
        const RMat bs_pos = bs_antenna_positions(config);
        const RMat ut_pos = ut_antenna_positions(scenario, config);
        pair_dist.resize(n_bs, n_ut);
        for (int i = 0; i < n_bs; ++i) {
            for (int j = 0; j < n_ut; ++j) {
                pair_dist(i, j) = std::hypot(bs_pos(i, 0) - ut_pos(j, 0),
                                             bs_pos(i, 1) - ut_pos(j, 1));
            }
        }
    }

    const std::size_t n_paths = scenario.scatterers.size();
    for (int m = 0; m < m_sub; ++m) {
        const double lambda = lambdas[static_cast<std::size_t>(m)];
        CMat& h = out.h[static_cast<std::size_t>(m)];

        if (scenario.los_present) {
            const double amp = std::sqrt(scenario.beta_los);
            const double k = -2.0 * kPi / lambda;
            for (int i = 0; i < n_bs; ++i) {
                for (int j = 0; j < n_ut; ++j) {
                    h(i, j) = std::polar(amp, k * pair_dist(i, j));
                }
            }
        }

        for (std::size_t l = 0; l < n_paths; ++l) {
            const PathPolar& p = scenario.nlos[l];
            // Normalized by the active path count, not the nominal maximum.
            const double gain = std::sqrt(scenario.beta_nlos[l] * n_bs * n_ut /
                                          static_cast<double>(n_paths));
            const cplx phase = std::polar(1.0, -2.0 * kPi / lambda * (p.r_ut + p.r_bs));
            const CVec a_bs = steering_vector(p.theta_bs, p.r_bs, lambda, n_bs, d);
            const CVec a_ut = steering_vector(p.theta_ut, p.r_ut, lambda, n_ut, d);
            h.noalias() += (gain * scenario.alpha[l] * phase) * (a_bs * a_ut.adjoint());
        }
    }
    return out;
}

ChannelTensor downlink_from_uplink(const ChannelTensor& uplink) {
    if (uplink.downlink) throw std::invalid_argument("downlink_from_uplink: input is already downlink");
    ChannelTensor out;
    out.downlink = true;
    out.h.reserve(uplink.h.size());
    for (const CMat& h : uplink.h) out.h.push_back(h.adjoint());
    return out;
}

}  // namespace ilsc
