#include "ilsc/pilot.hpp"

#include <cmath>
#include <stdexcept>

#include "ilsc/rng.hpp"

namespace ilsc {

PilotFrame build_pilot_frame(const SystemConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    PilotFrame frame;
    frame.q_bs = config.q_bs;

    const int p = config.p_measurements();
    const double w_amp = 1.0 / std::sqrt(static_cast<double>(config.n_bs));
    frame.w_ul.resize(config.n_bs, p);
    // Subframe combiner blocks are stacked column-wise; the digital combiner is
    // an identity and does not appear.
    for (int col = 0; col < p; ++col) {
        for (int row = 0; row < config.n_bs; ++row) {
            frame.w_ul(row, col) = std::polar(w_amp, rng.uniform_phase());
        }
    }

    frame.f_ul.resize(config.n_ut, config.n_ut);
    for (int a = 0; a < config.n_ut; ++a) {
        for (int b = 0; b < config.n_ut; ++b) {
            frame.f_ul(a, b) = std::polar(1.0, -2.0 * kPi * a * b / config.n_ut);
        }
    }

    frame.s.resize(static_cast<std::size_t>(config.m_subcarriers));
    for (int m = 0; m < config.m_subcarriers; ++m) {
        CVec sm(config.n_ut);
        for (int q = 0; q < config.n_ut; ++q) sm(q) = std::polar(1.0, rng.uniform_phase());
        frame.s[static_cast<std::size_t>(m)] = sm;
    }
    return frame;
}

MeasurementSet simulate_uplink(const ChannelTensor& channel, const PilotFrame& frame,
                               const SystemConfig& config, std::uint64_t seed) {
    if (channel.downlink) throw std::invalid_argument("simulate_uplink: channel must be uplink");
    if (channel.subcarriers() != config.m_subcarriers) {
        throw std::invalid_argument("simulate_uplink: subcarrier count mismatch");
    }
    const int m_sub = config.m_subcarriers;
    const int p = frame.p();
    const int n_ut = config.n_ut;
    if (frame.w_ul.rows() != config.n_bs || channel.h[0].rows() != config.n_bs ||
        channel.h[0].cols() != n_ut) {
        throw std::invalid_argument("simulate_uplink: shape mismatch");
    }

    // Noiseless projected channel, also used to size the transmit power.
    std::vector<CMat> clean(static_cast<std::size_t>(m_sub));
    double sig_energy = 0.0;
    for (int m = 0; m < m_sub; ++m) {
        clean[static_cast<std::size_t>(m)] = frame.w_ul.adjoint() * channel.h[static_cast<std::size_t>(m)];
        sig_energy += clean[static_cast<std::size_t>(m)].squaredNorm();
    }
    const double sig_per_entry = sig_energy / (static_cast<double>(m_sub) * p * n_ut);

    MeasurementSet out;
    const bool noiseless = std::isinf(config.target_snr_ul_db) && std::isnan(config.p_t_ul_dbm);
    if (noiseless) {
        out.y = std::move(clean);
        out.noise_var = 0.0;
        out.snr_db = kInf;
        out.p_t_ul_dbm = std::nan("");
        return out;
    }

    const double sigma2 = db_to_lin(config.noise_power_dbm());  // mW
    double p_t;
    if (!std::isnan(config.p_t_ul_dbm)) {
        p_t = db_to_lin(config.p_t_ul_dbm);
    } else if (sig_per_entry > 0.0) {
        // sigma_eff^2 = sigma^2 M / (P_t n_ut); solve SNR = sig / sigma_eff^2.
        p_t = db_to_lin(config.target_snr_ul_db) * sigma2 * m_sub / (sig_per_entry * n_ut);
    } else {
        p_t = 1.0;
    }
    out.p_t_ul_dbm = lin_to_db(p_t);
    out.noise_var = sigma2 * m_sub / (p_t * n_ut);

    Rng rng(seed);
    const double amp = std::sqrt(p_t / m_sub);
    out.y.resize(static_cast<std::size_t>(m_sub));
    for (int m = 0; m < m_sub; ++m) {
        const CVec& s = frame.s[static_cast<std::size_t>(m)];
        CMat noise(config.n_bs, n_ut);
        for (int i = 0; i < config.n_bs; ++i) {
            for (int j = 0; j < n_ut; ++j) noise(i, j) = std::sqrt(sigma2) * rng.cnormal();
        }
        // Physical receive Y~ = W^H H F S + W^H N with S = amp diag(s), then
        // exact despreading by S^H F^H.
        CMat raw = amp * (clean[static_cast<std::size_t>(m)] * frame.f_ul) * s.asDiagonal() +
                   frame.w_ul.adjoint() * noise;
        out.y[static_cast<std::size_t>(m)] =
            (m_sub / (p_t * n_ut)) * amp * ((raw * s.conjugate().asDiagonal()) * frame.f_ul.adjoint());
    }
    out.snr_db = sig_per_entry > 0.0 ? lin_to_db(sig_per_entry / out.noise_var) : -kInf;
    return out;
}

}  // namespace ilsc
