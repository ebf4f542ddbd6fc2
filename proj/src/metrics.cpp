#include "ilsc/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace ilsc {

double nmse_db(const ChannelTensor& truth, const ChannelTensor& estimate) {
    if (truth.subcarriers() != estimate.subcarriers()) {
        throw std::invalid_argument("nmse_db: subcarrier mismatch");
    }
    double acc = 0.0;
    for (int m = 0; m < truth.subcarriers(); ++m) {
        const CMat& h = truth.h[static_cast<std::size_t>(m)];
        const CMat& e = estimate.h[static_cast<std::size_t>(m)];
        if (h.rows() != e.rows() || h.cols() != e.cols()) {
            throw std::invalid_argument("nmse_db: shape mismatch");
        }
        const double denom = h.squaredNorm();
        if (!(denom > 0.0)) throw std::domain_error("nmse_db: zero-norm truth");
        acc += (h - e).squaredNorm() / denom;
    }
    const double ratio = acc / truth.subcarriers();
    if (!(ratio > 0.0)) return kFloorDb;
    return std::max(kFloorDb, 10.0 * std::log10(ratio));
}

RmseResult rmse(const std::vector<std::pair<double, double>>& truth_polar,
                const std::vector<std::pair<double, double>>& estimate_polar) {
    if (truth_polar.size() != estimate_polar.size() || truth_polar.empty()) {
        throw std::invalid_argument("rmse: need matching non-empty trial lists");
    }
    RmseResult out;
    double acc_th = 0.0, acc_r = 0.0;
    for (std::size_t i = 0; i < truth_polar.size(); ++i) {
        const double eth = estimate_polar[i].first - truth_polar[i].first;
        const double er = estimate_polar[i].second - truth_polar[i].second;
        out.theta_errors.push_back(std::abs(eth));
        out.r_errors.push_back(std::abs(er));
        acc_th += eth * eth;
        acc_r += er * er;
    }
    const double n = static_cast<double>(truth_polar.size());
    const double rth = std::sqrt(acc_th / n);
    const double rr = std::sqrt(acc_r / n);
    out.rmse_theta_db = rth > 0.0 ? std::max(kFloorDb, 20.0 * std::log10(rth)) : kFloorDb;
    out.rmse_r_db = rr > 0.0 ? std::max(kFloorDb, 20.0 * std::log10(rr)) : kFloorDb;
    return out;
}

}  // namespace ilsc
