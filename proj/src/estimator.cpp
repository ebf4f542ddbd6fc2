#include "ilsc/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstdio>
#include <numeric>

#include "ilsc/parallel.hpp"

namespace ilsc {

Denoised bg_denoiser(cplx r, double sigma, const BernoulliGaussianPrior& prior) {
    if (!(sigma > 0.0)) throw std::domain_error("bg_denoiser: sigma must be positive");
    const double lambda = prior.lambda;
    const double gamma = prior.gamma;
    const double denom = sigma + gamma;

    static const bool full_l = std::getenv("ILSC_AMP_FULL_L") != nullptr;
    const cplx xi = (sigma * prior.mu + r * gamma) / denom;
    const double zeta = sigma * gamma / denom;
    double l_score = 0.5 * std::log(sigma / denom) + std::norm(r) / (2.0 * sigma) -
                     std::norm(r - prior.mu) / (2.0 * denom);
    if (full_l) l_score *= 2.0;

    double pi;
    if (lambda <= 0.0) {
        pi = 0.0;
    } else if (lambda >= 1.0) {
        pi = 1.0;
    } else if (l_score > 700.0) {
        pi = 1.0;
    } else if (l_score < -700.0) {
        pi = 0.0;
    } else {
        pi = lambda / (lambda + (1.0 - lambda) * std::exp(-l_score));
    }

    Denoised out;
    out.mean = pi * xi;
    out.var = pi * (std::norm(xi) + zeta) - std::norm(out.mean);
    out.pi = pi;
    out.xi = xi;
    out.zeta = zeta;
    return out;
}

namespace {

// Per-subcarrier message state.
struct AmpState {
    CMat z;        // factor means, P x N
    RMat v;        // factor variances, P x N
    CMat h;        // posterior means, K x N
    RMat vh;       // posterior variances, K x N
    RMat pi;       // support posteriors, K x N
    CMat xi;       // active-component posterior means, K x N
    RMat zeta;     // active-component posterior variances, K x N
    CVec mu;       // prior mean per column
    RVec gamma;    // prior variance per column
    double sigma2;
};

constexpr double kVarFloor = 1e-30;

}  // namespace

SparseChannelEstimate amp_em_estimate(const MeasurementSet& measurements,
                                      const PolarDictionary& dictionary,
                                      const PilotFrame& frame, const AmpOptions& opts) {
    if (opts.t_iter < 1) throw std::invalid_argument("amp_em_estimate: t_iter must be >= 1");
    if (opts.damping < 0.0 || opts.damping >= 1.0) {
        throw std::invalid_argument("amp_em_estimate: damping must be in [0, 1)");
    }
    const int m_sub = measurements.subcarriers();
    if (m_sub != dictionary.subcarriers()) {
        throw std::invalid_argument("amp_em_estimate: subcarrier mismatch");
    }
    const int p = static_cast<int>(measurements.y[0].rows());
    const int n = static_cast<int>(measurements.y[0].cols());
    const int k = dictionary.atoms();
    const double eps = opts.damping;

    // Effective sensing matrices and their squared moduli.
    std::vector<CMat> a(static_cast<std::size_t>(m_sub));
    std::vector<RMat> a2(static_cast<std::size_t>(m_sub));
    parallel_for(static_cast<std::size_t>(m_sub), [&](std::size_t m) {
        a[m] = dictionary.sensing_matrix(frame.w_ul, static_cast<int>(m));
        a2[m] = a[m].cwiseAbs2();
    }, opts.threads);

    // The printed initialization (V = 1, unit-scale priors) assumes unit-energy
    // measurements; physical channels are many orders smaller. Normalize the
    // problem internally and scale the outputs back at the end.
    double energy_total = 0.0;
    for (const CMat& y : measurements.y) energy_total += y.squaredNorm();
    const double y_scale =
        std::sqrt(std::max(energy_total / (static_cast<double>(m_sub) * p * n), 1e-300));
    std::vector<CMat> y_norm(static_cast<std::size_t>(m_sub));
    for (int m = 0; m < m_sub; ++m) {
        y_norm[static_cast<std::size_t>(m)] = measurements.y[static_cast<std::size_t>(m)] / y_scale;
    }

    // Hyper-parameter initialization: sparsity-ratio heuristic for lambda,
    // measurement energy for gamma, a fixed SNR guess for the noise floor.
    const double lambda0 =
        std::clamp(opts.init_lambda_scale * p / static_cast<double>(k), 1e-12, 1.0);
    RVec lambda_k = RVec::Constant(k, lambda0);

    std::vector<AmpState> st(static_cast<std::size_t>(m_sub));
    for (int m = 0; m < m_sub; ++m) {
        AmpState& s = st[static_cast<std::size_t>(m)];
        const CMat& y = y_norm[static_cast<std::size_t>(m)];
        const double energy = y.squaredNorm() / (static_cast<double>(p) * n);
        const double gamma0 = std::max(kVarFloor, energy / lambda0);
        s.z = y;
        s.v = RMat::Ones(p, n);
        s.mu = CVec::Zero(n);
        s.gamma = RVec::Constant(n, gamma0);
        s.h = CMat::Zero(k, n);
        s.vh = RMat::Constant(k, n, gamma0);
        s.pi = RMat::Constant(k, n, lambda0);
        s.xi = CMat::Zero(k, n);
        s.zeta = RMat::Zero(k, n);
        s.sigma2 = std::max(kVarFloor, energy * db_to_lin(-opts.init_snr_db));
    }

    SparseChannelEstimate out;
    out.h_polar.assign(static_cast<std::size_t>(m_sub), CMat::Zero(k, n));
    out.noise_var.assign(static_cast<std::size_t>(m_sub), 0.0);
    out.support_prob = lambda_k;

    std::vector<double> delta(static_cast<std::size_t>(m_sub), 0.0);
    std::vector<double> scale(static_cast<std::size_t>(m_sub), 0.0);
    std::vector<char> ok(static_cast<std::size_t>(m_sub), 1);
    int t = 1;
    for (; t <= opts.t_iter; ++t) {
        parallel_for(static_cast<std::size_t>(m_sub), [&](std::size_t m) {
            AmpState& s = st[m];
            const CMat& y = y_norm[m];

            // Factor nodes with damping.
            const RMat denom_prev = s.v.array() + s.sigma2;
            const CMat scaled_res = (y - s.z).cwiseQuotient(denom_prev.cast<cplx>());
            const RMat v_new = a2[m] * s.vh;
            const CMat z_new = a[m] * s.h - v_new.cast<cplx>().cwiseProduct(scaled_res);
            s.v = eps * s.v + (1.0 - eps) * v_new;
            s.z = eps * s.z + (1.0 - eps) * z_new;

            // Variable nodes.
            const RMat inv_denom = (s.v.array() + s.sigma2).inverse();
            const RMat sig_inv = a2[m].transpose() * inv_denom;  // K x N
            const CMat corr = a[m].adjoint() * (y - s.z).cwiseProduct(inv_denom.cast<cplx>());
            // Column-wise vectorized Bernoulli-Gaussian denoiser (same closed
            // forms as bg_denoiser).
            double max_change = 0.0;
            bool finite = true;
            Eigen::ArrayXd lam = lambda_k.array();
            for (int col = 0; col < s.h.cols(); ++col) {
                const cplx mu_c = s.mu(col);
                const double gamma_c = std::max(s.gamma(col), kVarFloor);
                Eigen::ArrayXd sigma = sig_inv.col(col).array().max(kVarFloor).inverse();
                Eigen::ArrayXcd r =
                    s.h.col(col).array() + sigma.cast<cplx>() * corr.col(col).array();
                Eigen::ArrayXd denom = sigma + gamma_c;
                Eigen::ArrayXcd xi =
                    (sigma.cast<cplx>() * mu_c + r * gamma_c) / denom.cast<cplx>();
                Eigen::ArrayXd zeta = sigma * gamma_c / denom;
                Eigen::ArrayXd l_score = 0.5 * (sigma / denom).log() +
                                         r.abs2() / (2.0 * sigma) -
                                         (r - mu_c).abs2() / (2.0 * denom);
                Eigen::ArrayXd pi =
                    lam / (lam + (1.0 - lam) * (-l_score.min(700.0).max(-700.0)).exp());
                pi = (lam <= 0.0).select(0.0, pi);
                pi = (lam >= 1.0).select(1.0, pi);
                Eigen::ArrayXcd mean = pi.cast<cplx>() * xi;
                Eigen::ArrayXd var = (pi * (xi.abs2() + zeta) - mean.abs2()).max(0.0);

                max_change = std::max(max_change,
                                      (mean - s.h.col(col).array()).abs().maxCoeff());
                s.h.col(col) = mean.matrix();
                s.vh.col(col) = var.matrix();
                s.pi.col(col) = pi.matrix();
                s.xi.col(col) = xi.matrix();
                s.zeta.col(col) = zeta.matrix();
                if (!s.h.col(col).allFinite() || !s.vh.col(col).allFinite()) finite = false;
            }

            // EM: per-column prior mean/variance, per-subcarrier noise variance.
            if (finite) {
                for (int col = 0; col < n; ++col) {
                    const double psum = s.pi.col(col).sum();
                    if (psum > 1e-12) {
                        const cplx mu_new = (s.pi.col(col).cast<cplx>().cwiseProduct(s.xi.col(col))).sum() / psum;
                        double g = 0.0;
                        for (int row = 0; row < k; ++row) {
                            g += s.pi(row, col) *
                                 (std::norm(s.mu(col) - s.xi(row, col)) + s.zeta(row, col));
                        }
                        s.mu(col) = mu_new;
                        s.gamma(col) = std::max(g / psum, kVarFloor);
                    }
                }
                static const bool freeze_sigma = std::getenv("ILSC_AMP_FREEZE_SIGMA") != nullptr;
                double sig_acc = 0.0;
                if (!freeze_sigma)
                for (int col = 0; col < n; ++col) {
                    double acc = 0.0;
                    for (int row = 0; row < p; ++row) {
                        const double vv = s.v(row, col);
                        const double ratio = 1.0 + vv / s.sigma2;
                        acc += std::norm(y(row, col) - s.z(row, col)) / (ratio * ratio) +
                               s.sigma2 * vv / (s.sigma2 + vv);
                    }
                    sig_acc += acc / p;
                }
                if (!freeze_sigma) s.sigma2 = std::max(sig_acc / n, kVarFloor);
                if (!std::isfinite(s.sigma2)) finite = false;
            }

            delta[m] = max_change;
            scale[m] = s.h.cwiseAbs().maxCoeff();
            ok[m] = finite ? 1 : 0;
        }, opts.threads);

        for (int m = 0; m < m_sub; ++m) {
            if (!ok[static_cast<std::size_t>(m)]) {
                out.iterations = t;
                throw AmpDiverged("amp_em_estimate: non-finite messages at iteration " +
                                      std::to_string(t),
                                  out);
            }
        }

        // Shared support probability across columns and subcarriers.
        RVec acc = RVec::Zero(k);
        for (const AmpState& s : st) acc += s.pi.rowwise().sum();
        lambda_k = acc / (static_cast<double>(m_sub) * n);

        // Snapshot the current iterate in physical units (kept as the
        // last-finite state).
        for (int m = 0; m < m_sub; ++m) {
            out.h_polar[static_cast<std::size_t>(m)] = y_scale * st[static_cast<std::size_t>(m)].h;
            out.noise_var[static_cast<std::size_t>(m)] =
                y_scale * y_scale * st[static_cast<std::size_t>(m)].sigma2;
        }
        out.support_prob = lambda_k;
        out.iterations = t;

        if (std::getenv("ILSC_AMP_DEBUG")) {
            const AmpState& s0 = st[0];
            const double res = (y_norm[0] - a[0] * s0.h).norm() / y_norm[0].norm();
            std::fprintf(stderr,
                         "t=%3d res0=%.3e sigma2=%.3e gamma0=%.3e max|h|=%.3e lam[max]=%.3e\n", t,
                         res, s0.sigma2, s0.gamma(0), s0.h.cwiseAbs().maxCoeff(),
                         lambda_k.maxCoeff());
        }

        // Relative convergence gate on the posterior means.
        const double max_delta = *std::max_element(delta.begin(), delta.end());
        const double max_scale = *std::max_element(scale.begin(), scale.end());
        if (opts.tol > 0.0 && t >= 2 && max_delta < opts.tol * std::max(max_scale, 1e-300)) {
            out.converged = true;
            break;
        }
    }
    return out;
}

SparseChannelEstimate omp_estimate(const MeasurementSet& measurements,
                                   const PolarDictionary& dictionary, const PilotFrame& frame,
                                   int sparsity) {
    const int m_sub = measurements.subcarriers();
    const int p = static_cast<int>(measurements.y[0].rows());
    const int n = static_cast<int>(measurements.y[0].cols());
    const int k = dictionary.atoms();
    if (sparsity < 1) throw std::invalid_argument("omp_estimate: sparsity must be >= 1");
    if (sparsity > p) throw std::invalid_argument("omp_estimate: sparsity exceeds measurement rows");

    std::vector<CMat> a(static_cast<std::size_t>(m_sub));
    std::vector<RVec> col_norm2(static_cast<std::size_t>(m_sub));
    std::vector<CMat> residual(static_cast<std::size_t>(m_sub));
    for (int m = 0; m < m_sub; ++m) {
        a[static_cast<std::size_t>(m)] = dictionary.sensing_matrix(frame.w_ul, m);
        col_norm2[static_cast<std::size_t>(m)] =
            a[static_cast<std::size_t>(m)].colwise().squaredNorm().transpose().cwiseMax(1e-300);
        residual[static_cast<std::size_t>(m)] = measurements.y[static_cast<std::size_t>(m)];
    }

    std::vector<int> support;
    support.reserve(static_cast<std::size_t>(sparsity));
    std::vector<char> used(static_cast<std::size_t>(k), 0);

    for (int round = 0; round < sparsity; ++round) {
        // Normalized correlation energy summed over subcarriers and columns.
        RVec score = RVec::Zero(k);
        for (int m = 0; m < m_sub; ++m) {
            const CMat corr = a[static_cast<std::size_t>(m)].adjoint() * residual[static_cast<std::size_t>(m)];
            score += corr.rowwise().squaredNorm().cwiseQuotient(col_norm2[static_cast<std::size_t>(m)]);
        }
        int best = -1;
        double best_score = -1.0;
        for (int j = 0; j < k; ++j) {
            if (used[static_cast<std::size_t>(j)]) continue;
            if (score(j) > best_score) {  // strict: ties keep the lowest index
                best_score = score(j);
                best = j;
            }
        }
        if (best < 0) break;
        used[static_cast<std::size_t>(best)] = 1;
        support.push_back(best);

        // Per-subcarrier least-squares refit on the support.
        const int s_count = static_cast<int>(support.size());
        for (int m = 0; m < m_sub; ++m) {
            CMat a_s(p, s_count);
            for (int j = 0; j < s_count; ++j) {
                a_s.col(j) = a[static_cast<std::size_t>(m)].col(support[static_cast<std::size_t>(j)]);
            }
            const CMat coef = a_s.colPivHouseholderQr().solve(measurements.y[static_cast<std::size_t>(m)]);
            residual[static_cast<std::size_t>(m)] = measurements.y[static_cast<std::size_t>(m)] - a_s * coef;
        }
    }

    SparseChannelEstimate out;
    out.h_polar.assign(static_cast<std::size_t>(m_sub), CMat::Zero(k, n));
    out.noise_var.assign(static_cast<std::size_t>(m_sub), 0.0);
    out.support_prob = RVec::Zero(k);
    const int s_count = static_cast<int>(support.size());
    for (int j = 0; j < s_count; ++j) out.support_prob(support[static_cast<std::size_t>(j)]) = 1.0;
    for (int m = 0; m < m_sub; ++m) {
        CMat a_s(p, s_count);
        for (int j = 0; j < s_count; ++j) {
            a_s.col(j) = a[static_cast<std::size_t>(m)].col(support[static_cast<std::size_t>(j)]);
        }
        const CMat coef = a_s.colPivHouseholderQr().solve(measurements.y[static_cast<std::size_t>(m)]);
        for (int j = 0; j < s_count; ++j) {
            out.h_polar[static_cast<std::size_t>(m)].row(support[static_cast<std::size_t>(j)]) = coef.row(j);
        }
        out.noise_var[static_cast<std::size_t>(m)] =
            (measurements.y[static_cast<std::size_t>(m)] - a_s * coef).squaredNorm() /
            (static_cast<double>(p) * n);
    }
    out.iterations = s_count;
    out.converged = true;
    return out;
}

ChannelTensor reconstruct_spatial(const SparseChannelEstimate& estimate,
                                  const PolarDictionary& dictionary) {
    if (estimate.subcarriers() != dictionary.subcarriers()) {
        throw std::invalid_argument("reconstruct_spatial: subcarrier mismatch");
    }
    ChannelTensor out;
    out.downlink = false;
    out.h.resize(estimate.h_polar.size());
    for (int m = 0; m < estimate.subcarriers(); ++m) {
        const CMat& hp = estimate.h_polar[static_cast<std::size_t>(m)];
        if (hp.rows() != dictionary.atoms()) {
            throw std::invalid_argument("reconstruct_spatial: atom count mismatch");
        }
        if (dictionary.materialized()) {
            out.h[static_cast<std::size_t>(m)] = dictionary.matrix(m) * hp;
        } else {
            CMat h = CMat::Zero(dictionary.lattice().n_bs, hp.cols());
            for (int k = 0; k < dictionary.atoms(); ++k) {
                if (hp.row(k).isZero(0.0)) continue;
                h.noalias() += dictionary.column(m, k) * hp.row(k);
            }
            out.h[static_cast<std::size_t>(m)] = std::move(h);
        }
    }
    return out;
}

}  // namespace ilsc
