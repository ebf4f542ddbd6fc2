#include "ilsc/beamformer.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ilsc/numerics.hpp"

namespace ilsc {

std::pair<double, double> squint_position(double r0, double theta0, double lambda_m,
                                          double lambda_c) {
    if (!(r0 > 0.0) && !std::isinf(r0)) throw std::domain_error("squint_position: r0 must be positive");
    const double s0 = std::sin(theta0);
    const double s = s0 * lambda_m / lambda_c;
    if (std::abs(s) > 1.0) {
        throw std::domain_error("squint_position: squinted angle left the visible region");
    }
    const double r = std::isinf(r0)
                         ? kInf
                         : r0 * (lambda_c / lambda_m) * (1.0 - s * s) / (1.0 - s0 * s0);
    return {r, std::asin(s)};
}

std::pair<double, double> presquint_position(double r0, double theta0, double lambda_m,
                                             double lambda_c) {
    if (!(r0 > 0.0) && !std::isinf(r0)) throw std::domain_error("presquint_position: r0 must be positive");
    const double s0 = std::sin(theta0);
    const double s = s0 * lambda_c / lambda_m;
    if (std::abs(s) > 1.0) {
        throw std::domain_error("presquint_position: pre-squint angle left the visible region");
    }
    // Chosen so that squint_position(presquint_position(x)) == x.
    const double inv_r = std::isinf(r0)
                             ? 0.0
                             : (1.0 / r0) * (lambda_c / lambda_m) * (1.0 - s0 * s0) / (1.0 - s * s);
    const double r = inv_r > 0.0 ? 1.0 / inv_r : kInf;
    return {r, std::asin(s)};
}

double array_gain(const CVec& beam, double r, double theta, double lambda_m, double d) {
    const CVec a = steering_vector(theta, r, lambda_m, static_cast<int>(beam.size()), d);
    return std::abs(a.dot(beam));  // Eigen dot conjugates the left operand
}

CVec focused_beam(double r0, double theta0, const SystemConfig& config) {
    return steering_vector(theta0, r0, config.lambda_c(), config.n_bs, config.spacing());
}

namespace {

struct Span {
    double s_lo = 0.0, s_hi = 0.0;   // pre-squint sin(theta) at the band edges
    double u_lo = 0.0, u_hi = 0.0;   // pre-squint 1/r at the band edges
    double ds() const { return std::abs(s_hi - s_lo); }
    double du() const { return std::abs(u_hi - u_lo); }
};

Span presquint_span(double r0, double theta0, const SystemConfig& config) {
    const double lc = config.lambda_c();
    const auto lambdas = config.wavelengths();
    const auto [r1, t1] = presquint_position(r0, theta0, lambdas.front(), lc);
    const auto [rm, tm] = presquint_position(r0, theta0, lambdas.back(), lc);
    Span sp;
    sp.s_lo = std::sin(t1);
    sp.s_hi = std::sin(tm);
    sp.u_lo = std::isinf(r1) ? 0.0 : 1.0 / r1;
    sp.u_hi = std::isinf(rm) ? 0.0 : 1.0 / rm;
    return sp;
}

int pick_subarray_count(const Span& sp, double theta0, const SystemConfig& config,
                        bool angle_only, bool* fallback) {
    const int n = config.n_bs;
    const double lc = config.lambda_c();
    const double c2 = std::max(1e-6, std::cos(theta0) * std::cos(theta0));
    if (fallback) *fallback = false;
    for (int g = 1; g <= n; ++g) {
        if (n % g != 0) continue;
        const double n_sub = static_cast<double>(n) / g;
        const bool angle_ok = g / n_sub >= sp.ds() - 1e-15;
        const bool dist_ok = angle_only || (1.556 * g / (n_sub * n_sub * lc * c2) >= sp.du() - 1e-15);
        if (angle_ok && dist_ok) return g;
    }
    if (fallback) *fallback = true;
    return n;
}

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

CVec broadened_beam(double r0, double theta0, const SystemConfig& config, int* g_out,
                    bool* fallback) {
    const Span sp = presquint_span(r0, theta0, config);
    if (sp.ds() < 1e-12 && sp.du() < 1e-12) {
        if (g_out) *g_out = 1;
        if (fallback) *fallback = false;
        return focused_beam(r0, theta0, config);
    }

    const int n = config.n_bs;
    const double lc = config.lambda_c();
    const double d = config.spacing();
    const double c2_0 = std::max(1e-6, std::cos(theta0) * std::cos(theta0));
    const int g_count = pick_subarray_count(sp, theta0, config, false, fallback);
    if (g_out) *g_out = g_count;
    const int n_sub = n / g_count;

    const double s_mid = 0.5 * (sp.s_lo + sp.s_hi);
    const double u_mid = 0.5 * (sp.u_lo + sp.u_hi);
    const double sign_s = sign_of(sp.s_hi - sp.s_lo);
    const double sign_u = sign_of(sp.u_hi - sp.u_lo);
    const double u_step = 1.556 / (static_cast<double>(n_sub) * n_sub * lc * c2_0);

    CVec b(n);
    const double amp = 1.0 / std::sqrt(static_cast<double>(n));
    for (int g = 1; g <= g_count; ++g) {
        const double offset = (2.0 * g - 1.0 - g_count) / 2.0;
        const double s_g = std::clamp(s_mid + sign_s * offset / n_sub, -1.0, 1.0);
        const double u_g = u_mid + sign_u * offset * u_step;
        const double c2_g = 1.0 - s_g * s_g;
        for (int i = 1; i <= n_sub; ++i) {
            const int idx = (g - 1) * n_sub + i;
            const double delta = (2.0 * idx - n - 1.0) / 2.0;
            const double phase =
                -(2.0 * kPi / lc) * (-delta * d * s_g + delta * delta * d * d * c2_g * u_g / 2.0);
            b(idx - 1) = std::polar(amp, phase);
        }
    }
    return b;
}

CVec far_field_broadened_beam(double theta0, const SystemConfig& config, int* g_out) {
    const Span sp = presquint_span(kInf, theta0, config);
    if (sp.ds() < 1e-12) {
        if (g_out) *g_out = 1;
        return focused_beam(kInf, theta0, config);
    }
    const int n = config.n_bs;
    const double d = config.spacing();
    const double lc = config.lambda_c();
    const int g_count = pick_subarray_count(sp, theta0, config, true, nullptr);
    if (g_out) *g_out = g_count;
    const int n_sub = n / g_count;
    const double s_mid = 0.5 * (sp.s_lo + sp.s_hi);
    const double sign_s = sign_of(sp.s_hi - sp.s_lo);

    CVec b(n);
    const double amp = 1.0 / std::sqrt(static_cast<double>(n));
    for (int g = 1; g <= g_count; ++g) {
        const double offset = (2.0 * g - 1.0 - g_count) / 2.0;
        const double s_g = std::clamp(s_mid + sign_s * offset / n_sub, -1.0, 1.0);
        for (int i = 1; i <= n_sub; ++i) {
            const int idx = (g - 1) * n_sub + i;
            const double delta = (2.0 * idx - n - 1.0) / 2.0;
            b(idx - 1) = std::polar(amp, (2.0 * kPi / lc) * delta * d * s_g);
        }
    }
    return b;
}

namespace {

std::vector<std::pair<double, double>> report_targets(const LocationReport& report) {
    std::vector<std::pair<double, double>> targets;
    targets.emplace_back(std::hypot(report.refined_x, report.refined_y),
                         std::atan2(report.refined_y, report.refined_x));
    std::size_t sc = 0;
    for (const VaRecord& va : report.vas) {
        if (va.cls == VaClass::kScatterer) {
            if (sc < report.refined_scatterers.size()) {
                const auto [x, y] = report.refined_scatterers[sc];
                if (std::isfinite(x) && std::isfinite(y)) {
                    targets.emplace_back(std::hypot(x, y), std::atan2(y, x));
                } else {
                    targets.emplace_back(kInf, va.theta_bs);
                }
            } else {
                targets.emplace_back(va.r_bs, va.theta_bs);
            }
            ++sc;
        } else {
            targets.emplace_back(va.r_bs, va.theta_bs);
        }
    }
    return targets;
}

BeamCodebook codebook_from_targets(const std::vector<std::pair<double, double>>& targets,
                                   const SystemConfig& config, BeamformerScheme scheme) {
    BeamCodebook book;
    book.columns.resize(config.n_bs, static_cast<Eigen::Index>(targets.size()));
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const auto [r, th] = targets[i];
        int g = 1;
        CVec col;
        switch (scheme) {
            case BeamformerScheme::kProposed:
                col = broadened_beam(r, th, config, &g);
                break;
            case BeamformerScheme::kFarFieldBroadened:
                col = far_field_broadened_beam(th, config, &g);
                break;
            case BeamformerScheme::kFocusedNearField:
            case BeamformerScheme::kIdealCenterSteering:
                col = focused_beam(r, th, config);
                break;
            case BeamformerScheme::kDftCodebook:
                throw std::logic_error("codebook_from_targets: DFT codebook has no targets");
        }
        book.columns.col(static_cast<Eigen::Index>(i)) = col;
        book.tags.emplace_back(r, th);
        book.subarrays.push_back(g);
    }
    return book;
}

}  // namespace

BeamCodebook build_codebook(const LocationReport& report, const SystemConfig& config) {
    if (report.vas.empty()) throw std::invalid_argument("build_codebook: empty location report");
    return codebook_from_targets(report_targets(report), config, BeamformerScheme::kProposed);
}

BeamCodebook build_codebook_variant(const LocationReport& report, const SystemConfig& config,
                                    BeamformerScheme scheme, const ScenarioGeometry* truth) {
    switch (scheme) {
        case BeamformerScheme::kProposed:
            return build_codebook(report, config);
        case BeamformerScheme::kFocusedNearField:
        case BeamformerScheme::kFarFieldBroadened:
            if (report.vas.empty()) throw std::invalid_argument("build_codebook_variant: empty report");
            return codebook_from_targets(report_targets(report), config, scheme);
        case BeamformerScheme::kIdealCenterSteering: {
            if (truth == nullptr) {
                throw std::invalid_argument("build_codebook_variant: ideal scheme needs the true scenario");
            }
            std::vector<std::pair<double, double>> targets;
            targets.emplace_back(std::hypot(truth->ut_x, truth->ut_y),
                                 std::atan2(truth->ut_y, truth->ut_x));
            for (const PathPolar& p : truth->nlos) targets.emplace_back(p.r_bs, p.theta_bs);
            return codebook_from_targets(targets, config, scheme);
        }
        case BeamformerScheme::kDftCodebook: {
            BeamCodebook book;
            book.columns.resize(config.n_bs, config.n_bs);
            const double lc = config.lambda_c();
            for (int i = 0; i < config.n_bs; ++i) {
                const double s = (2.0 * i - config.n_bs + 1.0) / config.n_bs;
                const double th = std::asin(s);
                book.columns.col(i) = steering_vector(th, kInf, lc, config.n_bs, config.spacing());
                book.tags.emplace_back(kInf, th);
                book.subarrays.push_back(1);
            }
            return book;
        }
    }
    throw std::invalid_argument("build_codebook_variant: unknown scheme");
}

HybridPrecoder somp_hybrid(const std::vector<CMat>& f_opt, const CMat& codebook, int n_rf,
                           double power_per_m) {
    const int book_size = static_cast<int>(codebook.cols());
    if (n_rf < 1 || n_rf > book_size) {
        throw std::invalid_argument("somp_hybrid: need 1 <= n_rf <= codebook size");
    }
    const int m_sub = static_cast<int>(f_opt.size());
    if (m_sub == 0) throw std::invalid_argument("somp_hybrid: empty target list");

    HybridPrecoder out;
    std::vector<CMat> residual = f_opt;
    std::vector<char> used(static_cast<std::size_t>(book_size), 0);

    for (int round = 0; round < n_rf; ++round) {
        RVec score = RVec::Zero(book_size);
        for (int m = 0; m < m_sub; ++m) {
            score += (codebook.adjoint() * residual[static_cast<std::size_t>(m)])
                         .rowwise().squaredNorm();
        }
        int best = -1;
        double best_score = -1.0;
        for (int j = 0; j < book_size; ++j) {
            if (used[static_cast<std::size_t>(j)]) continue;
            // Skip columns that duplicate an already-selected beam (identical
            // sensed targets produce identical codewords).
            bool duplicate = false;
            for (int sel : out.selected) {
                const double c = std::abs(codebook.col(sel).dot(codebook.col(j))) /
                                 std::max(codebook.col(sel).norm() * codebook.col(j).norm(), 1e-300);
                if (c > 1.0 - 1e-12) {
                    duplicate = true;
                    break;
                }
            }
            if (duplicate) {
                used[static_cast<std::size_t>(j)] = 1;
                continue;
            }
            if (score(j) > best_score) {
                best_score = score(j);
                best = j;
            }
        }
        if (best < 0) break;  // only duplicates remain
        used[static_cast<std::size_t>(best)] = 1;
        out.selected.push_back(best);

        CMat f_rf(codebook.rows(), out.selected.size());
        for (std::size_t j = 0; j < out.selected.size(); ++j) {
            f_rf.col(static_cast<Eigen::Index>(j)) = codebook.col(out.selected[j]);
        }
        Eigen::ColPivHouseholderQR<CMat> qr(f_rf);
        if (qr.rank() < f_rf.cols()) out.pinv_flag = true;
        for (int m = 0; m < m_sub; ++m) {
            const CMat bb = qr.solve(f_opt[static_cast<std::size_t>(m)]);
            residual[static_cast<std::size_t>(m)] = f_opt[static_cast<std::size_t>(m)] - f_rf * bb;
        }
        out.f_rf = std::move(f_rf);
    }
    if (out.selected.empty()) throw std::runtime_error("somp_hybrid: no selectable codebook column");

    // Final least-squares stages from the selected set, then exact power
    // normalization per subcarrier.
    Eigen::ColPivHouseholderQR<CMat> qr(out.f_rf);
    Eigen::CompleteOrthogonalDecomposition<CMat> cod;
    const bool deficient = qr.rank() < out.f_rf.cols();
    if (deficient) {
        out.pinv_flag = true;
        cod.compute(out.f_rf);
    }
    out.f_bb.reserve(static_cast<std::size_t>(m_sub));
    for (int m = 0; m < m_sub; ++m) {
        CMat bb(out.f_rf.cols(), f_opt[static_cast<std::size_t>(m)].cols());
        if (deficient) {
            bb = cod.solve(f_opt[static_cast<std::size_t>(m)]);
        } else {
            bb = qr.solve(f_opt[static_cast<std::size_t>(m)]);
        }
        const double norm = (out.f_rf * bb).norm();
        if (norm > 0.0) bb *= std::sqrt(power_per_m) / norm;
        out.f_bb.push_back(std::move(bb));
    }
    out.power_per_m = power_per_m;
    return out;
}

std::vector<CMat> mmse_combiner(const ChannelTensor& h_dl, const std::vector<CMat>& precoder,
                                double sigma2) {
    const int m_sub = h_dl.subcarriers();
    std::vector<CMat> out(static_cast<std::size_t>(m_sub));
    for (int m = 0; m < m_sub; ++m) {
        const CMat& h = h_dl.h[static_cast<std::size_t>(m)];
        const CMat hf = h * precoder[static_cast<std::size_t>(m)];
        const CMat cov = hf * hf.adjoint() +
                         sigma2 * CMat::Identity(h.rows(), h.rows());
        out[static_cast<std::size_t>(m)] = cov.llt().solve(hf);
    }
    return out;
}

double spectral_efficiency(const ChannelTensor& h_dl, const std::vector<CMat>& precoder,
                           const std::vector<CMat>& combiner, double sigma2,
                           RVec* per_subcarrier) {
    const int m_sub = h_dl.subcarriers();
    if (precoder.size() != static_cast<std::size_t>(m_sub) ||
        combiner.size() != static_cast<std::size_t>(m_sub)) {
        throw std::invalid_argument("spectral_efficiency: per-subcarrier list mismatch");
    }
    RVec per(m_sub);
    double total = 0.0;
    for (int m = 0; m < m_sub; ++m) {
        const CMat& w = combiner[static_cast<std::size_t>(m)];
        const CMat e = w.adjoint() * h_dl.h[static_cast<std::size_t>(m)] *
                       precoder[static_cast<std::size_t>(m)];
        const CMat r_n = sigma2 * (w.adjoint() * w);
        Eigen::LLT<CMat> llt(r_n);
        if (llt.info() != Eigen::Success) {
            throw std::runtime_error("spectral_efficiency: singular combined-noise covariance");
        }
        // det(I + R_n^-1 E E^H) via the whitened Gram spectrum.
        const CMat b = llt.matrixL().solve(e);
        Eigen::SelfAdjointEigenSolver<CMat> eig(b * b.adjoint());
        double se = 0.0;
        for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i) {
            se += std::log2(1.0 + std::max(0.0, eig.eigenvalues()(i)));
        }
        per(m) = se;
        total += se;
    }
    if (per_subcarrier) *per_subcarrier = per;
    return total / m_sub;
}

DownlinkDesign design_downlink(const ChannelTensor& h_dl, const LocationReport& report,
                               const SystemConfig& config, BeamformerScheme scheme,
                               const ScenarioGeometry* truth, bool hybrid_combiner,
                               const ChannelTensor* h_eval) {
    if (!h_dl.downlink) throw std::invalid_argument("design_downlink: channel must be downlink");
    const ChannelTensor& link = h_eval ? *h_eval : h_dl;
    if (!link.downlink || link.subcarriers() != h_dl.subcarriers()) {
        throw std::invalid_argument("design_downlink: evaluation channel mismatch");
    }
    const int m_sub = h_dl.subcarriers();
    const double sigma2 = db_to_lin(config.noise_power_dbm());
    const double power_per_m = db_to_lin(config.p_t_dl_dbm) / m_sub;

    const BeamCodebook book = build_codebook_variant(report, config, scheme, truth);
    const int n_rf = std::min(config.n_rf_bs, static_cast<int>(book.columns.cols()));
    const int n_s = std::min({config.effective_n_streams(), n_rf, config.n_ut, config.n_rf_ut});

    // Unconstrained targets: leading right singular vectors per subcarrier.
    std::vector<CMat> f_opt(static_cast<std::size_t>(m_sub));
    for (int m = 0; m < m_sub; ++m) {
        const SvdResult s = svd(h_dl.h[static_cast<std::size_t>(m)]);
        f_opt[static_cast<std::size_t>(m)] = s.v.leftCols(n_s);
    }

    DownlinkDesign out;
    out.precoder = somp_hybrid(f_opt, book.columns, n_rf, power_per_m);

    std::vector<CMat> f(static_cast<std::size_t>(m_sub));
    for (int m = 0; m < m_sub; ++m) {
        f[static_cast<std::size_t>(m)] =
            out.precoder.f_rf * out.precoder.f_bb[static_cast<std::size_t>(m)];
    }

    std::vector<CMat> w = mmse_combiner(link, f, sigma2);
    if (hybrid_combiner) {
        // UT-side codebook: far-field broadened beams at the sensed (or true)
        // UT-side angles.
        SystemConfig ut_cfg = config;
        ut_cfg.n_bs = config.n_ut;
        std::vector<double> angles;
        if (scheme == BeamformerScheme::kIdealCenterSteering && truth != nullptr) {
            angles.push_back(truth->los.theta_ut);
            for (const PathPolar& p : truth->nlos) angles.push_back(p.theta_ut);
        } else {
            for (const VaRecord& va : report.vas) angles.push_back(va.theta_ut);
        }
        if (!angles.empty()) {
            CMat ut_book(config.n_ut, static_cast<Eigen::Index>(angles.size()));
            for (std::size_t i = 0; i < angles.size(); ++i) {
                ut_book.col(static_cast<Eigen::Index>(i)) =
                    far_field_broadened_beam(angles[i], ut_cfg);
            }
            const int n_rf_ut = std::min(config.n_rf_ut, static_cast<int>(ut_book.cols()));
            const HybridPrecoder wc = somp_hybrid(w, ut_book, n_rf_ut, 1.0);
            for (int m = 0; m < m_sub; ++m) {
                CMat wm = wc.f_rf * wc.f_bb[static_cast<std::size_t>(m)];
                // Keep an independent column set; rank-deficient combiners make
                // the combined-noise covariance singular.
                Eigen::ColPivHouseholderQR<CMat> qr(wm);
                const Eigen::Index rank = qr.rank();
                if (rank < wm.cols()) {
                    wm = CMat(qr.householderQ() * CMat::Identity(wm.rows(), rank));
                }
                w[static_cast<std::size_t>(m)] = std::move(wm);
            }
        }
    }

    out.combiner = std::move(w);
    out.se = spectral_efficiency(link, f, out.combiner, sigma2, &out.se_per_subcarrier);
    return out;
}

}  // namespace ilsc
