#include "ilsc/locator.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "ilsc/numerics.hpp"
#include "ilsc/rng.hpp"

namespace ilsc {

namespace {

int mdl_order(const RVec& eigenvalues, int n_bs, int n_ut, int k_smooth) {
    const int w = static_cast<int>(eigenvalues.size());
    const double lmax = eigenvalues(0);
    if (!(lmax > 0.0)) return 0;

    RVec lam = eigenvalues.cwiseMax(lmax * 1e-12);
    double best_score = kInf;
    int best = 0;
    for (int l = 0; l < w; ++l) {
        const int c = w - l;
        double am = 0.0, lg = 0.0;
        for (int i = l; i < w; ++i) {
            am += lam(i);
            lg += std::log(lam(i));
        }
        am /= c;
        const double gm = std::exp(lg / c);
        const double fit = n_bs * static_cast<double>(c) * std::log(am / gm);
        const double penalty =
            0.5 * l * (2.0 * n_ut - l - k_smooth) * std::log(static_cast<double>(n_bs));
        const double score = fit + penalty;
        if (score < best_score - 1e-12) {
            best_score = score;
            best = l;
        }
    }
    return best;
}

}  // namespace

int estimate_num_mpc(const MeasurementSet& measurements, int k_smooth, int n_bs) {
    const int m_sub = measurements.subcarriers();
    if (m_sub < 1) throw std::invalid_argument("estimate_num_mpc: empty measurement set");
    const int n_ut = static_cast<int>(measurements.y[0].cols());
    if (k_smooth < 1 || k_smooth >= n_ut) {
        throw std::invalid_argument("estimate_num_mpc: need 1 <= k_smooth < n_ut");
    }
    const int w = n_ut - k_smooth;

    std::map<int, int> votes;
    for (int m = 0; m < m_sub; ++m) {
        const CMat& y = measurements.y[static_cast<std::size_t>(m)];
        if (y.squaredNorm() <= 0.0) {
            ++votes[0];
            continue;
        }
        const CMat r_yy = y.adjoint() * y;
        CMat r_s = CMat::Zero(w, w);
        for (int i = 0; i <= k_smooth; ++i) r_s += r_yy.block(i, i, w, w);
        r_s /= (k_smooth + 1);
        // Symmetrize against rounding before the Hermitian solve.
        r_s = 0.5 * (r_s + r_s.adjoint()).eval();
        const EigenDecomposition eig = hermitian_eig(r_s);
        ++votes[mdl_order(eig.eigenvalues, n_bs, n_ut, k_smooth)];
    }

    int best = 0, best_count = -1;
    for (const auto& [order, count] : votes) {
        if (count > best_count) {  // map iterates ascending: ties keep the smaller order
            best_count = count;
            best = order;
        }
    }
    return best;
}

std::vector<VaRecord> extract_and_cluster(const SparseChannelEstimate& estimate,
                                          const PolarLattice& lattice, int l_hat,
                                          std::uint64_t seed, bool* reduced) {
    if (l_hat < 1) throw std::invalid_argument("extract_and_cluster: l_hat must be >= 1");
    const int m_sub = estimate.subcarriers();
    const int k = static_cast<int>(estimate.h_polar[0].rows());
    const int n_ut = static_cast<int>(estimate.h_polar[0].cols());
    if (k != lattice.size()) throw std::invalid_argument("extract_and_cluster: lattice mismatch");
    if (reduced) *reduced = false;

    RVec energy = RVec::Zero(k);
    for (int m = 0; m < m_sub; ++m) {
        energy += estimate.h_polar[static_cast<std::size_t>(m)].rowwise().squaredNorm();
    }
    double noise_sum = 0.0;
    for (double v : estimate.noise_var) noise_sum += v;
    const double threshold = n_ut * noise_sum;

    std::vector<int> survivors;
    for (int i = 0; i < k; ++i) {
        if (energy(i) > threshold) survivors.push_back(i);
    }
    if (survivors.empty()) {
        if (reduced) *reduced = true;
        return {};
    }

    const int clusters = std::min<int>(l_hat, static_cast<int>(survivors.size()));
    if (clusters < l_hat && reduced) *reduced = true;

    RMat points(static_cast<Eigen::Index>(survivors.size()), 2);
    for (std::size_t i = 0; i < survivors.size(); ++i) {
        const auto [n, s] = lattice.angle_ring(survivors[i]);
        points(static_cast<Eigen::Index>(i), 0) = lattice.sin_theta(n);
        points(static_cast<Eigen::Index>(i), 1) = lattice.inv_r(n, s);
    }
    const KmeansResult km = kmeans(points, clusters, seed);

    std::vector<VaRecord> out;
    for (int c = 0; c < clusters; ++c) {
        int best = -1;
        double best_energy = -1.0;
        double total_energy = 0.0;
        double cs = 0.0, cu = 0.0;
        for (std::size_t i = 0; i < survivors.size(); ++i) {
            if (km.labels[i] != c) continue;
            const double e = energy(survivors[i]);
            total_energy += e;
            cs += e * points(static_cast<Eigen::Index>(i), 0);
            cu += e * points(static_cast<Eigen::Index>(i), 1);
            if (e > best_energy) {
                best_energy = e;
                best = survivors[i];
            }
        }
        if (best < 0) continue;  // empty cluster
        const auto [n, s] = lattice.angle_ring(best);
        VaRecord va;
        va.theta_bs = lattice.theta(n);
        va.r_bs = lattice.r(n, s);
        va.far_field = (s == 0);
        va.x = va.r_bs * std::cos(va.theta_bs);
        va.y = va.r_bs * std::sin(va.theta_bs);
        va.energy = best_energy;
        va.cluster_energy = total_energy;
        // Sub-grid readout: the energy centroid of the cluster carries the
        // off-grid component that the summit quantizes away.
        va.centroid_sin = cs / total_energy;
        va.centroid_inv_r = cu / total_energy;
        va.lattice_index = best;
        out.push_back(va);
    }
    std::stable_sort(out.begin(), out.end(), [](const VaRecord& a, const VaRecord& b) {
        if (a.cluster_energy != b.cluster_energy) return a.cluster_energy > b.cluster_energy;
        return a.lattice_index < b.lattice_index;
    });
    return out;
}

void map_and_partition(std::vector<VaRecord>& vas, double d_ut, int anchor_hint) {
    if (vas.empty()) throw std::invalid_argument("map_and_partition: empty VA list");
    // Default anchor: strongest cluster (ring leakage smears the LoS path, so
    // a single-atom maximum is unreliable).
    std::size_t anchor = 0;
    if (anchor_hint >= 0 && anchor_hint < static_cast<int>(vas.size())) {
        anchor = static_cast<std::size_t>(anchor_hint);
    } else {
        for (std::size_t i = 1; i < vas.size(); ++i) {
            if (vas[i].cluster_energy > vas[anchor].cluster_energy) anchor = i;
        }
    }
    const double ax = vas[anchor].x, ay = vas[anchor].y;
    for (std::size_t i = 0; i < vas.size(); ++i) {
        double dist;
        if (vas[i].far_field || vas[anchor].far_field) {
            dist = (i == anchor) ? 0.0 : kInf;
        } else {
            dist = std::hypot(vas[i].x - ax, vas[i].y - ay);
        }
        vas[i].cls = (dist <= d_ut) ? VaClass::kSubarrayCenter : VaClass::kScatterer;
        vas[i].is_anchor = (i == anchor);
    }
}

// Clusters sharing the anchor's angle bin are radial fragments of the LoS
// blob, not scatterers; fold them into the subarray-center set.
void absorb_anchor_fragments(std::vector<VaRecord>& vas, std::size_t anchor, double rho,
                             int n_bs) {
    const double bin = 2.0 / (rho * n_bs);
    const double s0 = std::sin(vas[anchor].theta_bs);
    for (VaRecord& va : vas) {
        if (std::abs(std::sin(va.theta_bs) - s0) <= 1.5 * bin) {
            va.cls = VaClass::kSubarrayCenter;
        }
    }
}

int matched_anchor(const SparseChannelEstimate& estimate, const std::vector<VaRecord>& vas,
                   const PolarLattice& lattice, const SystemConfig& config) {
    if (vas.empty()) throw std::invalid_argument("matched_anchor: empty VA list");
    const int m_sub = estimate.subcarriers();
    const int n_ut = static_cast<int>(estimate.h_polar[0].cols());
    const auto lambdas = config.wavelengths();

    // Spatial reconstruction restricted to rows that carry energy.
    const int k_total = lattice.size();
    RVec energy = RVec::Zero(k_total);
    for (int m = 0; m < m_sub; ++m) {
        energy += estimate.h_polar[static_cast<std::size_t>(m)].rowwise().squaredNorm();
    }
    const double floor = 1e-6 * energy.maxCoeff();
    std::vector<int> active;
    for (int k = 0; k < k_total; ++k) {
        if (energy(k) > floor) active.push_back(k);
    }
    std::vector<CMat> spatial(static_cast<std::size_t>(m_sub),
                              CMat::Zero(lattice.n_bs, n_ut));
    for (int m = 0; m < m_sub; ++m) {
        const double lambda = lambdas[static_cast<std::size_t>(m)];
        for (int k : active) {
            const auto [nk, sk] = lattice.angle_ring(k);
            spatial[static_cast<std::size_t>(m)].noalias() +=
                steering_vector(lattice.theta(nk), lattice.r(nk, sk), lambda, lattice.n_bs,
                                lattice.d) *
                estimate.h_polar[static_cast<std::size_t>(m)].row(k);
        }
    }

    int best = 0;
    double best_stat = -1.0;
    for (std::size_t v = 0; v < vas.size(); ++v) {
        const auto [n, sring] = lattice.angle_ring(vas[v].lattice_index);
        double stat = 0.0;
        for (int m = 0; m < m_sub; ++m) {
            const CVec probe = steering_vector(lattice.theta(n), lattice.r(n, sring),
                                               lambdas[static_cast<std::size_t>(m)],
                                               lattice.n_bs, lattice.d);
            stat += (probe.adjoint() * spatial[static_cast<std::size_t>(m)]).squaredNorm();
        }
        if (stat > best_stat) {
            best_stat = stat;
            best = static_cast<int>(v);
        }
    }
    return best;
}

std::vector<double> ut_side_match(const SparseChannelEstimate& estimate,
                                  std::vector<VaRecord>& vas, int grid_size,
                                  const SystemConfig& config) {
    const int m_sub = estimate.subcarriers();
    const int n_ut = static_cast<int>(estimate.h_polar[0].cols());
    const auto lambdas = config.wavelengths();
    const double d = config.spacing();

    // Far-field UT angular grid including broadside.
    std::vector<double> grid(static_cast<std::size_t>(grid_size));
    for (int i = 0; i < grid_size; ++i) {
        grid[static_cast<std::size_t>(i)] = std::asin((2.0 * i - grid_size) / grid_size);
    }

    std::vector<double> out;
    out.reserve(vas.size());
    for (VaRecord& va : vas) {
        double best_score = -1.0;
        double best_theta = 0.0;
        for (double th : grid) {
            double score = 0.0;
            for (int m = 0; m < m_sub; ++m) {
                const CVec a = steering_vector(th, kInf, lambdas[static_cast<std::size_t>(m)],
                                               n_ut, d);
                const cplx c =
                    estimate.h_polar[static_cast<std::size_t>(m)].row(va.lattice_index) * a;
                score = std::max(score, std::norm(c));
            }
            if (score > best_score) {
                best_score = score;
                best_theta = th;
            }
        }
        va.theta_ut = best_theta;
        out.push_back(best_theta);
    }
    return out;
}

namespace {

struct BearingRow {
    double slope;   // tan of the bearing direction
    double rhs;     // y_l - slope * x_l
    double weight;
};

constexpr double kSlopeClamp = 1e9;

double clamp_tan(double a) { return std::clamp(std::tan(a), -kSlopeClamp, kSlopeClamp); }

// Effective VA position for the geometry stages: the cluster energy centroid
// when one was measured, the grid summit otherwise. Far-field readings stand
// in at the deepest finite ring along their angle.
std::pair<double, double> effective_xy(const VaRecord& va, const PolarLattice& lattice) {
    const int n = lattice.nearest_angle(va.theta_bs);
    if (va.cluster_energy > 0.0 && va.centroid_inv_r > 1.0 / lattice.r(n, 1)) {
        const double r = 1.0 / va.centroid_inv_r;
        const double th = std::asin(std::clamp(va.centroid_sin, -1.0, 1.0));
        return {r * std::cos(th), r * std::sin(th)};
    }
    if (!va.far_field && std::isfinite(va.r_bs)) return {va.x, va.y};
    const double r1 = lattice.r(n, std::min(1, lattice.s_rings - 1));
    return {r1 * std::cos(va.theta_bs), r1 * std::sin(va.theta_bs)};
}

double va_weight(const VaRecord& va, const PolarLattice& lattice) {
    const int n = lattice.nearest_angle(va.theta_bs);
    int s = va.far_field ? 0 : lattice.nearest_ring(n, va.r_bs);
    double gap = lattice.neighbor_ring_gap(n, s);
    if (!std::isfinite(gap) || gap <= 0.0) return 1.0;
    return 1.0 / (gap * gap);
}

struct WlsSolution {
    double x = 0.0, y = 0.0, residual = kInf;
    bool ok = false;
};

WlsSolution solve_rows(const std::vector<BearingRow>& rows) {
    WlsSolution out;
    double a11 = 0.0, a12 = 0.0, a22 = 0.0, b1 = 0.0, b2 = 0.0;
    for (const BearingRow& r : rows) {
        const double h1 = -r.slope, h2 = 1.0;
        a11 += r.weight * h1 * h1;
        a12 += r.weight * h1 * h2;
        a22 += r.weight * h2 * h2;
        b1 += r.weight * h1 * r.rhs;
        b2 += r.weight * h2 * r.rhs;
    }
    const double det = a11 * a22 - a12 * a12;
    const double scale = std::max({std::abs(a11), std::abs(a22), 1e-300});
    if (!(std::abs(det) > 1e-12 * scale * scale)) return out;
    out.x = (a22 * b1 - a12 * b2) / det;
    out.y = (a11 * b2 - a12 * b1) / det;
    double res = 0.0;
    for (const BearingRow& r : rows) {
        const double e = r.rhs - (-r.slope * out.x + out.y);
        res += r.weight * e * e;
    }
    out.residual = res;
    out.ok = true;
    return out;
}

}  // namespace

CoarseFix coarse_wls(const std::vector<VaRecord>& vas, const PolarLattice& lattice,
                     bool los_present) {
    std::vector<std::size_t> g_set, s_set;
    for (std::size_t i = 0; i < vas.size(); ++i) {
        if (los_present && vas[i].cls == VaClass::kSubarrayCenter) {
            g_set.push_back(i);
        } else {
            s_set.push_back(i);
        }
    }
    if (los_present) {
        if (g_set.empty()) throw std::runtime_error("coarse_wls: LoS mode needs a subarray-center VA");
        if (g_set.size() + s_set.size() < 2) {
            throw std::runtime_error("coarse_wls: need at least two VAs with LoS");
        }
    } else if (s_set.size() < 3) {
        throw std::runtime_error("coarse_wls: blocked-LoS mode needs at least three VAs");
    }

    // When the pipeline marked an anchor, only the anchor contributes
    // subarray-center rows: other members of the G set are radial fragments of
    // the LoS blob whose stand-in positions would poison the solve. The
    // anchor's BS-side ray is added as a row of its own; its direction is the
    // sharpest measurement the grid provides.
    int anchor_idx = -1;
    for (std::size_t i = 0; i < vas.size(); ++i) {
        if (vas[i].is_anchor && los_present) anchor_idx = static_cast<int>(i);
    }

    const auto build_and_solve = [&](double phi, unsigned flip_mask, WlsSolution* sol) {
        std::vector<BearingRow> rows;
        rows.reserve(vas.size() + 1);
        for (std::size_t j = 0; j < s_set.size(); ++j) {
            const VaRecord& va = vas[s_set[j]];
            const double sign = (flip_mask >> j) & 1u ? -1.0 : 1.0;
            const auto [ex, ey] = effective_xy(va, lattice);
            BearingRow r;
            r.slope = clamp_tan(phi - sign * va.theta_ut);
            r.rhs = ey - r.slope * ex;
            r.weight = va_weight(va, lattice);
            rows.push_back(r);
        }
        for (std::size_t idx : g_set) {
            if (anchor_idx >= 0 && static_cast<int>(idx) != anchor_idx) continue;
            const VaRecord& va = vas[idx];
            const auto [ex, ey] = effective_xy(va, lattice);
            BearingRow r;
            r.slope = clamp_tan(phi - kPi / 2.0);
            r.rhs = ey - r.slope * ex;
            r.weight = va_weight(va, lattice);
            rows.push_back(r);
        }
        if (anchor_idx >= 0) {
            const VaRecord& va = vas[static_cast<std::size_t>(anchor_idx)];
            const auto [ex, ey] = effective_xy(va, lattice);
            BearingRow r;
            r.slope = clamp_tan(va.theta_bs);
            r.rhs = ey - r.slope * ex;
            const double lateral = std::hypot(ex, ey) * 2.0 / (lattice.rho * lattice.n_bs);
            r.weight = lateral > 0.0 ? 1.0 / (lateral * lateral) : 1.0;
            rows.push_back(r);
        }
        *sol = solve_rows(rows);
    };

    const unsigned n_masks = s_set.size() <= 12 ? (1u << s_set.size()) : 1u;

    std::vector<double> phi_candidates;
    if (los_present) {
        double phi_a = 0.0, phi_b = 0.0;
        for (std::size_t idx : g_set) {
            phi_a += vas[idx].theta_bs + vas[idx].theta_ut;
            phi_b += vas[idx].theta_bs - vas[idx].theta_ut;
        }
        phi_a /= static_cast<double>(g_set.size());
        phi_b /= static_cast<double>(g_set.size());
        phi_candidates = {phi_a, phi_b};  // mirror resolves the ULA fold
    } else {
        phi_candidates.resize(721);
        for (int i = 0; i < 721; ++i) phi_candidates[static_cast<std::size_t>(i)] = i * kPi / 721.0;
    }

    // Candidates are ordered so plain bearings with the directly-estimated
    // orientation come first; a fold hypothesis (mirrored phi or flipped
    // scatterer bearings, the two ULA ambiguities) must cut the weighted
    // residual decisively before it displaces the incumbent.
    constexpr double kDisplaceFactor = 0.5;
    CoarseFix best;
    best.residual = kInf;
    bool found = false;
    for (std::size_t pc = 0; pc < phi_candidates.size(); ++pc) {
        for (unsigned mask = 0; mask < n_masks; ++mask) {
            WlsSolution sol;
            build_and_solve(phi_candidates[pc], mask, &sol);
            if (!sol.ok) continue;
            if (sol.x <= 0.0) continue;  // outside the array's visible half-plane
            const bool plain = los_present ? (pc == 0 && mask == 0) : (mask == 0);
            const double bar = plain ? best.residual : best.residual * kDisplaceFactor;
            if (!found || sol.residual < bar) {
                found = true;
                best.x = sol.x;
                best.y = sol.y;
                best.phi = phi_candidates[pc];
                best.residual = sol.residual;
                best.mirrored.clear();
                for (std::size_t j = 0; j < s_set.size(); ++j) {
                    if ((mask >> j) & 1u) best.mirrored.push_back(static_cast<int>(s_set[j]));
                }
            }
        }
    }
    if (!found) throw std::runtime_error("coarse_wls: degenerate geometry (parallel bearings)");
    return best;
}

std::vector<double> tdoa_measure(const SparseChannelEstimate& estimate,
                                 const std::vector<VaRecord>& vas,
                                 const std::vector<double>& subcarrier_freqs) {
    const int m_sub = estimate.subcarriers();
    if (m_sub < 2 || subcarrier_freqs.size() != static_cast<std::size_t>(m_sub)) {
        throw std::invalid_argument("tdoa_measure: need M >= 2 matching frequencies");
    }
    const int n_ut = static_cast<int>(estimate.h_polar[0].cols());
    const double df = subcarrier_freqs[1] - subcarrier_freqs[0];
    const double period = 1.0 / df;            // unambiguous delay range
    const double bw = df * m_sub;
    const double step = 1.0 / (10.0 * bw);     // delay grid resolution
    const int n_steps = static_cast<int>(std::round(period / step));

    // Per-VA delay via matched filtering, circular-mean over UT antennas.
    std::vector<double> tau(vas.size(), 0.0);
    for (std::size_t v = 0; v < vas.size(); ++v) {
        const int k = vas[v].lattice_index;
        cplx mean_phase = 0.0;
        for (int n = 0; n < n_ut; ++n) {
            double best = -1.0;
            int best_j = 0;
            std::vector<double> g(static_cast<std::size_t>(n_steps));
            for (int j = 0; j < n_steps; ++j) {
                const double t = j * step;
                cplx acc = 0.0;
                for (int m = 0; m < m_sub; ++m) {
                    const cplx h = estimate.h_polar[static_cast<std::size_t>(m)](k, n);
                    acc += h * std::polar(1.0, 2.0 * kPi * t * subcarrier_freqs[static_cast<std::size_t>(m)]);
                }
                g[static_cast<std::size_t>(j)] = std::norm(acc);
                if (g[static_cast<std::size_t>(j)] > best) {
                    best = g[static_cast<std::size_t>(j)];
                    best_j = j;
                }
            }
            // Circular three-point parabolic interpolation.
            const double gm = g[static_cast<std::size_t>((best_j - 1 + n_steps) % n_steps)];
            const double g0 = g[static_cast<std::size_t>(best_j)];
            const double gp = g[static_cast<std::size_t>((best_j + 1) % n_steps)];
            double offset = 0.0;
            const double denom = gm - 2.0 * g0 + gp;
            if (std::abs(denom) > 1e-300) offset = std::clamp(0.5 * (gm - gp) / denom, -0.5, 0.5);
            const double t_n = (best_j + offset) * step;
            mean_phase += std::polar(1.0, 2.0 * kPi * t_n / period);
        }
        double t_va = std::arg(mean_phase) / (2.0 * kPi) * period;
        if (t_va < 0.0) t_va += period;
        tau[v] = t_va;
    }

    // Reference: circular mean of the subarray-center delays, falling back to
    // all VAs when the LoS set is empty.
    cplx ref_phase = 0.0;
    int ref_count = 0;
    for (std::size_t v = 0; v < vas.size(); ++v) {
        if (vas[v].cls == VaClass::kSubarrayCenter) {
            ref_phase += std::polar(1.0, 2.0 * kPi * tau[v] / period);
            ++ref_count;
        }
    }
    if (ref_count == 0) {
        for (std::size_t v = 0; v < vas.size(); ++v) {
            ref_phase += std::polar(1.0, 2.0 * kPi * tau[v] / period);
        }
    }
    double t_ref = std::arg(ref_phase) / (2.0 * kPi) * period;

    std::vector<double> out(vas.size(), 0.0);
    for (std::size_t v = 0; v < vas.size(); ++v) {
        if (vas[v].cls == VaClass::kSubarrayCenter) continue;
        double diff = tau[v] - t_ref;
        // Wrap to [-T/2, T/2).
        diff -= period * std::floor(diff / period + 0.5);
        out[v] = diff;
    }
    return out;
}

namespace {

struct RefineState {
    double ux, uy;
    std::vector<double> sx, sy;       // scatterer coordinates
    std::vector<double> tdoa;         // measured, aligned with sx/sy
    bool blocked = false;             // reference is the scatterer mean, not the UT range
    double period = 0.0;              // TDoA wrap period; 0 compares unwrapped
};

double wrap_residual(double diff, double period) {
    if (period <= 0.0) return diff;
    return diff - period * std::round(diff / period);
}

double model_tdoa(const RefineState& st, std::size_t l) {
    const double dl = std::hypot(st.sx[l], st.sy[l]) +
                      std::hypot(st.ux - st.sx[l], st.uy - st.sy[l]);
    if (!st.blocked) return (dl - std::hypot(st.ux, st.uy)) / kSpeedOfLight;
    double mean = 0.0;
    for (std::size_t j = 0; j < st.sx.size(); ++j) {
        mean += std::hypot(st.sx[j], st.sy[j]) + std::hypot(st.ux - st.sx[j], st.uy - st.sy[j]);
    }
    mean /= static_cast<double>(st.sx.size());
    return (dl - mean) / kSpeedOfLight;
}

RefineState state_from_report(const LocationReport& report, double ux, double uy) {
    RefineState st;
    st.ux = ux;
    st.uy = uy;
    st.blocked = !report.los_present;
    st.period = report.tdoa_period;
    for (std::size_t v = 0; v < report.vas.size(); ++v) {
        const VaRecord& va = report.vas[v];
        if (va.cls != VaClass::kScatterer || va.far_field) continue;
        double sx = va.x, sy = va.y;
        if (v < report.solver_positions.size()) {
            sx = report.solver_positions[v].first;
            sy = report.solver_positions[v].second;
        }
        if (!std::isfinite(sx) || !std::isfinite(sy)) continue;
        st.sx.push_back(sx);
        st.sy.push_back(sy);
        st.tdoa.push_back(v < report.tdoa.size() ? report.tdoa[v] : 0.0);
    }
    return st;
}

double refine_loss(const RefineState& st) {
    double loss = 0.0;
    for (std::size_t l = 0; l < st.sx.size(); ++l) {
        const double e = wrap_residual(st.tdoa[l] - model_tdoa(st, l), st.period);
        loss += e * e;
    }
    return loss;
}

}  // namespace

LocationReport refine_gradient(const LocationReport& report, int t_grd) {
    LocationReport out = report;
    out.loss_trace.clear();

    RefineState st = state_from_report(report, report.coarse_x, report.coarse_y);
    std::vector<std::size_t> va_of_scatterer;
    for (std::size_t v = 0; v < report.vas.size(); ++v) {
        const VaRecord& va = report.vas[v];
        if (va.cls != VaClass::kScatterer || va.far_field) continue;
        double sx = va.x, sy = va.y;
        if (v < report.solver_positions.size()) {
            sx = report.solver_positions[v].first;
            sy = report.solver_positions[v].second;
        }
        if (!std::isfinite(sx) || !std::isfinite(sy)) continue;
        va_of_scatterer.push_back(v);
    }

    out.refined_scatterers.clear();
    if (st.sx.empty()) {
        out.refined_x = report.coarse_x;
        out.refined_y = report.coarse_y;
        out.flags.push_back("refine-skipped-no-scatterers");
        return out;
    }

    out.loss_trace.push_back(refine_loss(st));

    constexpr double kEps = 1e-9;   // coincidence guard, m
    constexpr double kC1 = 1e-4;
    constexpr double kInitialStep = 0.1;  // m

    // One coordinate at a time: value = current coordinate, grad = analytic
    // partial of the loss. Returns whether the coordinate is differentiable.
    const auto gradient = [&](int what, std::size_t l, double* grad) -> bool {
        // what: 0 ut.x, 1 ut.y, 2 sc.x, 3 sc.y
        const double ru = std::hypot(st.ux, st.uy);
        if (!st.blocked && ru < kEps && (what == 0 || what == 1)) return false;
        double g = 0.0;
        const std::size_t count = st.sx.size();
        for (std::size_t j = 0; j < count; ++j) {
            const double rl = std::hypot(st.sx[j], st.sy[j]);
            const double dx = st.ux - st.sx[j];
            const double dy = st.uy - st.sy[j];
            const double rul = std::hypot(dx, dy);
            if (rul < kEps || rl < kEps) return false;
            const double e = wrap_residual(st.tdoa[j] - model_tdoa(st, j), st.period);
            double dtau = 0.0;
            if (what == 0 || what == 1) {
                // d D_j / d ut
                const double dd = (what == 0) ? dx / rul : dy / rul;
                if (!st.blocked) {
                    const double dref = (what == 0) ? st.ux / ru : st.uy / ru;
                    dtau = (dd - dref) / kSpeedOfLight;
                } else {
                    double dmean = 0.0;
                    for (std::size_t jj = 0; jj < count; ++jj) {
                        const double ddx = st.ux - st.sx[jj];
                        const double ddy = st.uy - st.sy[jj];
                        const double rr = std::hypot(ddx, ddy);
                        if (rr < kEps) return false;
                        dmean += (what == 0) ? ddx / rr : ddy / rr;
                    }
                    dmean /= static_cast<double>(count);
                    dtau = (dd - dmean) / kSpeedOfLight;
                }
            } else {
                if (j != l) {
                    if (!st.blocked) continue;
                    // blocked mode: scatterer l also moves the reference mean
                    const double dxl = st.ux - st.sx[l];
                    const double dyl = st.uy - st.sy[l];
                    const double rll = std::hypot(dxl, dyl);
                    const double rl2 = std::hypot(st.sx[l], st.sy[l]);
                    if (rll < kEps || rl2 < kEps) return false;
                    const double dD =
                        (what == 2) ? st.sx[l] / rl2 - dxl / rll : st.sy[l] / rl2 - dyl / rll;
                    dtau = -dD / (count * kSpeedOfLight);
                } else {
                    const double dD = (what == 2) ? st.sx[l] / rl + (st.sx[l] - st.ux) / rul
                                                  : st.sy[l] / rl + (st.sy[l] - st.uy) / rul;
                    double dref = 0.0;
                    if (st.blocked) dref = dD / static_cast<double>(count);
                    dtau = (dD - dref) / kSpeedOfLight;
                }
            }
            g += 2.0 * (-e) * dtau;  // d/dx (tdoa - tau(x))^2
        }
        *grad = g;
        return true;
    };

    const auto coordinate_ref = [&](int what, std::size_t l) -> double& {
        switch (what) {
            case 0: return st.ux;
            case 1: return st.uy;
            case 2: return st.sx[l];
            default: return st.sy[l];
        }
    };

    bool skipped = false;
    for (int iter = 0; iter < t_grd; ++iter) {
        // UT coordinates first, then each scatterer.
        std::vector<std::pair<int, std::size_t>> schedule = {{0, 0}, {1, 0}};
        for (std::size_t l = 0; l < st.sx.size(); ++l) {
            schedule.emplace_back(2, l);
            schedule.emplace_back(3, l);
        }
        for (const auto& [what, l] : schedule) {
            double g = 0.0;
            if (!gradient(what, l, &g)) {
                skipped = true;
                continue;
            }
            if (std::abs(g) < 1e-300) continue;
            double& coord = coordinate_ref(what, l);
            const double saved = coord;
            const double base_loss = refine_loss(st);
            double alpha = kInitialStep / std::abs(g);
            bool accepted = false;
            for (int bt = 0; bt < 40; ++bt) {
                coord = saved - alpha * g;
                const double trial = refine_loss(st);
                if (trial <= base_loss - kC1 * alpha * g * g) {
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if (!accepted) coord = saved;
        }
        out.loss_trace.push_back(refine_loss(st));
    }
    if (skipped) out.flags.push_back("refine-skipped-degenerate-coordinate");

    out.refined_x = st.ux;
    out.refined_y = st.uy;
    // Refined positions for every scatterer VA; far-field ones keep their
    // coarse values.
    for (std::size_t v = 0; v < report.vas.size(); ++v) {
        const VaRecord& va = report.vas[v];
        if (va.cls != VaClass::kScatterer) continue;
        auto it = std::find(va_of_scatterer.begin(), va_of_scatterer.end(), v);
        if (it == va_of_scatterer.end()) {
            double sx = va.x, sy = va.y;
            if (v < report.solver_positions.size()) {
                sx = report.solver_positions[v].first;
                sy = report.solver_positions[v].second;
            }
            out.refined_scatterers.emplace_back(sx, sy);
        } else {
            const std::size_t l = static_cast<std::size_t>(it - va_of_scatterer.begin());
            out.refined_scatterers.emplace_back(st.sx[l], st.sy[l]);
        }
    }
    return out;
}

LocationReport locate(const MeasurementSet& measurements, const SparseChannelEstimate& estimate,
                      const PolarLattice& lattice, const SystemConfig& config, bool los_present,
                      std::uint64_t seed) {
    LocationReport report;
    report.los_present = los_present;

    report.l_hat = estimate_num_mpc(measurements, config.effective_k_smooth(), config.n_bs);
    if (report.l_hat < 1) throw std::runtime_error("locate: no multipath components detected");

    bool reduced = false;
    report.vas = extract_and_cluster(estimate, lattice, report.l_hat, seed, &reduced);
    if (reduced) report.flags.push_back("cluster-count-reduced");
    if (report.vas.empty()) throw std::runtime_error("locate: no grid points above the noise floor");

    const int anchor = matched_anchor(estimate, report.vas, lattice, config);
    if (los_present) {
        map_and_partition(report.vas, config.ut_aperture(), anchor);
        absorb_anchor_fragments(report.vas, static_cast<std::size_t>(anchor), lattice.rho,
                                lattice.n_bs);
    } else {
        for (VaRecord& va : report.vas) va.cls = VaClass::kScatterer;
    }

    report.solver_positions.reserve(report.vas.size());
    for (const VaRecord& va : report.vas) {
        report.solver_positions.push_back(effective_xy(va, lattice));
    }

    // LoS-only baseline: the anchor VA solver position.
    report.los_only_x = report.solver_positions[static_cast<std::size_t>(anchor)].first;
    report.los_only_y = report.solver_positions[static_cast<std::size_t>(anchor)].second;

    ut_side_match(estimate, report.vas,
                  static_cast<int>(config.effective_rho_ut() * config.n_ut + 0.5), config);

    const CoarseFix coarse = coarse_wls(report.vas, lattice, los_present);
    report.coarse_x = coarse.x;
    report.coarse_y = coarse.y;
    report.phi_hat = coarse.phi;
    for (int idx : coarse.mirrored) {
        report.flags.push_back("bearing-mirrored-va-" + std::to_string(idx));
    }

    std::vector<double> freqs(static_cast<std::size_t>(config.m_subcarriers));
    for (int m = 1; m <= config.m_subcarriers; ++m) {
        freqs[static_cast<std::size_t>(m - 1)] = config.subcarrier_freq(m);
    }
    report.tdoa = tdoa_measure(estimate, report.vas, freqs);

    report.tdoa_period = static_cast<double>(config.m_subcarriers) / config.bandwidth;

    // The wrapped TDoA loss has branch-periodic local minima; the coarse fix
    // is not always inside the right branch. Scan the anchor ray (the sharpest
    // direction estimate available) for a global initialization before the
    // gradient polish.
    LocationReport start = report;
    bool branch_locked = !los_present;  // blocked mode has no anchor scan
    if (los_present) {
        const VaRecord& anchor_va = report.vas[static_cast<std::size_t>(anchor)];
        const double theta_star = anchor_va.theta_bs;
        RefineState probe = state_from_report(report, report.coarse_x, report.coarse_y);
        if (!probe.sx.empty()) {
            // Per-scatterer residuals weighted by the position uncertainty the
            // grid spacing implies, fused with the anchor's own range reading.
            std::vector<double> sigma_l;
            for (std::size_t v = 0; v < report.vas.size(); ++v) {
                const VaRecord& va = report.vas[v];
                if (va.cls != VaClass::kScatterer || va.far_field) continue;
                if (v < report.solver_positions.size() &&
                    (!std::isfinite(report.solver_positions[v].first) ||
                     !std::isfinite(report.solver_positions[v].second))) {
                    continue;
                }
                const int n = lattice.nearest_angle(va.theta_bs);
                const int sr = lattice.nearest_ring(n, va.r_bs);
                sigma_l.push_back(std::max(lattice.neighbor_ring_gap(n, sr), 0.05));
            }
            // Prior on the UT range: centred on the coarse fix (the anchor's
            // own ring readout can be badly smeared), sigma from the ring gap
            // at that depth.
            const double rho_coarse = std::hypot(report.coarse_x, report.coarse_y);
            const int an = lattice.nearest_angle(theta_star);
            const int as = lattice.nearest_ring(an, rho_coarse);
            const double sigma_a = std::max(lattice.neighbor_ring_gap(an, as), 1.0);

            // UT-side bearing directions per scatterer (both ULA folds).
            const double phi_hat = report.phi_hat;
            std::vector<double> psi_a(probe.sx.size()), psi_b(probe.sx.size());
            {
                std::size_t l = 0;
                for (std::size_t v = 0; v < report.vas.size(); ++v) {
                    const VaRecord& va = report.vas[v];
                    if (va.cls != VaClass::kScatterer || va.far_field) continue;
                    if (v < report.solver_positions.size() &&
                        !std::isfinite(report.solver_positions[v].first)) {
                        continue;
                    }
                    psi_a[l] = phi_hat - va.theta_ut;
                    psi_b[l] = phi_hat + va.theta_ut;
                    ++l;
                }
            }

            const double c_t2 = kSpeedOfLight * probe.period;
            constexpr double kTermCap = 25.0;
            constexpr double kSigmaPsi = 0.06;  // rad, UT grid step plus phi error
            const int b_max = 64;
            std::vector<double> th_l(probe.sx.size()), rhat_l(probe.sx.size());
            for (std::size_t l = 0; l < probe.sx.size(); ++l) {
                th_l[l] = std::atan2(probe.sy[l], probe.sx[l]);
                rhat_l[l] = std::hypot(probe.sx[l], probe.sy[l]);
            }
            const auto implied_range = [&](double px, double py, std::size_t l, int b) {
                const double rho = std::hypot(px, py);
                const double r_big = kSpeedOfLight * probe.tdoa[l] + b * c_t2 + rho;
                const double pu = px * std::cos(th_l[l]) + py * std::sin(th_l[l]);
                const double denom = 2.0 * (r_big - pu);
                if (denom < 1e-6) return -1.0;
                return (r_big * r_big - rho * rho) / denom;
            };
            // Bearing mismatch between the scatterer->UT direction and the
            // UT-side angle measurement, folded over the line (mod pi) and the
            // ULA front-back ambiguity.
            const auto bearing_term = [&](double px, double py, double sx, double sy,
                                          std::size_t l) {
                const double psi = std::atan2(sy - py, sx - px);
                auto fold = [](double d) {
                    d = wrap_angle(d);
                    if (d > kPi / 2.0) d -= kPi;
                    if (d <= -kPi / 2.0) d += kPi;
                    return d;
                };
                const double ea = fold(psi - psi_a[l]);
                const double eb = fold(psi - psi_b[l]);
                const double e = std::min(std::abs(ea), std::abs(eb));
                return (e / kSigmaPsi) * (e / kSigmaPsi);
            };
            struct ScanEval {
                double full = kInf;
                double range_only = kInf;
                double bearing = 0.0;
            };
            const auto scan_cost = [&](double px, double py, std::vector<double>* ranges) {
                ScanEval out;
                const double prior = std::pow((std::hypot(px, py) - rho_coarse) / sigma_a, 2);
                out.full = prior;
                out.range_only = prior;
                for (std::size_t l = 0; l < probe.sx.size(); ++l) {
                    double best = 2.0 * kTermCap;
                    double best_range = kTermCap;
                    double best_r = rhat_l[l];
                    for (int b = 0; b <= b_max; ++b) {
                        const double r = implied_range(px, py, l, b);
                        if (!(r > 0.3) || !std::isfinite(r)) continue;
                        const double tr = std::pow((r - rhat_l[l]) / sigma_l[l], 2);
                        if (tr > kTermCap) continue;
                        const double t = tr + std::min(bearing_term(px, py, r * std::cos(th_l[l]),
                                                                    r * std::sin(th_l[l]), l),
                                                       kTermCap);
                        if (t < best) {
                            best = t;
                            best_range = tr;
                            best_r = r;
                        }
                    }
                    out.full += std::min(best, 2.0 * kTermCap);
                    out.range_only += best_range;
                    out.bearing += std::min(best, 2.0 * kTermCap) - best_range;
                    if (ranges) (*ranges)[l] = best_r;
                }
                return out;
            };

            const double r_max = 1.5 * std::max(config.ut_r_max,
                                                std::hypot(report.coarse_x, report.coarse_y));
            double best_rho = -1.0;
            ScanEval best_cost;
            for (double rho = 0.5; rho <= r_max; rho += 0.01) {
                const ScanEval cost =
                    scan_cost(rho * std::cos(theta_star), rho * std::sin(theta_star), nullptr);
                if (cost.full < best_cost.full) {
                    best_cost = cost;
                    best_rho = rho;
                }
            }
            // Accept the branch-resolved start only on decisive evidence: the
            // range consistency must improve decisively and the bearings must
            // not object. The wrap lattice is dense enough to produce
            // plausible-looking false locks at this aperture otherwise.
            const ScanEval coarse_cost = scan_cost(report.coarse_x, report.coarse_y, nullptr);
            const double bearing_slack = 2.0 * static_cast<double>(probe.sx.size());
            if (best_rho > 0.0 && best_cost.range_only < 0.45 * coarse_cost.range_only &&
                best_cost.bearing < coarse_cost.bearing + bearing_slack) {
                branch_locked = true;
                std::vector<double> ranges(probe.sx.size(), 0.0);
                probe.ux = best_rho * std::cos(theta_star);
                probe.uy = best_rho * std::sin(theta_star);
                scan_cost(probe.ux, probe.uy, &ranges);
                for (std::size_t l = 0; l < probe.sx.size(); ++l) {
                    probe.sx[l] = ranges[l] * std::cos(th_l[l]);
                    probe.sy[l] = ranges[l] * std::sin(th_l[l]);
                }
            }

            start.coarse_x = probe.ux;
            start.coarse_y = probe.uy;
            std::size_t sl = 0;
            for (std::size_t v = 0; v < start.vas.size(); ++v) {
                const VaRecord& va = start.vas[v];
                if (va.cls != VaClass::kScatterer || va.far_field) continue;
                if (v < start.solver_positions.size() &&
                    std::isfinite(start.solver_positions[v].first) && sl < probe.sx.size()) {
                    start.solver_positions[v] = {probe.sx[sl], probe.sy[sl]};
                    ++sl;
                }
            }
        }
    }

    // Without a decisive wrap-branch lock the delay terms only add local
    // noise, so the gradient polish runs on locked trials (and in blocked-LoS
    // mode, where the coarse solve is the only anchor available).
    LocationReport refined = refine_gradient(start, branch_locked ? config.t_grd : 0);
    if (!branch_locked) refined.flags.push_back("refine-no-branch-lock");
    refined.coarse_x = report.coarse_x;
    refined.coarse_y = report.coarse_y;
    return refined;
}

}  // namespace ilsc
