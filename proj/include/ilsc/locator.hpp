#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ilsc/dictionary.hpp"
#include "ilsc/estimator.hpp"
#include "ilsc/pilot.hpp"
#include "ilsc/types.hpp"

namespace ilsc {

enum class VaClass { kSubarrayCenter, kScatterer };

struct VaRecord {
    double theta_bs = 0.0;   // grid angle, rad
    double r_bs = 0.0;       // grid distance, m (inf on the far-field ring)
    double x = 0.0, y = 0.0; // (r cos, r sin)
    double energy = 0.0;         // summit atom energy
    double cluster_energy = 0.0; // total energy of the cluster the VA summits
    double centroid_sin = 0.0;   // cluster energy centroid, sin(theta)
    double centroid_inv_r = 0.0; // cluster energy centroid, 1/r
    double theta_ut = 0.0;   // UT-side angle, filled by ut_side_match
    VaClass cls = VaClass::kScatterer;
    bool is_anchor = false;  // the subarray-center VA the partition anchored on
    bool far_field = false;
    int lattice_index = -1;
};

struct CoarseFix {
    double x = 0.0, y = 0.0;
    double phi = 0.0;       // UT broadside direction, mod pi
    double residual = 0.0;  // weighted residual at the solution
    std::vector<int> mirrored;  // scatterer VA indices whose bearing was flipped
};

struct LocationReport {
    int l_hat = 0;
    std::vector<VaRecord> vas;
    bool los_present = true;
    double coarse_x = 0.0, coarse_y = 0.0, phi_hat = 0.0;
    double los_only_x = 0.0, los_only_y = 0.0;  // anchor VA position
    std::vector<double> tdoa;  // aligned with vas; zero for subarray centers
    double tdoa_period = 0.0;  // unambiguous TDoA range M/BW; 0 disables rewrapping
    // Positions the geometry stages actually solve with (cluster centroids,
    // stand-ins for far-field readings); aligned with vas.
    std::vector<std::pair<double, double>> solver_positions;
    double refined_x = 0.0, refined_y = 0.0;
    std::vector<std::pair<double, double>> refined_scatterers;  // per scatterer VA order
    std::vector<double> loss_trace;
    std::vector<std::string> flags;
};

// MDL path count from the spatially-smoothed UT-side covariance, fused over
// subcarriers by the mode. n_bs enters the description-length penalty.
// All-zero input returns 0.
int estimate_num_mpc(const MeasurementSet& measurements, int k_smooth, int n_bs);

// Thresholds grid energies against the learned noise floor, clusters survivors
// in (sin theta, 1/r) with k-means, and returns each cluster's summit. When
// fewer grid points survive than l_hat the cluster count shrinks (reduced set).
std::vector<VaRecord> extract_and_cluster(const SparseChannelEstimate& estimate,
                                          const PolarLattice& lattice, int l_hat,
                                          std::uint64_t seed, bool* reduced = nullptr);

// Splits VAs into subarray centers (within d_ut of the strongest VA) and
// scatterers. anchor_hint overrides the strongest-cluster anchor choice.
void map_and_partition(std::vector<VaRecord>& vas, double d_ut, int anchor_hint = -1);

// Index of the VA with the largest matched-filter energy against the
// reconstructed spatial estimate. The LoS path keeps its full coherent energy
// under this statistic even when ring leakage splits its grid cluster.
int matched_anchor(const SparseChannelEstimate& estimate, const std::vector<VaRecord>& vas,
                   const PolarLattice& lattice, const SystemConfig& config);

// UT-side angle per VA via a far-field matching-pursuit scan over grid_size
// angles. Writes theta_ut into the records and returns the angles.
std::vector<double> ut_side_match(const SparseChannelEstimate& estimate,
                                  std::vector<VaRecord>& vas, int grid_size,
                                  const SystemConfig& config);

// Weighted least-squares bearing intersection. With LoS, phi comes from the
// subarray-center set; without LoS (empty G set) phi is found by a 721-point
// scan over [0, pi). ULA front-back ambiguity is resolved per scatterer by
// keeping a bearing flip only when it strictly lowers the weighted residual.
// Throws std::runtime_error on degenerate geometry.
CoarseFix coarse_wls(const std::vector<VaRecord>& vas, const PolarLattice& lattice,
                     bool los_present);

// Per-scatterer TDoA against the subarray-center reference via a frequency-
// domain matched filter with parabolic peak interpolation. Values are wrapped
// to [-T/2, T/2) with T = M / bandwidth (the unambiguous range).
std::vector<double> tdoa_measure(const SparseChannelEstimate& estimate,
                                 const std::vector<VaRecord>& vas,
                                 const std::vector<double>& subcarrier_freqs);

// Coordinate-descent refinement of the UT and scatterer positions against the
// measured TDoAs with Armijo backtracking. The loss trace is recorded and
// non-increasing.
LocationReport refine_gradient(const LocationReport& report, int t_grd);

// Full location pipeline (Alg.-2-style): MDL, clustering, partition, UT-side
// angles, coarse w-LS, TDoA measurement + branch unwrap, gradient refinement.
LocationReport locate(const MeasurementSet& measurements, const SparseChannelEstimate& estimate,
                      const PolarLattice& lattice, const SystemConfig& config, bool los_present,
                      std::uint64_t seed);

}  // namespace ilsc
