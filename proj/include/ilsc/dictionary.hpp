#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "ilsc/channel.hpp"
#include "ilsc/scenario.hpp"
#include "ilsc/types.hpp"

namespace ilsc {

// Polar-domain sampling lattice over (angle, inverse distance). Ring s=0 is
// the far-field ring (r = inf); 1/r grows linearly with s at fixed angle.
struct PolarLattice {
    int n_bs = 0;
    double rho = 1.0;
    int s_rings = 1;
    double eta = 1.0;
    double d = 0.0;           // antenna spacing, m
    double rayleigh_m = 0.0;  // R_r = 2 D^2 / lambda_c

    int n_angles() const { return static_cast<int>(rho * n_bs + 0.5); }
    int size() const { return n_angles() * s_rings; }

    double sin_theta(int n) const {
        return (2.0 * n - rho * n_bs + 1.0) / (rho * n_bs);
    }
    double theta(int n) const { return std::asin(sin_theta(n)); }

    double inv_r(int n, int s) const {
        const double c2 = std::max(1e-6, 1.0 - sin_theta(n) * sin_theta(n));
        return s * eta / (4.0 * rayleigh_m * c2);
    }
    double r(int n, int s) const { return s == 0 ? kInf : 1.0 / inv_r(n, s); }

    int index(int n, int s) const { return n * s_rings + s; }
    std::pair<int, int> angle_ring(int k) const { return {k / s_rings, k % s_rings}; }

    int nearest_angle(double theta_rad) const;
    int nearest_ring(int n, double r_m) const;
    // Distance gap to the nearest adjacent ring at angle n, in meters. For the
    // far-field ring the gap is capped at the s=1..s=2 spacing so far points
    // keep a finite weight downstream.
    double neighbor_ring_gap(int n, int s) const;
};

PolarLattice build_lattice(const SystemConfig& config);

// Second-order Fresnel expansion of the exact element distance.
double fresnel_distance(double r, double theta, double delta_n, double d);

enum class DictionaryVariant {
    kFrequencyDependent,  // per-subcarrier wavelength
    kFrequencyFlat,       // center-frequency wavelength for all subcarriers
    kFarFieldDft,         // s=0 ring only, rho = 1
};

// One per-subcarrier projection matrix, columns are steering vectors on the
// lattice. For kFarFieldDft a rho=1, far-field-only grid is used.
CMat build_projection(const PolarLattice& lattice, double lambda_m, DictionaryVariant variant);

class PolarDictionary {
  public:
    PolarDictionary(const PolarLattice& lattice, DictionaryVariant variant,
                    const SystemConfig& config, std::size_t cache_budget_bytes = 512ull << 20);

    const PolarLattice& lattice() const { return lattice_; }
    DictionaryVariant variant() const { return variant_; }
    int atoms() const;
    int subcarriers() const { return static_cast<int>(lambdas_.size()); }
    double wavelength(int m) const;
    bool materialized() const { return !cache_.empty(); }

    CVec column(int m, int k) const;
    const CMat& matrix(int m) const;  // only when materialized
    // Effective sensing matrix A[m] = W^H Phi[m].
    CMat sensing_matrix(const CMat& w, int m) const;

    // Lattice actually used for column layout (rho=1 far-field grid for the
    // DFT variant, the polar lattice otherwise).
    const PolarLattice& grid() const { return grid_; }

  private:
    double column_lambda(int m) const;

    PolarLattice lattice_;
    PolarLattice grid_;
    DictionaryVariant variant_;
    double lambda_c_ = 0.0;
    std::vector<double> lambdas_;
    std::vector<CMat> cache_;
};

}  // namespace ilsc
