#include "ilsc/dictionary.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ilsc {

int PolarLattice::nearest_angle(double theta_rad) const {
    const double s = std::sin(theta_rad);
    // sin(theta_n) = (2n - rho N + 1) / (rho N)
    const double n_real = (s * rho * n_bs + rho * n_bs - 1.0) / 2.0;
    const int n = static_cast<int>(std::lround(n_real));
    return std::clamp(n, 0, n_angles() - 1);
}

int PolarLattice::nearest_ring(int n, double r_m) const {
    if (std::isinf(r_m)) return 0;
    const double c2 = std::max(1e-6, 1.0 - sin_theta(n) * sin_theta(n));
    const double s_real = (1.0 / r_m) * 4.0 * rayleigh_m * c2 / eta;
    const int s = static_cast<int>(std::lround(s_real));
    return std::clamp(s, 0, s_rings - 1);
}

double PolarLattice::neighbor_ring_gap(int n, int s) const {
    if (s_rings < 2) return kInf;
    if (s <= 0) {
        // Far-field ring: cap at the first finite inter-ring spacing.
        if (s_rings < 3) return kInf;
        return std::abs(r(n, 1) - r(n, 2));
    }
    double gap = kInf;
    if (s + 1 < s_rings) gap = std::min(gap, std::abs(r(n, s) - r(n, s + 1)));
    if (s - 1 >= 1) gap = std::min(gap, std::abs(r(n, s) - r(n, s - 1)));
    if (gap == kInf) gap = std::abs(r(n, 1) - r(n, 2));
    return gap;
}

PolarLattice build_lattice(const SystemConfig& config) {
    config.validate();
    PolarLattice lat;
    lat.n_bs = config.n_bs;
    lat.rho = config.lattice.rho;
    lat.s_rings = config.lattice.s_rings;
    lat.eta = config.lattice.eta;
    lat.d = config.spacing();
    const double aperture = config.bs_aperture();
    lat.rayleigh_m = 2.0 * aperture * aperture / config.lambda_c();
    return lat;
}

double fresnel_distance(double r, double theta, double delta_n, double d) {
    if (r <= 0.0) throw std::domain_error("fresnel_distance: r must be positive");
    const double c = std::cos(theta);
    return r - delta_n * d * std::sin(theta) + delta_n * delta_n * d * d * c * c / (2.0 * r);
}

namespace {

PolarLattice dft_grid(const PolarLattice& lattice) {
    PolarLattice g = lattice;
    g.rho = 1.0;
    g.s_rings = 1;
    return g;
}

CMat projection_on_grid(const PolarLattice& grid, double lambda) {
    CMat phi(grid.n_bs, grid.size());
    for (int n = 0; n < grid.n_angles(); ++n) {
        const double th = grid.theta(n);
        for (int s = 0; s < grid.s_rings; ++s) {
            phi.col(grid.index(n, s)) = steering_vector(th, grid.r(n, s), lambda, grid.n_bs, grid.d);
        }
    }
    return phi;
}

}  // namespace

CMat build_projection(const PolarLattice& lattice, double lambda_m, DictionaryVariant variant) {
    switch (variant) {
        case DictionaryVariant::kFrequencyDependent:
        case DictionaryVariant::kFrequencyFlat:
            return projection_on_grid(lattice, lambda_m);
        case DictionaryVariant::kFarFieldDft:
            return projection_on_grid(dft_grid(lattice), lambda_m);
    }
    throw std::invalid_argument("build_projection: unknown variant");
}

PolarDictionary::PolarDictionary(const PolarLattice& lattice, DictionaryVariant variant,
                                 const SystemConfig& config, std::size_t cache_budget_bytes)
    : lattice_(lattice),
      grid_(variant == DictionaryVariant::kFarFieldDft ? dft_grid(lattice) : lattice),
      variant_(variant),
      lambda_c_(config.lambda_c()),
      lambdas_(config.wavelengths()) {
    const std::size_t bytes = sizeof(cplx) * static_cast<std::size_t>(grid_.n_bs) *
                              static_cast<std::size_t>(grid_.size()) * lambdas_.size();
    if (bytes <= cache_budget_bytes) {
        cache_.reserve(lambdas_.size());
        for (int m = 0; m < subcarriers(); ++m) {
            cache_.push_back(projection_on_grid(grid_, column_lambda(m)));
        }
    }
}

int PolarDictionary::atoms() const { return grid_.size(); }

double PolarDictionary::wavelength(int m) const {
    return lambdas_.at(static_cast<std::size_t>(m));
}

double PolarDictionary::column_lambda(int m) const {
    return variant_ == DictionaryVariant::kFrequencyDependent ? wavelength(m) : lambda_c_;
}

CVec PolarDictionary::column(int m, int k) const {
    if (!cache_.empty()) return cache_[static_cast<std::size_t>(m)].col(k);
    const auto [n, s] = grid_.angle_ring(k);
    return steering_vector(grid_.theta(n), grid_.r(n, s), column_lambda(m), grid_.n_bs, grid_.d);
}

const CMat& PolarDictionary::matrix(int m) const {
    if (cache_.empty()) throw std::runtime_error("PolarDictionary: matrix() requires materialization");
    return cache_.at(static_cast<std::size_t>(m));
}

CMat PolarDictionary::sensing_matrix(const CMat& w, int m) const {
    if (w.rows() != grid_.n_bs) throw std::invalid_argument("sensing_matrix: combiner row mismatch");
    if (!cache_.empty()) return w.adjoint() * cache_[static_cast<std::size_t>(m)];
    // Stream columns to avoid materializing Phi[m].
    CMat a(w.cols(), atoms());
    const CMat wh = w.adjoint();
    for (int k = 0; k < atoms(); ++k) a.col(k) = wh * column(m, k);
    return a;
}

}  // namespace ilsc
