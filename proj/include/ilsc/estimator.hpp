#pragma once

#include <stdexcept>
#include <vector>

#include "ilsc/dictionary.hpp"
#include "ilsc/pilot.hpp"
#include "ilsc/types.hpp"

namespace ilsc {

struct BernoulliGaussianPrior {
    double lambda = 0.5;  // support probability
    cplx mu = 0.0;        // active-component mean
    double gamma = 1.0;   // active-component variance
};

struct Denoised {
    cplx mean;
    double var;
    double pi;    // posterior support probability
    cplx xi;      // active-component posterior mean
    double zeta;  // active-component posterior variance
};

// Scalar Bernoulli-Gaussian MMSE denoiser for a pseudo-observation R with
// pseudo-variance sigma. Throws std::domain_error for sigma <= 0.
Denoised bg_denoiser(cplx r, double sigma, const BernoulliGaussianPrior& prior);

struct AmpOptions {
    int t_iter = 100;
    double damping = 0.8;
    double tol = 1e-6;          // early-stop on max posterior-mean change; 0 disables
    double init_snr_db = 10.0;  // initial noise-variance guess
    double init_lambda_scale = 0.1;
    unsigned threads = 1;
};

struct SparseChannelEstimate {
    std::vector<CMat> h_polar;      // per subcarrier: atoms x n_ut
    std::vector<double> noise_var;  // learned per subcarrier
    RVec support_prob;              // shared lambda_k
    int iterations = 0;
    bool converged = false;
    int subcarriers() const { return static_cast<int>(h_polar.size()); }
};

class AmpDiverged : public std::runtime_error {
  public:
    AmpDiverged(std::string msg, SparseChannelEstimate last)
        : std::runtime_error(std::move(msg)), last_estimate(std::move(last)) {}
    SparseChannelEstimate last_estimate;
};

// Damped GMMV-AMP over all subcarriers with per-sweep EM refresh of the prior
// (support probability shared across columns and subcarriers) and of the
// per-subcarrier noise variance.
SparseChannelEstimate amp_em_estimate(const MeasurementSet& measurements,
                                      const PolarDictionary& dictionary,
                                      const PilotFrame& frame, const AmpOptions& opts);

// Greedy joint-subcarrier orthogonal matching pursuit baseline: one shared
// support, per-subcarrier least-squares refits.
SparseChannelEstimate omp_estimate(const MeasurementSet& measurements,
                                   const PolarDictionary& dictionary, const PilotFrame& frame,
                                   int sparsity);

// H_hat[m] = Phi[m] * H_polar[m].
ChannelTensor reconstruct_spatial(const SparseChannelEstimate& estimate,
                                  const PolarDictionary& dictionary);

}  // namespace ilsc
