#include "ilsc/numerics.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "ilsc/rng.hpp"

namespace ilsc {

EigenDecomposition hermitian_eig(const CMat& a) {
    if (a.rows() == 0 || a.rows() != a.cols()) {
        throw std::invalid_argument("hermitian_eig: matrix must be square and non-empty");
    }
    const double scale = a.norm();
    const double asym = (a - a.adjoint()).norm();
    if (scale > 0.0 && asym > 1e-10 * scale) {
        throw std::invalid_argument("hermitian_eig: matrix is not Hermitian");
    }
    Eigen::SelfAdjointEigenSolver<CMat> solver(a);
    if (solver.info() != Eigen::Success) {
        throw std::runtime_error("hermitian_eig: eigensolver failed");
    }
    const Eigen::Index n = a.rows();
    EigenDecomposition out;
    out.eigenvalues.resize(n);
    out.eigenvectors.resize(n, n);
    // Eigen returns ascending order; flip to descending.
    for (Eigen::Index i = 0; i < n; ++i) {
        out.eigenvalues(i) = solver.eigenvalues()(n - 1 - i);
        out.eigenvectors.col(i) = solver.eigenvectors().col(n - 1 - i);
    }
    return out;
}

SvdResult svd(const CMat& a) {
    if (!a.allFinite()) {
        throw std::invalid_argument("svd: matrix has non-finite entries");
    }
    Eigen::JacobiSVD<CMat> solver(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    SvdResult out;
    out.u = solver.matrixU();
    out.singular_values = solver.singularValues();
    out.v = solver.matrixV();
    return out;
}

namespace {

double sq_dist(const RMat& points, Eigen::Index i, const RVec& c) {
    const double dx = points(i, 0) - c(0);
    const double dy = points(i, 1) - c(1);
    return dx * dx + dy * dy;
}

}  // namespace

KmeansResult kmeans(const RMat& points, int k, std::uint64_t seed) {
    const Eigen::Index n = points.rows();
    if (points.cols() != 2) {
        throw std::invalid_argument("kmeans: points must be n x 2");
    }
    if (k < 1 || n < k) {
        throw std::invalid_argument("kmeans: need 1 <= k <= point count");
    }

    Rng rng(seed);
    RMat centroids(k, 2);

    // k-means++ seeding.
    {
        const Eigen::Index first = static_cast<Eigen::Index>(rng.uniform() * n);
        centroids.row(0) = points.row(std::min(first, n - 1));
        RVec d2(n);
        for (int c = 1; c < k; ++c) {
            double total = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                double best = kInf;
                for (int j = 0; j < c; ++j) {
                    best = std::min(best, sq_dist(points, i, centroids.row(j).transpose()));
                }
                d2(i) = best;
                total += best;
            }
            Eigen::Index pick = 0;
            if (total > 0.0) {
                double target = rng.uniform() * total;
                for (Eigen::Index i = 0; i < n; ++i) {
                    target -= d2(i);
                    if (target <= 0.0) {
                        pick = i;
                        break;
                    }
                    pick = i;
                }
            } else {
                pick = static_cast<Eigen::Index>(rng.uniform() * n);
                pick = std::min(pick, n - 1);
            }
            centroids.row(c) = points.row(pick);
        }
    }

    KmeansResult out;
    out.labels.assign(static_cast<std::size_t>(n), 0);
    double prev_obj = kInf;
    for (int iter = 0; iter < 100; ++iter) {
        // Assignment step.
        double obj = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            double best = kInf;
            int arg = 0;
            for (int j = 0; j < k; ++j) {
                const double d = sq_dist(points, i, centroids.row(j).transpose());
                if (d < best) {
                    best = d;
                    arg = j;
                }
            }
            out.labels[static_cast<std::size_t>(i)] = arg;
            obj += best;
        }
        out.objective = obj;

        // Update step; empty clusters keep their previous centroid.
        RMat sums = RMat::Zero(k, 2);
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            const int j = out.labels[static_cast<std::size_t>(i)];
            sums.row(j) += points.row(i);
            ++counts[static_cast<std::size_t>(j)];
        }
        for (int j = 0; j < k; ++j) {
            if (counts[static_cast<std::size_t>(j)] > 0) {
                centroids.row(j) = sums.row(j) / counts[static_cast<std::size_t>(j)];
            }
        }

        if (prev_obj < kInf) {
            const double denom = std::max(prev_obj, 1e-300);
            if (std::abs(prev_obj - obj) / denom < 1e-8) break;
        }
        prev_obj = obj;
    }

    // Final assignment so labels match the returned centroids.
    double obj = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        double best = kInf;
        int arg = 0;
        for (int j = 0; j < k; ++j) {
            const double d = sq_dist(points, i, centroids.row(j).transpose());
            if (d < best) {
                best = d;
                arg = j;
            }
        }
        out.labels[static_cast<std::size_t>(i)] = arg;
        obj += best;
    }
    out.objective = obj;
    out.centroids = centroids;
    return out;
}

}  // namespace ilsc
