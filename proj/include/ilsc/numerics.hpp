#pragma once

#include <cstdint>
#include <vector>

#include "ilsc/types.hpp"

namespace ilsc {

struct EigenDecomposition {
    RVec eigenvalues;   // real, sorted descending
    CMat eigenvectors;  // orthonormal columns, i-th column pairs with eigenvalues(i)
};

// Eigendecomposition of a Hermitian matrix. Throws std::invalid_argument if the
// input is not square or not Hermitian within 1e-10 relative.
EigenDecomposition hermitian_eig(const CMat& a);

struct SvdResult {
    CMat u;               // left singular vectors (thin)
    RVec singular_values; // non-negative, descending
    CMat v;               // right singular vectors (thin)
};

SvdResult svd(const CMat& a);

struct KmeansResult {
    std::vector<int> labels;  // per point, in [0, k)
    RMat centroids;           // k x 2
    double objective;         // within-cluster sum of squares
};

// Lloyd iterations with k-means++ seeding from the given seed. Runs until the
// relative objective change drops below 1e-8 or 100 iterations.
KmeansResult kmeans(const RMat& points, int k, std::uint64_t seed);

}  // namespace ilsc
