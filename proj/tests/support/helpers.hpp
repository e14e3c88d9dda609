#pragma once

#include <random>

#include "adlab/linalg.hpp"

namespace adlab::test {

// Deterministic complex Gaussian matrix.
inline Matrix random_matrix(int n, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix m(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) m(i, j) = cplx(g(rng), g(rng));
    return m;
}

// Random unitary via QR of a Gaussian matrix.
inline Matrix random_unitary(int n, std::mt19937_64& rng) {
    Eigen::HouseholderQR<Matrix> qr(random_matrix(n, rng));
    Matrix q = qr.householderQ();
    // fix the phase so Q is uniquely determined by the input
    Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int i = 0; i < n; ++i) {
        cplx d = r(i, i);
        if (std::abs(d) > 0) q.col(i) *= d / std::abs(d);
    }
    return q;
}

inline Vector random_unit_vector(int n, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Vector v(n);
    for (int i = 0; i < n; ++i) v(i) = cplx(g(rng), g(rng));
    return v / v.norm();
}

// Well-conditioned similarity S = Q (I + 0.3 N/|N|).
inline Matrix random_similarity(int n, std::mt19937_64& rng) {
    Matrix q = random_unitary(n, rng);
    Matrix nmat = random_matrix(n, rng);
    return q * (Matrix::Identity(n, n) + 0.3 * nmat / op_norm(nmat));
}

}  // namespace adlab::test
