#pragma once

#include <Eigen/Dense>
#include <complex>
#include <limits>
#include <vector>

#include "adlab/errors.hpp"

namespace adlab {

using cplx = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;

inline Matrix identity(Eigen::Index n) { return Matrix::Identity(n, n); }

// Operator norm (largest singular value). All norm-based defects in this
// library are measured in this norm unless a gram matrix says otherwise.
inline double op_norm(const Matrix& m) {
    if (m.size() == 0) return 0.0;
    return Eigen::JacobiSVD<Matrix>(m).singularValues()(0);
}

inline double max_abs(const Matrix& m) {
    if (m.size() == 0) return 0.0;
    return m.cwiseAbs().maxCoeff();
}

inline Matrix commutator(const Matrix& a, const Matrix& b) { return a * b - b * a; }

inline double idempotency_defect(const Matrix& p) { return op_norm(p * p - p); }

// Eigenvalues of a general complex matrix.
inline Vector eigenvalues(const Matrix& a) {
    Eigen::ComplexEigenSolver<Matrix> es(a, /*computeEigenvectors=*/false);
    if (es.info() != Eigen::Success)
        throw ConvergenceError("eigenvalue computation did not converge");
    return es.eigenvalues();
}

// Numerical rank with a threshold relative to the largest singular value.
inline Eigen::Index rank_svd(const Matrix& m, double rel_tol = 1e-10) {
    Eigen::JacobiSVD<Matrix> svd(m);
    const auto& s = svd.singularValues();
    if (s.size() == 0) return 0;
    const double cut = rel_tol * s(0);
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s(i) > cut) ++r;
    return r;
}

// Orthonormal basis of the column space of m (left singular vectors above cut).
inline Matrix range_basis(const Matrix& m, double rel_tol = 1e-10) {
    Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU);
    const auto& s = svd.singularValues();
    const double cut = (s.size() > 0 ? rel_tol * s(0) : 0.0);
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s(i) > cut) ++r;
    return svd.matrixU().leftCols(r);
}

// Orthonormal basis of the kernel of m (right singular vectors below cut).
inline Matrix kernel_basis(const Matrix& m, double rel_tol = 1e-10) {
    Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeFullV);
    const auto& s = svd.singularValues();
    const double cut = (s.size() > 0 ? rel_tol * s(0) : 0.0);
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s(i) > cut) ++r;
    return svd.matrixV().rightCols(m.cols() - r);
}

inline double condition_number(const Matrix& m) {
    Eigen::JacobiSVD<Matrix> svd(m);
    const auto& s = svd.singularValues();
    if (s.size() == 0 || s(s.size() - 1) <= 0.0)
        return std::numeric_limits<double>::infinity();
    return s(0) / (s(s.size() - 1));
}

// --------------------------------------------------------------------------
// Geometry of a Hilbert space given by a gram matrix  <x,y> = x^H G y.
// Factorized once so operator norms in that geometry are cheap:
//   |T|_G = |L^H T L^{-H}|_2   with  G = L L^H.
// --------------------------------------------------------------------------
class GramGeometry {
  public:
    GramGeometry() = default;

    explicit GramGeometry(Matrix gram) : gram_(std::move(gram)), trivial_(false) {
        Eigen::LLT<Matrix> llt(gram_);
        if (llt.info() != Eigen::Success)
            throw DomainError("gram matrix is not Hermitian positive definite");
        l_ = llt.matrixL();
    }

    static GramGeometry euclidean(Eigen::Index n) {
        GramGeometry g;
        g.gram_ = Matrix::Identity(n, n);
        g.trivial_ = true;
        return g;
    }

    bool trivial() const { return trivial_; }
    const Matrix& gram() const { return gram_; }

    double vec_norm(const Vector& x) const {
        if (trivial_) return x.norm();
        return (l_.adjoint() * x).norm();
    }

    cplx inner(const Vector& x, const Vector& y) const {
        if (trivial_) return x.dot(y);
        return x.dot(gram_ * y);  // Eigen's dot conjugates the left argument
    }

    double op_norm(const Matrix& t) const {
        if (trivial_) return adlab::op_norm(t);
        // L^H T L^{-H}: solve (L^H X^H = T^H ... ) via triangular solves.
        Matrix rhs = (l_.adjoint() * t).transpose();
        Matrix x = l_.conjugate().triangularView<Eigen::Lower>().solve(rhs);
        return adlab::op_norm(x.transpose());
    }

    // Adjoint of T with respect to this inner product: G^{-1} T^H G.
    Matrix adjoint(const Matrix& t) const {
        if (trivial_) return t.adjoint();
        Matrix th_g = t.adjoint() * gram_;
        return gram_.ldlt().solve(th_g);
    }

    // G^{-1} rhs through the cached Cholesky factor.
    Matrix solve(const Matrix& rhs) const {
        if (trivial_) return rhs;
        Matrix y = l_.triangularView<Eigen::Lower>().solve(rhs);
        return l_.adjoint().triangularView<Eigen::Upper>().solve(y);
    }

  private:
    Matrix gram_;
    Matrix l_;
    bool trivial_ = true;
};

}  // namespace adlab
