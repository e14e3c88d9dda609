#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "adlab/errors.hpp"
#include "adlab/linalg.hpp"
#include "adlab/operator_family.hpp"
#include "adlab/smooth.hpp"

namespace adlab {

// Rotation-angle curve with exact derivatives; analytic extension optional.
struct AngleCurve {
    std::function<double(double)> eval;
    std::function<double(double, int)> deriv;  // order >= 1
    std::function<cplx(cplx)> eval_complex;    // null when not analytic

    static AngleCurve from(const SmoothScalar& s) {
        AngleCurve a;
        a.eval = [s](double t) { return s.eval(t).real(); };
        a.deriv = [s](double t, int m) { return s.deriv(t, m).real(); };
        a.eval_complex = [s](cplx z) { return s.eval_complex(z); };
        return a;
    }

    static AngleCurve from(const FlatStepAngle& f) {
        AngleCurve a;
        a.eval = [f](double t) { return f.eval(t); };
        a.deriv = [f](double t, int m) { return f.deriv(t, m); };
        return a;
    }
};

namespace detail {
inline std::vector<double> binomial_row(int m) {
    std::vector<double> row(std::size_t(m) + 1, 1.0);
    for (int j = 1; j <= m; ++j) row[std::size_t(j)] = row[std::size_t(j - 1)] * (m - j + 1) / j;
    return row;
}
}  // namespace detail

// --------------------------------------------------------------------------
// Families of the shape A(t) = e^{theta(t) J} D(t) e^{-theta(t) J} with a
// fixed skew-Hermitian frame generator J and D(t) a linear combination of
// constant matrices with smooth scalar coefficients. Diagonalizing iJ once
// turns the conjugation into entrywise phases, so derivatives of every order
// (and the analytic extension) come out in closed form via Leibniz — no
// finite differences anywhere. This is how built-in scenarios construct both
// their operator families and their projection curves: the same frame keeps
// projections smooth through eigenvalue crossings, where pointwise
// eigendecompositions would jump.
// --------------------------------------------------------------------------
class FrameFamily {
  public:
    struct DiagonalTerm {
        SmoothScalar coef;
        Matrix mat;
    };

    FrameFamily(const Matrix& j, AngleCurve angle, std::vector<DiagonalTerm> terms)
        : angle_(std::move(angle)), terms_(std::move(terms)) {
        const Eigen::Index n = j.rows();
        if (j.cols() != n || n == 0) throw DomainError("frame generator must be square");
        if (op_norm(Matrix(j + j.adjoint())) > 1e-12 * std::max(1.0, op_norm(j)))
            throw DomainError("frame generator must be skew-Hermitian");
        Eigen::SelfAdjointEigenSolver<Matrix> es(Matrix(cplx(0, 1) * j));
        if (es.info() != Eigen::Success)
            throw ConvergenceError("frame generator eigendecomposition failed");
        w_ = es.eigenvectors();
        mu_ = es.eigenvalues();  // real spectrum of iJ, so J = W diag(-i mu) W^H
        dim_ = n;
        omega_ = Matrix(n, n);
        for (Eigen::Index a = 0; a < n; ++a)
            for (Eigen::Index b = 0; b < n; ++b) omega_(a, b) = mu_(a) - mu_(b);
        tilde_.reserve(terms_.size());
        for (const auto& term : terms_) {
            if (term.mat.rows() != n || term.mat.cols() != n)
                throw DomainError("diagonal-part term has wrong dimension");
            tilde_.push_back(Matrix(w_.adjoint() * term.mat * w_));
        }
    }

    Eigen::Index dim() const { return dim_; }
    bool analytic() const { return static_cast<bool>(angle_.eval_complex); }

    // e^{theta(t) J}
    Matrix frame(double t) const {
        const double th = angle_.eval(t);
        Vector phases(dim_);
        for (Eigen::Index i = 0; i < dim_; ++i)
            phases(i) = std::exp(cplx(0, -th * mu_(i)));
        return w_ * phases.asDiagonal() * w_.adjoint();
    }

    // D(t) in the original basis
    Matrix diagonal_part(double t) const {
        Matrix d = Matrix::Zero(dim_, dim_);
        for (std::size_t k = 0; k < terms_.size(); ++k)
            d += terms_[k].coef.eval(t) * terms_[k].mat;
        return d;
    }

    Matrix eval(double t) const {
        Matrix acc = Matrix::Zero(dim_, dim_);
        for (std::size_t k = 0; k < terms_.size(); ++k)
            acc += terms_[k].coef.eval(t) * tilde_[k];
        const double th = angle_.eval(t);
        for (Eigen::Index a = 0; a < dim_; ++a)
            for (Eigen::Index b = 0; b < dim_; ++b)
                acc(a, b) *= std::exp(cplx(0, -th * omega_(a, b).real()));
        return w_ * acc * w_.adjoint();
    }

    // Exact m-th derivative: Leibniz over the coefficient part and the phase
    // part, with the phase derivatives generated by E' = -i theta' (Omega o E).
    Matrix deriv(double t, int order) const {
        if (order < 0) throw DomainError("derivative order must be >= 0");
        if (order == 0) return eval(t);
        std::vector<double> theta_d(std::size_t(order) + 1, 0.0);
        theta_d[0] = angle_.eval(t);
        for (int m = 1; m <= order; ++m) theta_d[std::size_t(m)] = angle_.deriv(t, m);

        std::vector<Matrix> e(std::size_t(order) + 1);
        e[0] = Matrix(dim_, dim_);
        for (Eigen::Index a = 0; a < dim_; ++a)
            for (Eigen::Index b = 0; b < dim_; ++b)
                e[0](a, b) = std::exp(cplx(0, -theta_d[0] * omega_(a, b).real()));
        for (int k = 1; k <= order; ++k) {
            const auto binom = detail::binomial_row(k - 1);
            Matrix acc = Matrix::Zero(dim_, dim_);
            for (int j = 0; j <= k - 1; ++j)
                acc += binom[std::size_t(j)] * theta_d[std::size_t(j + 1)] *
                       Matrix(omega_.cwiseProduct(e[std::size_t(k - 1 - j)]));
            e[std::size_t(k)] = cplx(0, -1) * acc;
        }

        std::vector<Matrix> d(std::size_t(order) + 1);
        for (int j = 0; j <= order; ++j) {
            d[std::size_t(j)] = Matrix::Zero(dim_, dim_);
            for (std::size_t k = 0; k < terms_.size(); ++k)
                d[std::size_t(j)] += terms_[k].coef.deriv(t, j) * tilde_[k];
        }

        const auto binom = detail::binomial_row(order);
        Matrix acc = Matrix::Zero(dim_, dim_);
        for (int j = 0; j <= order; ++j)
            acc += binom[std::size_t(j)] *
                   Matrix(d[std::size_t(j)].cwiseProduct(e[std::size_t(order - j)]));
        return w_ * acc * w_.adjoint();
    }

    Matrix eval_complex(cplx z) const {
        if (!analytic())
            throw CapabilityError("frame angle curve has no analytic extension");
        const cplx th = angle_.eval_complex(z);
        Matrix acc = Matrix::Zero(dim_, dim_);
        for (std::size_t k = 0; k < terms_.size(); ++k)
            acc += terms_[k].coef.eval_complex(z) * tilde_[k];
        for (Eigen::Index a = 0; a < dim_; ++a)
            for (Eigen::Index b = 0; b < dim_; ++b)
                acc(a, b) *= std::exp(cplx(0, -1) * th * omega_(a, b).real());
        return w_ * acc * w_.adjoint();
    }

    // Package as a family; smoothness < 0 declares analyticity.
    OperatorFamily family(int smoothness) const {
        FrameFamily self = *this;
        const bool is_analytic = smoothness < 0;
        if (is_analytic && !analytic())
            throw CapabilityError(
                "cannot declare analyticity without an analytic angle curve");
        OperatorFamily f(int(dim_), is_analytic ? 64 : smoothness,
                         [self](double t) { return self.eval(t); });
        f.with_derivatives([self](double t, int m) { return self.deriv(t, m); }, -1);
        if (is_analytic)
            f.with_analytic_extension([self](cplx z) { return self.eval_complex(z); });
        return f;
    }

  private:
    AngleCurve angle_;
    std::vector<DiagonalTerm> terms_;
    Eigen::Index dim_ = 0;
    Matrix w_;
    Eigen::VectorXd mu_;
    Matrix omega_;  // omega(a,b) = mu_a - mu_b, stored complex for cwise ops
    std::vector<Matrix> tilde_;
};

}  // namespace adlab
