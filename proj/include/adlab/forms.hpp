#pragma once

// Operators defined by symmetric sesquilinear forms on a Galerkin basis.
//
// A family of Hermitian form matrices F(t) together with a fixed Hermitian
// positive-definite gram matrix G represents, in coordinates, a family of
// self-adjoint operators A0(t) through G * A0(t) = F(t).  The adiabatic
// generator is the skew-adjoint A(t) = (1/i) A0(t); propagation with it is
// unitary for the G inner product (Kisynski's well-posedness theorem).  The
// module provides the representation solve, the dual (pencil) route to the
// resolvent, gram-unitary propagation, delta-resolvent estimates along the
// followed eigenvalue ray, and the no-gap comparison harness for form
// families, plus the built-in form scenario with an exact eigenvalue
// crossing ("S6").

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "adlab/adiabatic.hpp"
#include "adlab/errors.hpp"
#include "adlab/evolution.hpp"
#include "adlab/linalg.hpp"
#include "adlab/operator_family.hpp"
#include "adlab/parallel.hpp"
#include "adlab/spectral.hpp"

namespace adlab {

// ---------------------------------------------------------------------------
// FormFamily
// ---------------------------------------------------------------------------

// Time-dependent Hermitian form F(t) over a fixed gram geometry G, with a
// positive shift m so that the shifted forms F(t) + m G are the gram matrices
// of a family of equivalent "energy" inner products.
class FormFamily {
  public:
    using MatrixFn = std::function<Matrix(double)>;
    using MatrixDerivFn = std::function<Matrix(double, int)>;

    FormFamily(int dim, Matrix gram_h, MatrixFn form, double shift, int smoothness)
        : dim_(dim),
          gram_(std::move(gram_h)),
          form_(std::move(form)),
          shift_(shift),
          smoothness_(smoothness) {
        if (dim_ <= 0) throw DomainError("form family dimension must be positive");
        if (!form_) throw DomainError("form family needs an evaluation function");
        if (!(shift_ > 0.0)) throw DomainError("form shift must be positive");
        if (smoothness_ < 0) throw DomainError("form smoothness must be non-negative");
        if (gram_.rows() != dim_ || gram_.cols() != dim_)
            throw DomainError("gram matrix does not match the declared dimension");
        const double gscale = std::max(1.0, max_abs(gram_));
        if (max_abs(Matrix(gram_ - gram_.adjoint())) > 1e-12 * gscale)
            throw DomainError("gram matrix is not Hermitian");
        geometry_ = GramGeometry(gram_);  // throws if not positive definite
        gram_condition_ = condition_number(gram_);
    }

    // Exact t-derivatives of the form; order <= max_exact_order is served by
    // fn, higher orders fall back to finite differences (max_exact_order = -1
    // means every order is exact).
    FormFamily& with_form_derivatives(MatrixDerivFn fn, int max_exact_order) {
        if (!fn) throw DomainError("form derivative function must not be empty");
        form_deriv_ = std::move(fn);
        max_exact_order_ = max_exact_order;
        return *this;
    }

    // Override for the shifted-form gram matrices; by definition they equal
    // form(t) + shift * gram, and validate_form_family checks the override
    // against that identity.
    FormFamily& with_hplus_override(MatrixFn fn) {
        hplus_override_ = std::move(fn);
        return *this;
    }

    int dim() const { return dim_; }
    double shift() const { return shift_; }
    int smoothness() const { return smoothness_; }
    const Matrix& gram_h() const { return gram_; }
    const GramGeometry& geometry() const { return geometry_; }
    double gram_condition() const { return gram_condition_; }

    // Hermiticity-checked form evaluation.
    Matrix form(double t) const {
        Matrix f = form_unchecked(t);
        const double scale = std::max(1.0, max_abs(f));
        if (max_abs(Matrix(f - f.adjoint())) > 1e-10 * scale) {
            std::ostringstream msg;
            msg << "form matrix is not Hermitian at t = " << t;
            throw DomainError(msg.str());
        }
        return f;
    }

    // Unchecked evaluation (size-validated only); used by diagnostics that
    // measure the Hermiticity defect instead of rejecting it.
    Matrix form_unchecked(double t) const {
        check_time(t);
        Matrix f = form_(t);
        if (f.rows() != dim_ || f.cols() != dim_)
            throw DomainError("form matrix does not match the declared dimension");
        return f;
    }

    // d^order/dt^order of the form; exact when provided, otherwise an
    // interior finite-difference stencil on the unit interval.
    Matrix form_deriv(double t, int order) const {
        check_time(t);
        if (order < 0) throw DomainError("derivative order must be non-negative");
        if (order == 0) return form(t);
        if (form_deriv_ && (max_exact_order_ < 0 || order <= max_exact_order_)) {
            Matrix d = form_deriv_(t, order);
            if (d.rows() != dim_ || d.cols() != dim_)
                throw DomainError("form derivative does not match the declared dimension");
            return d;
        }
        auto eval = [this](double s) { return form_unchecked(s); };
        return fd_derivative(eval, t, order, fd_default_step(order, t));
    }

    // Gram matrix of the shifted ("energy") inner product at time t.
    Matrix gram_hplus(double t) const {
        if (hplus_override_) {
            check_time(t);
            Matrix h = hplus_override_(t);
            if (h.rows() != dim_ || h.cols() != dim_)
                throw DomainError("shifted gram matrix does not match the declared dimension");
            return h;
        }
        return Matrix(form(t) + shift_ * gram_);
    }

    // Gram matrix of the dual norm at time t, in functional coordinates
    // (a conjugate-linear functional x |-> x^H w is stored as the vector w;
    // the embedding of a state y is w = G y).  The dual norm of w is
    // sqrt(w^H gram_hplus(t)^{-1} w).
    Matrix dual_gram(double t) const {
        const Matrix h = gram_hplus(t);
        Eigen::LLT<Matrix> llt(h);
        if (llt.info() != Eigen::Success)
            throw DomainError("shifted gram matrix is not positive definite");
        return llt.solve(Matrix(identity(dim_)));
    }

    // Time-independent reference choice for the dual norm (energy norm at
    // t = 0); any fixed t gives an equivalent norm.
    Matrix dual_gram_reference() const { return dual_gram(0.0); }

    // gram^{-1} * rhs through the cached Cholesky factorization.
    Matrix solve_gram(const Matrix& rhs) const { return geometry_.solve(rhs); }

  private:
    static void check_time(double t) {
        if (!(t >= 0.0 && t <= 1.0))
            throw DomainError("form family is defined for t in [0, 1]");
    }

    int dim_ = 0;
    Matrix gram_;
    MatrixFn form_;
    double shift_ = 0.0;
    int smoothness_ = 0;
    MatrixFn hplus_override_;
    MatrixDerivFn form_deriv_;
    int max_exact_order_ = -1;
    GramGeometry geometry_{};
    double gram_condition_ = 1.0;
};

// ---------------------------------------------------------------------------
// Family validation
// ---------------------------------------------------------------------------

struct FormFamilyValidationOptions {
    double identity_tol = 1e-10;      // |gram_hplus - (form + m gram)| gate
    double hermiticity_tol = 1e-10;   // |form - form^H| gate (relative to scale)
    double coercivity_floor = 1e-8;   // uniform lower bound for eig(gram_hplus)
};

struct FormFamilyValidation {
    double hplus_identity_defect = 0.0;   // max_t |gram_hplus - (form + m gram)|
    double form_hermiticity_defect = 0.0; // max_t |form - form^H|
    double min_hplus_eigenvalue = 0.0;    // min_t eig_min(gram_hplus)
    double min_gram_eigenvalue = 0.0;
    bool pass = false;
    std::vector<std::string> failures;
};

// Checks the defining invariants of a form family on a grid: the shifted gram
// matrices equal form + m gram, the forms are Hermitian, and the shifted gram
// matrices are uniformly positive definite.
inline FormFamilyValidation validate_form_family(const FormFamily& ff,
                                                 const std::vector<double>& grid,
                                                 const FormFamilyValidationOptions& opt = {}) {
    if (grid.empty()) throw DomainError("form family validation needs a non-empty grid");
    FormFamilyValidation out;
    out.min_hplus_eigenvalue = std::numeric_limits<double>::infinity();
    {
        Eigen::SelfAdjointEigenSolver<Matrix> es(ff.gram_h(), Eigen::EigenvaluesOnly);
        out.min_gram_eigenvalue = es.eigenvalues().minCoeff();
    }
    double scale = 1.0;
    for (double t : grid) {
        const Matrix f = ff.form_unchecked(t);
        scale = std::max(scale, max_abs(f));
        out.form_hermiticity_defect =
            std::max(out.form_hermiticity_defect, max_abs(Matrix(f - f.adjoint())));
        const Matrix h = ff.gram_hplus(t);
        out.hplus_identity_defect = std::max(
            out.hplus_identity_defect, max_abs(Matrix(h - f - ff.shift() * ff.gram_h())));
        Eigen::SelfAdjointEigenSolver<Matrix> es(Matrix(0.5 * (h + h.adjoint())),
                                                 Eigen::EigenvaluesOnly);
        out.min_hplus_eigenvalue = std::min(out.min_hplus_eigenvalue,
                                            es.eigenvalues().minCoeff());
    }
    if (out.hplus_identity_defect > opt.identity_tol * scale)
        out.failures.push_back("shifted gram matrices do not equal form + m gram");
    if (out.form_hermiticity_defect > opt.hermiticity_tol * scale)
        out.failures.push_back("form matrices are not Hermitian on the grid");
    if (!(out.min_hplus_eigenvalue >= opt.coercivity_floor))
        out.failures.push_back("shifted gram matrices are not uniformly positive definite");
    out.pass = out.failures.empty();
    return out;
}

// ---------------------------------------------------------------------------
// operator_from_form
// ---------------------------------------------------------------------------

struct FormOperator {
    Matrix a0;                           // self-adjoint representative, G a0 = F(t)
    Matrix generator;                    // A(t) = (1/i) a0, skew-adjoint for G
    double self_adjointness_defect = 0.0;  // |G a0 - a0^H G|
    double gram_condition = 1.0;
};

// Solves G * A0 = F(t) and returns A0 together with the adiabatic generator
// (1/i) A0.  Verifies that A0 is self-adjoint in the gram geometry and that
// the gram matrix is well conditioned enough for the solve to be trusted.
inline FormOperator operator_from_form(const FormFamily& ff, double t,
                                       double tol = 1e-10,
                                       double condition_threshold = 1e12) {
    FormOperator out;
    out.gram_condition = ff.gram_condition();
    if (!(out.gram_condition < condition_threshold)) {
        std::ostringstream msg;
        msg << "gram matrix condition number " << out.gram_condition
            << " exceeds the threshold " << condition_threshold
            << "; the form representation solve is unreliable";
        throw DomainError(msg.str());
    }
    const Matrix f = ff.form(t);
    out.a0 = ff.solve_gram(f);
    out.self_adjointness_defect =
        op_norm(Matrix(ff.gram_h() * out.a0 - out.a0.adjoint() * ff.gram_h()));
    if (out.self_adjointness_defect > tol * std::max(1.0, max_abs(f))) {
        std::ostringstream msg;
        msg << "represented operator is not self-adjoint in the gram geometry at t = " << t;
        throw ConvergenceError(msg.str(), out.self_adjointness_defect);
    }
    out.generator = cplx(0.0, -1.0) * out.a0;
    return out;
}

namespace detail {

// Lean generator path used by propagation loops: A(t) = (1/i) G^{-1} F(t)
// without the per-call self-adjointness certificate (callers verify the
// family on the propagation grid up front).
inline GeneratorFn form_generator(const FormFamily& ff) {
    return [ff](double t) { return Matrix(cplx(0.0, -1.0) * ff.solve_gram(ff.form(t))); };
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dual resolvent identity
// ---------------------------------------------------------------------------

// (A0(t) - z)^{-1} computed from the represented operator.  Note the sign
// relative to `resolvent`, which returns (z - a)^{-1}.
inline Matrix form_operator_resolvent(const FormFamily& ff, double t, cplx z) {
    const FormOperator op = operator_from_form(ff, t);
    return Matrix(-resolvent(op.a0, z));
}

// The same resolvent computed through the pencil F(t) - z G, without ever
// forming A0: (A0 - z)^{-1} = (F - z G)^{-1} G.  This is the dual-space route
// (the pencil acts H+ -> H-), and it must fail near-singular exactly where
// the operator route does.
inline Matrix dual_pencil_resolvent(const FormFamily& ff, double t, cplx z,
                                    const ResolventOptions& opt = {}) {
    const Matrix g = ff.gram_h();
    const Matrix pencil = ff.form(t) - z * g;
    const int n = ff.dim();
    const double scale = std::max(1.0, max_abs(pencil));
    const double gscale = std::max(max_abs(g), 1e-300);
    Eigen::PartialPivLU<Matrix> lu(pencil);
    Matrix x = lu.solve(g);
    if (!x.allFinite())
        throw NearSingularError("pencil point is numerically on the spectrum", 0.0);
    const double dist_proxy = gscale / std::max(max_abs(x), 1e-300);
    if (dist_proxy < opt.near_tol * scale * n) {
        const double dist = op_norm(g) / std::max(op_norm(x), 1e-300);
        if (dist < opt.near_tol * scale) {
            std::ostringstream msg;
            msg << "pencil point is within " << dist << " of the spectrum";
            throw NearSingularError(msg.str(), dist);
        }
    }
    const double residual = max_abs(Matrix(pencil * x - g));
    if (residual > opt.residual_tol * gscale) {
        std::ostringstream msg;
        msg << "pencil solve residual " << residual << " indicates near-singularity";
        throw NearSingularError(msg.str(), dist_proxy);
    }
    return x;
}

struct DualResolventReport {
    double t = 0.0;
    cplx z;
    double defect = 0.0;           // |operator route - pencil route|
    double relative_defect = 0.0;  // defect / max(1, |operator route|)
    double resolvent_norm = 0.0;
};

// Confirms (A0 - z)^{-1} = (F - z G)^{-1} G by computing both sides through
// independent factorizations.
inline DualResolventReport dual_resolvent_identity_check(const FormFamily& ff, double t,
                                                         cplx z) {
    DualResolventReport out;
    out.t = t;
    out.z = z;
    const Matrix lhs = form_operator_resolvent(ff, t, z);
    const Matrix rhs = dual_pencil_resolvent(ff, t, z);
    out.resolvent_norm = op_norm(lhs);
    out.defect = op_norm(Matrix(lhs - rhs));
    out.relative_defect = out.defect / std::max(1.0, out.resolvent_norm);
    return out;
}

// ---------------------------------------------------------------------------
// Gram-unitary propagation
// ---------------------------------------------------------------------------

struct GramUnitarityReport {
    double max_defect = 0.0;  // worst |U^H G U - G| over the pair table
    double at_s = 0.0;        // interval [at_s, at_t] attaining the maximum
    double at_t = 0.0;
    int entries = 0;
    double bound = 0.0;
    bool pass = false;
};

// Measures |U(t,s)^H G U(t,s) - G| on every entry of the propagator's pair
// table; skew-adjoint generators for G make every transition gram-unitary up
// to integrator error.
inline GramUnitarityReport gram_unitarity_report(const Propagator& u, const Matrix& gram,
                                                 double bound) {
    GramUnitarityReport out;
    out.bound = bound;
    const auto table = pair_table(u);
    const auto& grid = u.grid();
    for (std::size_t i = 0; i < table.size(); ++i) {
        for (std::size_t j = 0; j < table[i].size(); ++j) {
            const Matrix& m = table[i][j];
            const double defect = op_norm(Matrix(m.adjoint() * gram * m - gram));
            ++out.entries;
            if (defect > out.max_defect) {
                out.max_defect = defect;
                out.at_s = grid[i];
                out.at_t = grid[i + j];
            }
        }
    }
    out.pass = out.max_defect <= bound;
    return out;
}

// Builds the propagator of x' = (1/(i eps)) A0(t) x for a twice weakly
// differentiable form family and certifies gram-unitarity of every table
// entry to 20 * tol.
inline Propagator kisynski_propagate(const FormFamily& ff, double epsilon,
                                     const std::vector<double>& grid, double tol) {
    if (ff.smoothness() < 2)
        throw DomainError(
            "well-posed unitary propagation needs a form family of smoothness >= 2");
    if (!(epsilon > 0.0)) throw DomainError("epsilon must be positive");
    for (double t : grid) operator_from_form(ff, t);  // certify the grid
    GeneratorFn gen = detail::form_generator(ff);
    GeneratorFn scaled = [gen, inv = 1.0 / epsilon](double t) { return Matrix(inv * gen(t)); };
    Propagator u(scaled, grid, scaled_controls(epsilon, tol), epsilon);
    const GramUnitarityReport rep = gram_unitarity_report(u, ff.gram_h(), 20.0 * tol);
    if (!rep.pass) {
        std::ostringstream msg;
        msg << "propagation lost gram unitarity: defect " << rep.max_defect << " on ["
            << rep.at_s << ", " << rep.at_t << "] exceeds " << rep.bound;
        throw ConvergenceError(msg.str(), rep.max_defect);
    }
    return u;
}

// ---------------------------------------------------------------------------
// Delta-resolvent estimates along the followed eigenvalue ray
// ---------------------------------------------------------------------------

struct DeltaProbeOptions {
    double delta0 = 1.0;    // admissible range (0, delta0]
    double fd_step = 1e-3;  // step for the t-derivative of the resolvent
    double resolvent_exponent_bound = 1.1;   // measured 1/delta growth must stay below
    double derivative_exponent_bound = 2.1;  // measured 1/delta^2 growth must stay below
    double vanish_floor = 1e-10;  // derivative sups below this count as identically zero
};

struct DeltaProbeRow {
    double delta = 0.0;
    double resolvent_sup = 0.0;   // sup_t |(lambda(t) + delta - A(t))^{-1} (1 - P(t))|
    double derivative_sup = 0.0;  // sup_t |d/dt of the same|
    double m0_term = 0.0;         // delta * resolvent_sup
    double m0_prime_term = 0.0;   // delta^2 * derivative_sup
};

struct DeltaProbeReport {
    std::vector<DeltaProbeRow> rows;
    std::vector<std::pair<double, std::string>> excluded;  // inadmissible deltas
    double m0 = 0.0;        // max delta * sup: the reduced-resolvent bound constant
    double m0_prime = 0.0;  // max delta^2 * derivative sup
    double resolvent_exponent = 0.0;   // log-log growth rate in 1/delta
    double derivative_exponent = 0.0;
    bool derivative_vanishes = false;
    bool pass = false;
};

namespace detail {

// Least-squares slope of y against x.
inline double fitted_slope(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    if (n < 2) throw DomainError("slope fit needs at least 2 points");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx <= 0.0) throw DomainError("slope fit is degenerate: all abscissae coincide");
    return sxy / sxx;
}

}  // namespace detail

// Measures sup_t |(lambda(t) + delta - A(t))^{-1} (1 - P(t))| and the sup of
// its t-derivative for each admissible delta, reports the constants
// m0 = max delta * sup and m0' = max delta^2 * derivative sup, and fits the
// 1/delta growth exponents (which must stay below 1 and 2 respectively, up to
// a 0.1 measurement margin).  Deltas outside (0, delta0] are excluded with a
// note.  Norms are taken in the gram geometry of the family.
inline DeltaProbeReport delta_resolvent_probe(const FormFamily& ff,
                                              const std::function<cplx(double)>& lambda_curve,
                                              const OperatorFamily& p_curve,
                                              const std::vector<double>& deltas,
                                              const std::vector<double>& grid,
                                              const DeltaProbeOptions& opt = {}) {
    if (!lambda_curve) throw DomainError("delta probe needs an eigenvalue curve");
    if (grid.empty()) throw DomainError("delta probe needs a non-empty grid");
    if (p_curve.dim() != ff.dim())
        throw DomainError("projection curve dimension does not match the form family");
    DeltaProbeReport out;
    std::vector<double> admissible;
    for (double d : deltas) {
        if (!(d > 0.0)) {
            std::ostringstream msg;
            msg << "delta = " << d << " is not positive";
            out.excluded.emplace_back(d, msg.str());
        } else if (d > opt.delta0) {
            std::ostringstream msg;
            msg << "delta = " << d << " exceeds the admissible bound delta0 = " << opt.delta0;
            out.excluded.emplace_back(d, msg.str());
        } else {
            admissible.push_back(d);
        }
    }
    if (admissible.size() < 2)
        throw DomainError("delta probe needs at least 2 admissible deltas for the growth fit");

    const GramGeometry& geom = ff.geometry();
    const Matrix eye = identity(ff.dim());
    for (double d : admissible) {
        auto rbar = [&ff, &lambda_curve, &p_curve, &eye, d](double t) {
            const Matrix a = cplx(0.0, -1.0) * ff.solve_gram(ff.form(t));
            const Matrix r = resolvent(a, lambda_curve(t) + d);
            return Matrix(r * (eye - p_curve.eval(t)));
        };
        DeltaProbeRow row;
        row.delta = d;
        for (double t : grid) {
            row.resolvent_sup = std::max(row.resolvent_sup, geom.op_norm(rbar(t)));
            const Matrix dr = fd_derivative(rbar, t, 1, opt.fd_step);
            row.derivative_sup = std::max(row.derivative_sup, geom.op_norm(dr));
        }
        row.m0_term = d * row.resolvent_sup;
        row.m0_prime_term = d * d * row.derivative_sup;
        out.m0 = std::max(out.m0, row.m0_term);
        out.m0_prime = std::max(out.m0_prime, row.m0_prime_term);
        out.rows.push_back(row);
    }

    std::vector<double> x, y_res, y_der;
    double max_der = 0.0;
    for (const DeltaProbeRow& row : out.rows) max_der = std::max(max_der, row.derivative_sup);
    out.derivative_vanishes = max_der <= opt.vanish_floor;
    for (const DeltaProbeRow& row : out.rows) {
        x.push_back(std::log(1.0 / row.delta));
        y_res.push_back(std::log(row.resolvent_sup));
        if (!out.derivative_vanishes)
            y_der.push_back(std::log(std::max(row.derivative_sup, 1e-300)));
    }
    out.resolvent_exponent = detail::fitted_slope(x, y_res);
    out.derivative_exponent = out.derivative_vanishes ? 0.0 : detail::fitted_slope(x, y_der);
    out.pass = out.resolvent_exponent <= opt.resolvent_exponent_bound &&
               out.derivative_exponent <= opt.derivative_exponent_bound;
    return out;
}

// ---------------------------------------------------------------------------
// Form scenarios
// ---------------------------------------------------------------------------

struct FormScenario {
    std::string id;
    std::string name;
    std::string description;
    FormFamily family;
    std::function<cplx(double)> lambda_curve;  // followed eigenvalue of A = (1/i) A0
    OperatorFamily projection_curve;           // gram-orthogonal eigenprojection
    std::vector<double> crossing_set;          // times where lambda touches the rest
    int projection_rank = 1;
    double delta0 = 1.0;
};

namespace detail {

// Dirichlet energies of the first `dim` sine modes on (0, pi): the basis
// phi_k = sqrt(2/pi) sin(k x) is orthonormal in L^2 and diagonalizes the
// energy form integral(x' y') with eigenvalues k^2.
inline Matrix dirichlet_energy_matrix(int dim) {
    Matrix d = Matrix::Zero(dim, dim);
    for (int k = 1; k <= dim; ++k)
        d(k - 1, k - 1) = static_cast<double>(k) * static_cast<double>(k);
    return d;
}

// Matrix of the multiplication operator by v(x) = cos(2 dim x) - b cos(2x)
// in the first `dim` sine modes.  The matrix elements of cos(2mx) are
// (1/2)[delta_{|j-k|,2m} - delta_{j+k,2m}], so the top harmonic cos(2 dim x)
// aliases under the truncation to a pure shift of the highest mode (the only
// in-range index pair with j + k = 2 dim is j = k = dim), while the
// -b cos(2x) part couples modes two apart and shifts mode 1.  Everything
// preserves the parity of the mode index, so odd and even modes never mix.
inline Matrix switch_potential_matrix(int dim) {
    const double b = 0.4;
    Matrix w = Matrix::Zero(dim, dim);
    w(dim - 1, dim - 1) = -0.5;
    w(0, 0) = 0.5 * b;
    for (int k = 1; k + 2 <= dim; ++k) {
        w(k - 1, k + 1) = -0.5 * b;
        w(k + 1, k - 1) = -0.5 * b;
    }
    return w;
}

// Indices (0-based) of the odd or even modes.
inline std::vector<int> parity_indices(int dim, bool odd) {
    std::vector<int> idx;
    for (int k = odd ? 1 : 2; k <= dim; k += 2) idx.push_back(k - 1);
    return idx;
}

// Restriction of d + c w to a parity sector.
inline Matrix sector_block(const Matrix& d, const Matrix& w, const std::vector<int>& idx,
                           double c) {
    const int m = static_cast<int>(idx.size());
    Matrix b(m, m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
            b(i, j) = d(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]) +
                      c * w(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    return b;
}

inline double sector_top_energy(const Matrix& d, const Matrix& w,
                                const std::vector<int>& idx, double c) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(sector_block(d, w, idx, c),
                                             Eigen::EigenvaluesOnly);
    return es.eigenvalues()(es.eigenvalues().size() - 1);
}

}  // namespace detail

// Built-in form scenario: the sine-mode Dirichlet energy plus a switched
// parity-preserving potential, scaled to unit stiffness.  The potential's
// top harmonic aliases under the truncation to a pure shift of the highest
// sine mode, so the coupling ramp c(t) drives that branch down at the exact
// rate c/2 while the top branch of the opposite parity sector barely moves;
// c(t) passes through the coincidence value c* at t = 1/2, producing an
// exact transversal eigenvalue crossing of the truncated spectrum there.
// (The continuum operator has no such crossing: one-dimensional Dirichlet
// eigenvalues stay simple.  The crossing is an honest feature of the
// truncated family, which is the operator the scenario studies.)  At the
// crossing the followed eigenvalue is not isolated and no gap assumption
// holds, while parity keeps the followed eigenprojection smooth through it.
inline FormScenario make_form_crossing(int dim = 16) {
    if (dim < 6)
        throw ConfigError("form_crossing needs at least 6 sine modes to build the crossing");
    const double pi = std::numbers::pi;
    const double scale = 1.0 / (4.0 * pi * pi);  // units choice: tames the mode-dim^2 stiffness
    const Matrix d = detail::dirichlet_energy_matrix(dim);
    const Matrix w = detail::switch_potential_matrix(dim);
    // the followed branch starts at the top of the sector containing mode dim
    const std::vector<int> followed = detail::parity_indices(dim, dim % 2 == 1);
    const std::vector<int> partner = detail::parity_indices(dim, dim % 2 == 0);

    auto branch_gap = [&](double c) {
        return detail::sector_top_energy(d, w, followed, c) -
               detail::sector_top_energy(d, w, partner, c);
    };
    double lo = 0.0;
    if (!(branch_gap(lo) > 0.0))
        throw ConvergenceError("sector top branches are not ordered at zero coupling", 0.0);
    double hi = 4.0;
    while (hi <= 16.0 * dim && branch_gap(hi) > 0.0) hi *= 2.0;
    if (branch_gap(hi) > 0.0)
        throw ConvergenceError("sector top branches do not cross within the coupling bracket",
                               branch_gap(hi));
    while (hi - lo > 1e-12) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        if (branch_gap(mid) > 0.0)
            lo = mid;
        else
            hi = mid;
    }
    const double c_star = 0.5 * (lo + hi);
    const double ramp = 8.0;  // coupling speed: c(1) - c(0)
    auto coupling = [c_star, ramp](double t) { return c_star + ramp * (t - 0.5); };

    FormFamily family(
        dim, identity(dim),
        [d, w, coupling, scale](double t) { return Matrix(scale * (d + coupling(t) * w)); },
        1.0, 4);
    family.with_form_derivatives(
        [d, w, ramp, scale, dim](double /*t*/, int order) {
            if (order == 1) return Matrix(scale * ramp * w);
            return Matrix(Matrix::Zero(dim, dim));
        },
        -1);

    auto lambda_curve = [d, w, followed, coupling, scale](double t) {
        return cplx(0.0, -1.0) * scale *
               detail::sector_top_energy(d, w, followed, coupling(t));
    };
    auto projection_eval = [d, w, followed, coupling, dim](double t) {
        Eigen::SelfAdjointEigenSolver<Matrix> es(
            detail::sector_block(d, w, followed, coupling(t)));
        const Vector top = es.eigenvectors().col(es.eigenvalues().size() - 1);
        Vector embedded = Vector::Zero(dim);
        for (std::size_t i = 0; i < followed.size(); ++i)
            embedded(followed[i]) = top(static_cast<Eigen::Index>(i));
        return Matrix(embedded * embedded.adjoint());
    };
    OperatorFamily projection(dim, 3, projection_eval);

    FormScenario fs{
        "S6",
        "form_crossing",
        "sesquilinear-form family on " + std::to_string(dim) +
            " sine modes: scaled Dirichlet energy plus a switched parity-preserving "
            "potential whose top harmonic aliases to a shift of the highest mode, "
            "driving the followed branch across the top branch of the opposite "
            "parity sector at t = 1/2",
        std::move(family),
        lambda_curve,
        std::move(projection),
        {0.5},
        1,
        1.0};
    return fs;
}

// ---------------------------------------------------------------------------
// Scenario-level diagnostics
// ---------------------------------------------------------------------------

// Recovers the followed eigenvalue from the projection through the identity
// 1/(lambda(t) - 1) = <P x0, (A - 1)^{-1} P x0> / <P x0, P x0> (gram inner
// products) and returns the worst recovery defect over the grid.
inline double trace_formula_defect(const FormFamily& ff,
                                   const std::function<cplx(double)>& lambda_curve,
                                   const OperatorFamily& p_curve,
                                   const std::vector<double>& grid) {
    if (grid.empty()) throw DomainError("trace formula check needs a non-empty grid");
    const GramGeometry& geom = ff.geometry();
    double worst = 0.0;
    for (double t : grid) {
        const Matrix p = p_curve.eval(t);
        const Matrix a = cplx(0.0, -1.0) * ff.solve_gram(ff.form(t));
        const Matrix rinv = -resolvent(a, cplx(1.0, 0.0));  // (A - 1)^{-1}
        Vector x0;
        double best = -1.0;
        for (int k = 0; k < ff.dim(); ++k) {
            Vector e = Vector::Zero(ff.dim());
            e(k) = 1.0;
            const Vector px = p * e;
            const double mass = std::abs(geom.inner(px, px));
            if (mass > best) {
                best = mass;
                x0 = e;
            }
        }
        if (best <= 1e-12)
            throw DomainError("projection annihilates every basis vector; trace formula "
                              "has no admissible probe");
        const Vector px = p * x0;
        const cplx num = geom.inner(px, Vector(rinv * px));
        const cplx den = geom.inner(px, px);
        const cplx recovered = 1.0 + den / num;
        worst = std::max(worst, std::abs(recovered - lambda_curve(t)));
    }
    return worst;
}

// Worst gram-geometry norm of (A(t) - lambda(t)) P(t) over the grid: the
// followed range must consist of eigenvectors at every time, crossing times
// included.
inline double eigenpair_defect(const FormFamily& ff,
                               const std::function<cplx(double)>& lambda_curve,
                               const OperatorFamily& p_curve,
                               const std::vector<double>& grid) {
    if (grid.empty()) throw DomainError("eigenpair check needs a non-empty grid");
    const GramGeometry& geom = ff.geometry();
    const Matrix eye = identity(ff.dim());
    double worst = 0.0;
    for (double t : grid) {
        const Matrix a = cplx(0.0, -1.0) * ff.solve_gram(ff.form(t));
        worst = std::max(worst,
                         geom.op_norm(Matrix((a - lambda_curve(t) * eye) * p_curve.eval(t))));
    }
    return worst;
}

struct FormScenarioValidation {
    double lambda_defect = 0.0;        // max_t dist(lambda(t), spec(A(t))) / scale
    double eigenpair_defect = 0.0;     // max_t |(A - lambda) P|_G
    double trace_formula_defect = 0.0; // max_t eigenvalue recovery error
    double association_defect = 0.0;   // worst verify_association tolerance use off-crossing
    int association_points = 0;
    double crossing_gap = 0.0;          // max over declared crossings of the branch distance
    double off_crossing_min_gap = 0.0;  // min branch distance away from crossings
    bool pass = false;
    std::vector<std::string> failures;
};

// Confirms the followed-branch structure of a form scenario on a grid:
// lambda(t) lies in the spectrum, P(t) ranges in the eigenspace at every t,
// the trace formula recovers lambda, the projection is weakly associated away
// from the declared crossings, and the declared crossings are genuine
// (the followed branch touches another one there and nowhere else).
inline FormScenarioValidation validate_form_scenario(const FormScenario& fs,
                                                     const std::vector<double>& grid,
                                                     double tol = 1e-8,
                                                     double exclusion_radius = 0.02) {
    if (grid.empty()) throw DomainError("form scenario validation needs a non-empty grid");
    FormScenarioValidation out;
    out.off_crossing_min_gap = std::numeric_limits<double>::infinity();
    const FormFamily& ff = fs.family;
    double scale = 1.0;
    for (double t : grid) {
        const Matrix a = cplx(0.0, -1.0) * ff.solve_gram(ff.form(t));
        scale = std::max(scale, max_abs(a));
        const cplx lam = fs.lambda_curve(t);
        const Vector eigs = eigenvalues(a);
        double dist = std::numeric_limits<double>::infinity();
        double second = std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < eigs.size(); ++i) {
            const double di = std::abs(eigs(i) - lam);
            if (di < dist) {
                second = dist;
                dist = di;
            } else if (di < second) {
                second = di;
            }
        }
        out.lambda_defect = std::max(out.lambda_defect, dist / scale);
        bool near_crossing = false;
        for (double tc : fs.crossing_set)
            if (std::abs(t - tc) < exclusion_radius) near_crossing = true;
        if (!near_crossing) {
            out.off_crossing_min_gap = std::min(out.off_crossing_min_gap, second);
            VerifyOptions vopt;
            vopt.tolerance = tol;
            const AssociationReport rep =
                verify_association(a, fs.projection_curve.eval(t), lam, vopt);
            ++out.association_points;
            if (!rep.pass) {
                std::ostringstream msg;
                msg << "projection is not weakly associated with the family at t = " << t;
                out.failures.push_back(msg.str());
            }
            out.association_defect = std::max(
                out.association_defect,
                std::max({rep.idempotency, rep.commutation, rep.projection_match}));
        }
    }
    // the declared crossings themselves: the followed eigenvalue must touch
    // another branch there (distance measured at the exact crossing times)
    for (double tc : fs.crossing_set) {
        const Matrix a = cplx(0.0, -1.0) * ff.solve_gram(ff.form(tc));
        const cplx lam = fs.lambda_curve(tc);
        const Vector eigs = eigenvalues(a);
        double dist = std::numeric_limits<double>::infinity();
        double second = std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < eigs.size(); ++i) {
            const double di = std::abs(eigs(i) - lam);
            if (di < dist) {
                second = dist;
                dist = di;
            } else if (di < second) {
                second = di;
            }
        }
        out.crossing_gap = std::max(out.crossing_gap, second);
    }
    out.eigenpair_defect = eigenpair_defect(ff, fs.lambda_curve, fs.projection_curve, grid);
    out.trace_formula_defect =
        trace_formula_defect(ff, fs.lambda_curve, fs.projection_curve, grid);
    if (out.lambda_defect > tol)
        out.failures.push_back("followed eigenvalue leaves the spectrum");
    if (out.eigenpair_defect > tol)
        out.failures.push_back("projection range leaves the followed eigenspace");
    if (out.trace_formula_defect > tol)
        out.failures.push_back("trace formula does not recover the followed eigenvalue");
    if (!fs.crossing_set.empty() && out.crossing_gap > 1e-6 * scale)
        out.failures.push_back("declared crossing times are not eigenvalue crossings");
    out.pass = out.failures.empty();
    return out;
}

// ---------------------------------------------------------------------------
// No-gap comparison harness for form families
// ---------------------------------------------------------------------------

struct FormHarnessOptions {
    std::vector<double> epsilons;  // strictly decreasing, in (0, 1)
    int grid_points = 65;
    double tol = 1e-8;
    int workers = 1;
    std::string scenario_id = "form";
    std::vector<double> crossing_set;  // association is only required away from these
    double exclusion_radius = 0.02;
    double association_tol = 1e-8;
};

namespace detail {

struct FormDefects {
    bool ok = false;
    std::string error;
    double uv_right = 0.0;     // |(U - V0) P(0)|_G
    double uv_left = 0.0;      // |P(t) (U - V0)|_G
    double od1 = 0.0;          // |(1 - P(t)) U P(0)|_G
    double od2 = 0.0;          // |P(t) U (1 - P(0))|_G
    double uv_full = 0.0;      // |U - V|_G for the unprojected comparison
    bool has_full = false;
};

}  // namespace detail

// Runs the no-gap comparison for a form family: for each epsilon it builds
// the gram-unitary propagator U of (1/(i eps)) A0(t) and the comparison
// propagator V0 of (1/eps) lambda(t) P(t) + [P'(t), P(t)], and measures both
// one-sided defects sup_t |(U - V0) P(0)| and sup_t |P(t)(U - V0)| together
// with the off-diagonal parts of U, all in the gram geometry.  When the
// projection curve is three times differentiable it also builds the
// unprojected comparison V with generator (1/eps) A(t) + [P'(t), P(t)] and
// measures sup_t |U - V|.  All defect families must vanish as eps -> 0; no
// decay rate is attached because none is guaranteed without a gap.
inline std::vector<SweepResult> form_nogap_harness(const FormFamily& ff,
                                                   const std::function<cplx(double)>& lambda_curve,
                                                   const OperatorFamily& p_curve,
                                                   const FormHarnessOptions& opt) {
    if (!lambda_curve) throw DomainError("form harness needs an eigenvalue curve");
    if (p_curve.dim() != ff.dim())
        throw DomainError("projection curve dimension does not match the form family");
    if (opt.epsilons.empty()) throw ConfigError("epsilon list must not be empty");
    for (std::size_t i = 0; i < opt.epsilons.size(); ++i) {
        if (!(opt.epsilons[i] > 0.0 && opt.epsilons[i] < 1.0))
            throw ConfigError("epsilons must lie in (0, 1)");
        if (i > 0 && !(opt.epsilons[i] < opt.epsilons[i - 1]))
            throw ConfigError("epsilons must be strictly decreasing");
    }
    if (opt.grid_points < 33) throw ConfigError("comparison grid needs at least 33 points");
    if (!(opt.tol > 0.0)) throw ConfigError("integration tolerance must be positive");

    const std::vector<double> grid = uniform_grid(opt.grid_points);
    const FormFamilyValidation fam = validate_form_family(ff, grid);
    if (!fam.pass) throw DomainError("form family fails validation: " + fam.failures.front());

    // The projection must have constant finite rank and be weakly associated
    // with the family away from the crossing times.
    int rank = -1;
    for (double t : grid) {
        const Matrix p = p_curve.eval(t);
        const int r = rank_svd(p);
        if (rank < 0) rank = r;
        if (r != rank) {
            std::ostringstream msg;
            msg << "projection rank changes on the grid: " << rank << " vs " << r
                << " at t = " << t;
            throw DomainError(msg.str());
        }
        bool near_crossing = false;
        for (double tc : opt.crossing_set)
            if (std::abs(t - tc) < opt.exclusion_radius) near_crossing = true;
        if (near_crossing) continue;
        const Matrix a = cplx(0.0, -1.0) * ff.solve_gram(ff.form(t));
        VerifyOptions vopt;
        vopt.tolerance = opt.association_tol;
        const AssociationReport rep = verify_association(a, p, lambda_curve(t), vopt);
        if (!rep.pass) {
            std::ostringstream msg;
            msg << "projection is not weakly associated with the family at t = " << t;
            throw DomainError(msg.str());
        }
    }

    const bool with_full = p_curve.smoothness() >= 3;
    const GramGeometry& geom = ff.geometry();
    const Matrix eye = identity(ff.dim());
    GeneratorFn a_gen = detail::form_generator(ff);

    std::vector<detail::FormDefects> defects(opt.epsilons.size());
    parallel_for_index(opt.epsilons.size(), opt.workers, [&](std::size_t idx) {
        const double eps = opt.epsilons[idx];
        detail::FormDefects& slot = defects[idx];
        try {
            const Propagator u = kisynski_propagate(ff, eps, grid, opt.tol);
            GeneratorFn v0_gen = [&lambda_curve, &p_curve, eps](double t) {
                const Matrix p = p_curve.eval(t);
                const Matrix dp = p_curve.deriv(t, 1);
                return Matrix((lambda_curve(t) / eps) * p + commutator(dp, p));
            };
            const Propagator v0 =
                build_propagator(v0_gen, grid, scaled_controls(eps, opt.tol), eps);
            const Matrix p0 = p_curve.eval(0.0);
            for (std::size_t k = 0; k < grid.size(); ++k) {
                const Matrix uk = u.from_start(k);
                const Matrix diff = uk - v0.from_start(k);
                const Matrix pt = p_curve.eval(grid[k]);
                slot.uv_right = std::max(slot.uv_right, geom.op_norm(Matrix(diff * p0)));
                slot.uv_left = std::max(slot.uv_left, geom.op_norm(Matrix(pt * diff)));
                slot.od1 = std::max(slot.od1,
                                    geom.op_norm(Matrix((eye - pt) * uk * p0)));
                slot.od2 = std::max(slot.od2,
                                    geom.op_norm(Matrix(pt * uk * (eye - p0))));
            }
            if (with_full) {
                GeneratorFn v_gen = [&a_gen, &p_curve, eps](double t) {
                    const Matrix p = p_curve.eval(t);
                    const Matrix dp = p_curve.deriv(t, 1);
                    return Matrix((1.0 / eps) * a_gen(t) + commutator(dp, p));
                };
                const Propagator v =
                    build_propagator(v_gen, grid, scaled_controls(eps, opt.tol), eps);
                for (std::size_t k = 0; k < grid.size(); ++k)
                    slot.uv_full = std::max(
                        slot.uv_full,
                        geom.op_norm(Matrix(u.from_start(k) - v.from_start(k))));
                slot.has_full = true;
            }
            slot.ok = true;
        } catch (const Error& e) {
            slot.error = e.what();
        }
    });

    const double floor = 100.0 * opt.tol;
    auto assemble = [&](const std::string& kind,
                        const std::function<double(const detail::FormDefects&)>& pick) {
        SweepResult r;
        r.scenario_id = opt.scenario_id;
        r.harness = "forms";
        r.defect_kind = kind;
        r.integrator_floor = floor;
        for (std::size_t i = 0; i < opt.epsilons.size(); ++i) {
            if (defects[i].ok)
                r.samples.push_back({opt.epsilons[i], pick(defects[i])});
            else
                r.failed.emplace_back(opt.epsilons[i], defects[i].error);
        }
        return r;
    };

    std::vector<SweepResult> results;
    results.push_back(assemble("UV", [](const detail::FormDefects& d) { return d.uv_right; }));
    results.push_back(
        assemble("UV_left", [](const detail::FormDefects& d) { return d.uv_left; }));
    results.push_back(
        assemble("offdiag_1", [](const detail::FormDefects& d) { return d.od1; }));
    results.push_back(
        assemble("offdiag_2", [](const detail::FormDefects& d) { return d.od2; }));
    if (with_full)
        results.push_back(
            assemble("UV_full", [](const detail::FormDefects& d) { return d.uv_full; }));
    return results;
}

inline std::vector<SweepResult> form_nogap_harness(const FormScenario& fs,
                                                   FormHarnessOptions opt) {
    opt.scenario_id = fs.id;
    opt.crossing_set = fs.crossing_set;
    return form_nogap_harness(fs.family, fs.lambda_curve, fs.projection_curve, opt);
}

// ---------------------------------------------------------------------------
// Expectation drift in the gram geometry
// ---------------------------------------------------------------------------

// sup_t |<U x, P(t) U x>_G - <x, P(0) x>_G|: the adiabatic invariance of the
// followed-band population, measured without any comparison propagator.
inline double gram_expectation_drift(const Propagator& u, const OperatorFamily& p_curve,
                                     const GramGeometry& geom, const Vector& x) {
    if (p_curve.dim() != u.dim())
        throw DomainError("projection curve dimension does not match the propagator");
    if (x.size() != u.dim())
        throw DomainError("state dimension does not match the propagator");
    const auto& grid = u.grid();
    const cplx initial = geom.inner(x, Vector(p_curve.eval(grid.front()) * x));
    double worst = 0.0;
    for (std::size_t k = 0; k < grid.size(); ++k) {
        const Vector ux = u.from_start(k) * x;
        const cplx current = geom.inner(ux, Vector(p_curve.eval(grid[k]) * ux));
        worst = std::max(worst, std::abs(current - initial));
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Loader
// ---------------------------------------------------------------------------

// Builds a built-in form scenario by catalog key.
inline FormScenario load_form_scenario(const std::string& key, int dim = 16) {
    if (key == "S6" || key == "form_crossing") return make_form_crossing(dim);
    throw ConfigError("unknown form scenario '" + key + "'");
}

}  // namespace adlab
