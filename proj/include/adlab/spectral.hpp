#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "adlab/contour.hpp"
#include "adlab/errors.hpp"
#include "adlab/linalg.hpp"

namespace adlab {

// --------------------------------------------------------------------------
// Resolvent (z - A)^{-1} with a near-singularity guard. The guard estimates
// dist(z, spectrum) from the inverse of the solution norm and refuses to
// return a solve that is numerically meaningless.
// --------------------------------------------------------------------------
struct ResolventOptions {
    double near_tol = 1e-13;      // relative distance-to-spectrum cutoff
    double residual_tol = 1e-6;   // relative residual cutoff for the solve
};

inline Matrix resolvent(const Matrix& a, cplx z, const ResolventOptions& opts = {}) {
    const Eigen::Index n = a.rows();
    if (n != a.cols()) throw DomainError("resolvent: matrix must be square");
    Matrix shifted = -a;
    shifted.diagonal().array() += z;
    Eigen::PartialPivLU<Matrix> lu(shifted);
    Matrix x = lu.solve(identity(n));
    if (!x.allFinite())
        throw NearSingularError("resolvent point is numerically on the spectrum", 0.0);
    const double scale = std::max(1.0, max_abs(a) + std::abs(z));
    // 1/|X| lower-bounds dist(z, spectrum); max_abs under-estimates |X| by at
    // most a factor n, so this proxy over-estimates the distance by <= n.
    const double dist_proxy = 1.0 / std::max(max_abs(x), 1e-300);
    if (dist_proxy < opts.near_tol * scale * double(n)) {
        const double dist = 1.0 / op_norm(x);
        if (dist < opts.near_tol * scale)
            throw NearSingularError("resolvent point is numerically on the spectrum",
                                    dist);
    }
    const double residual = max_abs(shifted * x - identity(n));
    if (residual > opts.residual_tol)
        throw NearSingularError("resolvent solve residual too large; point is "
                                "effectively on the spectrum",
                                dist_proxy);
    return x;
}

// --------------------------------------------------------------------------
// Riesz projection: contour integral of the resolvent. The contour must wind
// exactly once around the enclosed part of the spectrum and zero times around
// the rest, and must keep a positive distance from every eigenvalue.
// --------------------------------------------------------------------------
struct RieszOptions {
    double quad_tol = 1e-12;   // node-doubling stop criterion (max-abs)
    int max_nodes = 4096;
    double idem_tol = 1e-8;    // accept threshold on |P^2 - P|
    bool guard_spectrum = true;
    double margin_tol = 1e-10; // minimal allowed distance contour <-> eigenvalue
};

struct Projection {
    Matrix mat;
    Eigen::Index rank = 0;            // round(Re tr P)
    Eigen::Index enclosed = -1;       // eigenvalue count inside (with multiplicity)
    double idempotency = 0.0;
    double spectral_margin = 0.0;     // min distance from contour to spectrum
    int nodes = 0;                    // quadrature nodes at convergence
};

inline Projection riesz_projection(const Matrix& a, const Contour& k,
                                   const RieszOptions& opts = {}) {
    if (a.rows() != a.cols()) throw DomainError("riesz_projection: matrix must be square");
    Projection out;
    out.spectral_margin = std::numeric_limits<double>::infinity();
    if (opts.guard_spectrum) {
        const Vector eigs = eigenvalues(a);
        Eigen::Index inside = 0;
        for (Eigen::Index i = 0; i < eigs.size(); ++i) {
            const int w = k.winding(eigs(i));
            if (w != 0 && w != 1)
                throw ContourError("contour winds more than once around spectrum");
            inside += w;
            out.spectral_margin = std::min(out.spectral_margin, k.distance(eigs(i)));
        }
        out.enclosed = inside;
        if (out.spectral_margin <= opts.margin_tol)
            throw ContourError("contour passes through (numerical) spectrum");
    }
    ResolventOptions ropts;
    QuadratureResult quad = contour_integral(
        k, [&](cplx z) { return resolvent(a, z, ropts); }, opts.quad_tol,
        opts.max_nodes);
    out.mat = std::move(quad.value);
    out.nodes = quad.nodes;
    out.idempotency = idempotency_defect(out.mat);
    const cplx tr = out.mat.trace();
    out.rank = Eigen::Index(std::lround(tr.real()));
    if (std::abs(tr - cplx(double(out.rank), 0.0)) > 0.01)
        throw ConvergenceError("projection trace is far from an integer",
                               std::abs(tr - cplx(double(out.rank), 0.0)));
    if (out.idempotency > opts.idem_tol)
        throw ConvergenceError("contour integral is not idempotent to tolerance",
                               out.idempotency);
    if (opts.guard_spectrum && out.rank != out.enclosed)
        throw ConvergenceError("projection rank disagrees with enclosed eigenvalue count");
    return out;
}

// --------------------------------------------------------------------------
// Weakly associated projection of order m at an isolated eigenvalue lambda:
// P projects onto the generalized kernel ker (A - lambda)^m along the range
// ran (A - lambda)^m, where m is the smallest power at which the kernel
// stabilizes. Built from SVD bases; optionally cross-checked against a Riesz
// projection over a separating circle.
// --------------------------------------------------------------------------
struct WeakOptions {
    double rank_rel = 1e-10;    // SVD rank cutoff (relative)
    double cluster_tol = 1e-4;  // relative width of the lambda cluster
    bool crosscheck = true;     // compare with a Riesz projection
    double quad_tol = 1e-12;
};

struct WeaklyAssociatedProjection {
    Matrix mat;
    int order = 0;                 // m: kernel-chain stabilization power
    Eigen::Index rank = 0;         // dim ker (A - lambda)^m
    double idempotency = 0.0;
    double basis_condition = 1.0;  // condition of [kernel | range] basis
    double riesz_defect = -1.0;    // |P - P_riesz|, -1 when not cross-checked
};

inline WeaklyAssociatedProjection weakly_associated_projection(
    const Matrix& a, cplx lambda, const WeakOptions& opts = {}) {
    const Eigen::Index n = a.rows();
    if (n != a.cols())
        throw DomainError("weakly_associated_projection: matrix must be square");
    Matrix shifted = a;
    shifted.diagonal().array() -= lambda;

    WeaklyAssociatedProjection out;
    Matrix power = identity(n);
    Eigen::Index prev_nullity = 0;
    int m = 0;
    Matrix stabilized = power;
    for (int k = 1; k <= int(n); ++k) {
        power = power * shifted;
        const Eigen::Index nullity = n - rank_svd(power, opts.rank_rel);
        if (k == 1 && nullity == 0)
            throw DomainError("weakly_associated_projection: lambda is not an eigenvalue");
        if (nullity == prev_nullity) break;
        prev_nullity = nullity;
        m = k;
        stabilized = power;
    }
    out.order = m;
    out.rank = prev_nullity;

    const Matrix kernel = kernel_basis(stabilized, opts.rank_rel);
    const Matrix range = range_basis(stabilized, opts.rank_rel);
    if (kernel.cols() + range.cols() != n)
        throw ConvergenceError(
            "generalized kernel and range dimensions do not add up to the space");
    Matrix basis(n, n);
    basis.leftCols(kernel.cols()) = kernel;
    basis.rightCols(range.cols()) = range;
    out.basis_condition = condition_number(basis);
    if (!std::isfinite(out.basis_condition) || out.basis_condition > 1e12)
        throw ConvergenceError(
            "generalized kernel and range are numerically not complementary",
            out.basis_condition);
    const Matrix basis_inv = basis.partialPivLu().solve(Matrix::Identity(n, n));
    out.mat = kernel * basis_inv.topRows(kernel.cols());
    out.idempotency = idempotency_defect(out.mat);

    if (opts.crosscheck) {
        const Vector eigs = eigenvalues(a);
        const double scale = std::max(1.0, eigs.cwiseAbs().maxCoeff());
        double cluster_radius = 0.0;
        double separation = std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < eigs.size(); ++i) {
            const double d = std::abs(eigs(i) - lambda);
            if (d <= opts.cluster_tol * scale)
                cluster_radius = std::max(cluster_radius, d);
            else
                separation = std::min(separation, d);
        }
        double radius;
        if (std::isfinite(separation)) {
            radius = 0.5 * (separation + cluster_radius);
            if (radius <= cluster_radius)
                throw ContourError(
                    "no separating circle between the lambda cluster and the rest");
        } else {
            radius = cluster_radius + 1.0;  // whole spectrum is the cluster
        }
        RieszOptions ropts;
        ropts.quad_tol = opts.quad_tol;
        const Projection riesz =
            riesz_projection(a, Contour::make_circle(lambda, radius), ropts);
        out.riesz_defect = op_norm(out.mat - riesz.mat);
    }
    return out;
}

// --------------------------------------------------------------------------
// Checks that P is weakly associated with A at lambda with order m:
//   P^2 = P, AP = PA, (A-lambda)^m P = 0, (A-lambda)^m injective on ran(1-P),
//   and P is exactly the generalized kernel/range splitting projector.
// All defects are reported as raw operator norms; `pass` compares them
// against `tolerance` scaled by the natural size of each quantity.
// --------------------------------------------------------------------------
struct VerifyOptions {
    int order = 0;             // 0: detect the order automatically
    double tolerance = 1e-8;
    double rank_rel = 1e-10;   // SVD cutoff for kernel/range bases
    double injectivity_floor = 1e-12;
};

struct AssociationReport {
    double idempotency = 0.0;
    double commutation = 0.0;
    double nilpotency = 0.0;             // |(A-lambda)^m P|
    double complement_injectivity = 0.0; // sigma_min of (A-lambda)^m on ran(1-P)
    double direct_sum = 0.0;             // kernel (+) range consistency defect
    double projection_match = 0.0;       // |P - P_reconstructed|
    int order = 0;
    Eigen::Index rank = 0;
    bool pass = false;
    double tolerance = 0.0;
};

inline AssociationReport verify_association(const Matrix& a, const Matrix& p,
                                            cplx lambda,
                                            const VerifyOptions& opts = {}) {
    const Eigen::Index n = a.rows();
    if (n != a.cols() || p.rows() != n || p.cols() != n)
        throw DomainError("verify_association: dimension mismatch");
    AssociationReport rep;
    rep.tolerance = opts.tolerance;
    rep.idempotency = idempotency_defect(p);
    rep.commutation = op_norm(commutator(a, p));
    rep.rank = rank_svd(p, opts.rank_rel);

    Matrix shifted = a;
    shifted.diagonal().array() -= lambda;
    const double p_norm = std::max(op_norm(p), 1e-300);

    // Find the nilpotency order on ran P (smallest power that kills it).
    int m = opts.order;
    Matrix power_m;
    if (m > 0) {
        power_m = identity(n);
        for (int k = 0; k < m; ++k) power_m = power_m * shifted;
    } else {
        Matrix power = identity(n);
        double best_rel = std::numeric_limits<double>::infinity();
        for (int k = 1; k <= int(n); ++k) {
            power = power * shifted;
            const double scale_k = std::max(op_norm(power) * p_norm, 1e-300);
            const double rel = op_norm(power * p) / scale_k;
            if (rel < best_rel) {
                best_rel = rel;
                m = k;
                power_m = power;
            }
            if (rel <= opts.tolerance) break;
        }
    }
    rep.order = m;
    rep.nilpotency = op_norm(power_m * p);

    const double scale_m = std::max(1.0, op_norm(power_m));
    const Matrix kernel = kernel_basis(power_m, opts.rank_rel);
    const Matrix range = range_basis(power_m, opts.rank_rel);

    // Direct-sum consistency of ker (+) ran: dimensions add up, the kernel
    // basis is annihilated, and the range basis captures the full range.
    rep.direct_sum = double(std::abs(kernel.cols() + range.cols() - n));
    if (kernel.cols() > 0)
        rep.direct_sum += op_norm(power_m * kernel) / scale_m;
    rep.direct_sum +=
        op_norm(power_m - range * (range.adjoint() * power_m)) / scale_m;

    if (kernel.cols() + range.cols() == n) {
        Matrix basis(n, n);
        basis.leftCols(kernel.cols()) = kernel;
        basis.rightCols(range.cols()) = range;
        Eigen::PartialPivLU<Matrix> lu(basis);
        const Matrix basis_inv = lu.solve(Matrix::Identity(n, n));
        const Matrix p_rec = kernel * basis_inv.topRows(kernel.cols());
        rep.projection_match = op_norm(p - p_rec);
    } else {
        rep.projection_match = std::numeric_limits<double>::infinity();
    }

    // Injectivity of (A-lambda)^m on the complement ran(1-P).
    const Matrix comp = range_basis(identity(n) - p, opts.rank_rel);
    if (comp.cols() == 0) {
        rep.complement_injectivity = std::numeric_limits<double>::infinity();
    } else {
        Eigen::JacobiSVD<Matrix> svd(Matrix(power_m * comp));
        const auto& s = svd.singularValues();
        rep.complement_injectivity = s(s.size() - 1);
    }

    const double tol = opts.tolerance;
    const double a_scale = std::max(1.0, op_norm(a));
    rep.pass = rep.idempotency <= tol && rep.commutation <= tol * a_scale &&
               rep.nilpotency <= tol * scale_m * p_norm && rep.direct_sum <= tol &&
               rep.projection_match <= tol * std::max(1.0, p_norm) &&
               rep.complement_injectivity > opts.injectivity_floor;
    return rep;
}

// --------------------------------------------------------------------------
// A projection is weakly associated with A at lambda exactly when its
// conjugate transpose is weakly associated with the Hilbert-space adjoint of
// A at conj(lambda), with the same order. This runs both verifications.
// --------------------------------------------------------------------------
struct DualPairReport {
    AssociationReport primal;
    AssociationReport dual;
    bool order_match = false;
    double max_defect = 0.0;
    bool pass = false;
};

inline DualPairReport dual_projection_check(const Matrix& a, const Matrix& p,
                                            cplx lambda,
                                            const VerifyOptions& opts = {}) {
    DualPairReport rep;
    rep.primal = verify_association(a, p, lambda, opts);
    VerifyOptions dual_opts = opts;
    if (dual_opts.order == 0) dual_opts.order = rep.primal.order;
    rep.dual = verify_association(a.adjoint(), p.adjoint(), std::conj(lambda),
                                  dual_opts);
    rep.order_match = rep.primal.order == rep.dual.order;
    rep.max_defect = std::max(
        {rep.primal.idempotency, rep.primal.commutation, rep.primal.nilpotency,
         rep.primal.direct_sum, rep.primal.projection_match, rep.dual.idempotency,
         rep.dual.commutation, rep.dual.nilpotency, rep.dual.direct_sum,
         rep.dual.projection_match});
    rep.pass = rep.primal.pass && rep.dual.pass && rep.order_match;
    return rep;
}

}  // namespace adlab
