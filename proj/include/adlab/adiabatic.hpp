#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "adlab/contour.hpp"
#include "adlab/errors.hpp"
#include "adlab/evolution.hpp"
#include "adlab/linalg.hpp"
#include "adlab/operator_family.hpp"
#include "adlab/parallel.hpp"
#include "adlab/scenario.hpp"
#include "adlab/spectral.hpp"

namespace adlab {

// --------------------------------------------------------------------------
// Kato generator K(t) = [P'(t), P(t)]. Differentiating P^2 = P gives
// P P' P = 0; the defect of that identity is attached as a health check.
// --------------------------------------------------------------------------
struct KatoGenerator {
    Matrix k;
    double ppp_defect = 0.0;
};

inline KatoGenerator kato_generator(const OperatorFamily& p_curve, double t) {
    const Matrix p = p_curve.eval(t);
    const Matrix dp = p_curve.deriv(t, 1);
    KatoGenerator out;
    out.k = commutator(dp, p);
    out.ppp_defect = op_norm(Matrix(p * dp * p));
    return out;
}

inline GeneratorFn kato_term(const OperatorFamily& p_curve) {
    return [p_curve](double t) { return kato_generator(p_curve, t).k; };
}

// Generator of the comparison evolution V_eps: (1/eps) A + [P', P].
inline GeneratorFn adiabatic_generator(const OperatorFamily& family,
                                       const OperatorFamily& p_curve, double epsilon) {
    if (!(epsilon > 0.0)) throw DomainError("epsilon must be positive");
    return [family, p_curve, epsilon](double t) {
        return Matrix(family.eval(t) / epsilon + kato_generator(p_curve, t).k);
    };
}

// Generator of the crossing-robust comparison V_{0 eps}: (1/eps) A P + [P', P].
inline GeneratorFn projected_adiabatic_generator(const OperatorFamily& family,
                                                 const OperatorFamily& p_curve,
                                                 double epsilon) {
    if (!(epsilon > 0.0)) throw DomainError("epsilon must be positive");
    return [family, p_curve, epsilon](double t) {
        const Matrix p = p_curve.eval(t);
        return Matrix(family.eval(t) * p / epsilon +
                      commutator(Matrix(p_curve.deriv(t, 1)), p));
    };
}

inline Propagator comparison_propagator(const SpectralScenario& s, double epsilon,
                                        const std::vector<double>& grid, double tol) {
    return build_propagator(adiabatic_generator(s.family, s.projection_curve, epsilon),
                            grid, scaled_controls(epsilon, tol), epsilon);
}

inline Propagator projected_comparison_propagator(const SpectralScenario& s,
                                                  double epsilon,
                                                  const std::vector<double>& grid,
                                                  double tol) {
    return build_propagator(
        projected_adiabatic_generator(s.family, s.projection_curve, epsilon), grid,
        scaled_controls(epsilon, tol), epsilon);
}

// --------------------------------------------------------------------------
// Gap machinery: B(t) = (1/2 pi i) contour integral of R(z) P'(t) R(z) solves
// the commutator equation B A - A B = [P', P] with P the Riesz projection for
// the same contour. The residual is computed directly and must clear the
// tolerance, else the contour did not separate the spectrum as required.
// --------------------------------------------------------------------------
struct CommutatorSolution {
    Matrix b;
    Matrix p;            // Riesz projection for the same contour
    double residual = 0.0;  // max-abs of B A - A B - [P', P]
    int nodes = 0;
};

struct CommutatorOptions {
    double quad_tol = 1e-12;
    double residual_tol = 1e-8;
};

inline CommutatorSolution commutator_B(const Matrix& a, const Matrix& pprime,
                                       const Contour& gamma,
                                       const CommutatorOptions& opt = {}) {
    RieszOptions ropt;
    ropt.quad_tol = opt.quad_tol;
    const Projection proj = riesz_projection(a, gamma, ropt);
    const QuadratureResult quad = contour_integral(
        gamma,
        [&](cplx z) {
            const Matrix r = resolvent(a, z);
            return Matrix(r * pprime * r);
        },
        opt.quad_tol);
    CommutatorSolution out;
    out.b = quad.value;
    out.p = proj.mat;
    out.nodes = quad.nodes;
    out.residual =
        max_abs(Matrix(out.b * a - a * out.b - commutator(pprime, proj.mat)));
    if (out.residual > opt.residual_tol)
        throw ConvergenceError("commutator solution residual exceeds tolerance",
                               out.residual);
    return out;
}

// --------------------------------------------------------------------------
// Mollified projection derivative Q_n(t) = integral of J_{1/n}(t - r) P'(r) dr
// over [0,1], with J_{1/n} the normalized exp(-1/(1-x^2)) bump scaled to
// support (-1/n, 1/n). Near the interval ends part of the bump mass is cut
// off, so Q_n only approximates P' on compacts inside (0,1).
// --------------------------------------------------------------------------
namespace detail {

inline double bump_raw(double x) {
    return std::abs(x) < 1.0 ? std::exp(-1.0 / (1.0 - x * x)) : 0.0;
}

inline double bump_mass() {
    // All derivatives of the bump vanish at the support ends, so the
    // trapezoidal value converges faster than any power of the step.
    static const double mass = [] {
        const int n = 4096;
        double acc = 0.0;
        for (int i = 1; i < n; ++i) acc += bump_raw(-1.0 + 2.0 * double(i) / n);
        return acc * 2.0 / n;
    }();
    return mass;
}

// Composite 8-point Gauss-Legendre over [lo, hi], panels doubled until two
// successive values agree to tol.
template <typename F>
Matrix integrate_matrix(F&& f, double lo, double hi, double tol,
                        int max_panels = 4096) {
    static const double gx[4] = {0.1834346424956498, 0.5255324099163290,
                                 0.7966664774136267, 0.9602898564975363};
    static const double gw[4] = {0.3626837833783620, 0.3137066458778873,
                                 0.2223810344533745, 0.1012285362903763};
    auto pass = [&](int panels) {
        Matrix acc;
        bool first = true;
        for (int i = 0; i < panels; ++i) {
            const double a = lo + (hi - lo) * double(i) / panels;
            const double b = lo + (hi - lo) * double(i + 1) / panels;
            const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
            for (int j = 0; j < 4; ++j) {
                for (double sgn : {-1.0, 1.0}) {
                    Matrix term = (gw[j] * half) * f(mid + sgn * gx[j] * half);
                    if (first) {
                        acc = std::move(term);
                        first = false;
                    } else {
                        acc += term;
                    }
                }
            }
        }
        return acc;
    };
    int panels = 4;
    Matrix value = pass(panels);
    double delta = std::numeric_limits<double>::infinity();
    while (true) {
        if (2 * panels > max_panels)
            throw ConvergenceError("interval quadrature did not converge", delta);
        Matrix next = pass(2 * panels);
        delta = max_abs(Matrix(next - value));
        value.swap(next);
        panels *= 2;
        if (delta <= tol) break;
    }
    return value;
}

}  // namespace detail

// J_{1/n}(s): nonnegative, unit integral, supported in (-1/n, 1/n).
inline double mollifier_kernel(double s, int n) {
    return double(n) * detail::bump_raw(double(n) * s) / detail::bump_mass();
}

inline Matrix mollified_Pprime(const OperatorFamily& p_curve, int n, double t,
                               double quad_tol = 1e-11) {
    if (n < 1) throw DomainError("mollifier index must be >= 1");
    const double lo = std::max(0.0, t - 1.0 / n);
    const double hi = std::min(1.0, t + 1.0 / n);
    if (!(hi > lo)) return Matrix::Zero(p_curve.dim(), p_curve.dim());
    return detail::integrate_matrix(
        [&](double r) {
            return Matrix(mollifier_kernel(t - r, n) * p_curve.deriv(r, 1));
        },
        lo, hi, quad_tol);
}

// --------------------------------------------------------------------------
// Approximate commutator machinery for the crossing case. With
//   Rbar_d = (lambda + d e^{i angle} - A)^{-1} (1 - P)
// and the prefix products L_k = Rbar_{d_1} ... Rbar_{d_k}, the operators
//   B = sum_{k=0}^{m0-1} L_{k+1} Q (lambda-A)^k P + (lambda-A)^k P Q L_{k+1}
//   C+ = sum_k d_{k+1} e^{i angle} L_{k+1} Q (lambda-A)^k P
//   C- = sum_k (lambda-A)^k P Q d_{k+1} e^{i angle} L_{k+1}
// satisfy B A - A B + (C+ - C-) = [Q, P] exactly, provided P commutes with A
// and (A - lambda)^{m0} P = 0 (both hold for honestly associated projections).
// --------------------------------------------------------------------------
struct ApproxCommutator {
    Matrix b;
    Matrix c;               // C = C+ - C-
    double residual = 0.0;  // max-abs of B A - A B + C - [Q, P]
    double b_norm = 0.0;
    double c_norm = 0.0;
    double bound_sum = 0.0;   // sum_{k=1}^{m0} (d_1 ... d_k)^{-1}
    double c_estimate = 0.0;  // b_norm / bound_sum, the measured bound constant
};

inline ApproxCommutator approx_commutator_B(const Matrix& a, const Matrix& p,
                                            cplx lambda, const Matrix& q_n,
                                            const std::vector<double>& deltas,
                                            double theta,
                                            double residual_tol = 1e-9) {
    const int m0 = int(deltas.size());
    if (m0 < 1) throw DomainError("need at least one ray offset");
    const Eigen::Index n = a.rows();
    const Matrix pbar = identity(int(n)) - p;
    const cplx ray = std::exp(cplx(0.0, theta));

    std::vector<Matrix> prefix(static_cast<std::size_t>(m0));  // L_{k+1}, k = 0..m0-1
    Matrix acc = identity(int(n));
    for (int i = 0; i < m0; ++i) {
        const double d = deltas[std::size_t(i)];
        if (!(d > 0.0)) throw DomainError("ray offsets must be positive");
        Matrix r;
        try {
            r = resolvent(a, lambda + d * ray);
        } catch (const NearSingularError& e) {
            throw NearSingularError("resolvent ray violated at offset delta = " +
                                        std::to_string(d) + ": " + e.what(),
                                    e.distance_estimate);
        }
        acc = Matrix(acc * r * pbar);
        prefix[std::size_t(i)] = acc;
    }

    std::vector<Matrix> powers(static_cast<std::size_t>(m0));  // (lambda - A)^k P
    const Matrix lm = lambda * identity(int(n)) - a;
    powers[0] = p;
    for (int k = 1; k < m0; ++k) powers[std::size_t(k)] = lm * powers[std::size_t(k - 1)];

    Matrix b = Matrix::Zero(n, n), cp = Matrix::Zero(n, n), cm = Matrix::Zero(n, n);
    for (int k = 0; k < m0; ++k) {
        const Matrix left = prefix[std::size_t(k)] * q_n * powers[std::size_t(k)];
        const Matrix right = powers[std::size_t(k)] * q_n * prefix[std::size_t(k)];
        b += left + right;
        cp += deltas[std::size_t(k)] * ray * left;
        cm += deltas[std::size_t(k)] * ray * right;
    }

    ApproxCommutator out;
    out.b = b;
    out.c = cp - cm;
    out.residual = max_abs(Matrix(b * a - a * b + out.c - commutator(q_n, p)));
    out.b_norm = op_norm(b);
    out.c_norm = op_norm(out.c);
    double prod = 1.0;
    for (int k = 0; k < m0; ++k) {
        prod *= deltas[std::size_t(k)];
        out.bound_sum += 1.0 / prod;
    }
    out.c_estimate = out.b_norm / out.bound_sum;
    if (out.residual > residual_tol)
        throw ConvergenceError("approximate commutator residual exceeds tolerance",
                               out.residual);
    return out;
}

// --------------------------------------------------------------------------
// Defect measurements over a propagator's grid.
// --------------------------------------------------------------------------
inline double adiabatic_defect(const Propagator& u, const Propagator& v) {
    if (u.epsilon() != v.epsilon())
        throw DomainError("propagators must share the same epsilon");
    if (u.grid() != v.grid())
        throw DomainError("propagators must share the same grid");
    double sup = 0.0;
    for (std::size_t k = 0; k < u.grid().size(); ++k)
        sup = std::max(sup, op_norm(Matrix(u.from_start(k) - v.from_start(k))));
    return sup;
}

// sup over the grid of |(U(t) - V(t)) P(0)|: the restricted comparison used
// with the projected generator, whose conclusion only concerns ran P(0).
inline double restricted_adiabatic_defect(const Propagator& u, const Propagator& v,
                                          const OperatorFamily& p_curve) {
    if (u.epsilon() != v.epsilon())
        throw DomainError("propagators must share the same epsilon");
    if (u.grid() != v.grid())
        throw DomainError("propagators must share the same grid");
    const Matrix p0 = p_curve.eval(u.grid().front());
    double sup = 0.0;
    for (std::size_t k = 0; k < u.grid().size(); ++k)
        sup = std::max(
            sup, op_norm(Matrix((u.from_start(k) - v.from_start(k)) * p0)));
    return sup;
}

struct OffdiagDefect {
    double offdiag_1 = 0.0;  // sup |(1 - P(t)) U(t) P(0)|
    double offdiag_2 = 0.0;  // sup |P(t) U(t) (1 - P(0))|
};

inline OffdiagDefect offdiag_defect(const Propagator& u,
                                    const OperatorFamily& p_curve) {
    const Matrix p0 = p_curve.eval(u.grid().front());
    const Matrix one = identity(int(p0.rows()));
    OffdiagDefect d;
    for (std::size_t k = 0; k < u.grid().size(); ++k) {
        const Matrix ut = u.from_start(k);
        const Matrix pt = p_curve.eval(u.grid()[k]);
        d.offdiag_1 = std::max(d.offdiag_1, op_norm(Matrix((one - pt) * ut * p0)));
        d.offdiag_2 = std::max(d.offdiag_2, op_norm(Matrix(pt * ut * (one - p0))));
    }
    return d;
}

// sup over the grid of |P(t) V(t) - V(t) P(0)|: zero in exact arithmetic for
// evolutions generated by (1/eps) A + [P', P].
inline double intertwining_defect(const Propagator& v,
                                  const OperatorFamily& p_curve) {
    const Matrix p0 = p_curve.eval(v.grid().front());
    double sup = 0.0;
    for (std::size_t k = 0; k < v.grid().size(); ++k) {
        const Matrix vt = v.from_start(k);
        const Matrix pt = p_curve.eval(v.grid()[k]);
        sup = std::max(sup, op_norm(Matrix(pt * vt - vt * p0)));
    }
    return sup;
}

// sup over the grid of |<U x, P(t) U x> - <x, P(0) x>| for a unit vector x.
inline double expectation_drift(const Propagator& u, const OperatorFamily& p_curve,
                                const Vector& x) {
    const Matrix p0 = p_curve.eval(u.grid().front());
    const cplx base = (x.adjoint() * p0 * x)(0);
    double sup = 0.0;
    for (std::size_t k = 0; k < u.grid().size(); ++k) {
        const Vector y = u.from_start(k) * x;
        const cplx val = (y.adjoint() * p_curve.eval(u.grid()[k]) * y)(0);
        sup = std::max(sup, std::abs(val - base));
    }
    return sup;
}

// --------------------------------------------------------------------------
// Rate fitting. Power model: least-squares line on (log eps, log defect),
// slope reported. Exponential model: line on (1/eps, log defect), g = -slope.
// Samples below 10x the floor are excluded and recorded.
// --------------------------------------------------------------------------
struct SweepSample {
    double epsilon = 0.0;
    double sup_defect = 0.0;
};

struct FitRecord {
    std::string model;  // "power" or "exponential"
    double slope_or_g = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
    double floor = 0.0;
    std::vector<std::size_t> excluded;  // indices of samples left out of the fit
    int used = 0;
};

inline FitRecord fit_rate(const std::vector<SweepSample>& samples,
                          const std::string& model, double floor) {
    if (model != "power" && model != "exponential")
        throw ConfigError("unknown fit model '" + model + "'");
    FitRecord rec;
    rec.model = model;
    rec.floor = floor;
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const SweepSample& s = samples[i];
        if (!(s.epsilon > 0.0)) throw DomainError("epsilon must be positive");
        if (!(s.sup_defect > 0.0) || s.sup_defect < 10.0 * floor) {
            rec.excluded.push_back(i);
            continue;
        }
        xs.push_back(model == "power" ? std::log(s.epsilon) : 1.0 / s.epsilon);
        ys.push_back(std::log(s.sup_defect));
    }
    if (xs.size() < 4)
        throw DomainError(
            "rate fit underdetermined: fewer than 4 samples above 10x the floor");
    const double n = double(xs.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ys[i];
    }
    const double denom = n * sxx - sx * sx;
    if (denom == 0.0) throw DomainError("rate fit degenerate: all abscissae equal");
    const double slope = (n * sxy - sx * sy) / denom;
    rec.intercept = (sy - slope * sx) / n;
    double ss_res = 0, ss_tot = 0;
    const double mean_y = sy / n;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double fit_y = rec.intercept + slope * xs[i];
        ss_res += (ys[i] - fit_y) * (ys[i] - fit_y);
        ss_tot += (ys[i] - mean_y) * (ys[i] - mean_y);
    }
    rec.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);
    rec.slope_or_g = model == "power" ? slope : -slope;
    rec.used = int(xs.size());
    return rec;
}

// Monotone-decrease check for the o(1) claims: each sample may exceed its
// predecessor by at most the noise factor, and the final value must drop
// below the given fraction of the initial one.
struct DecayCheck {
    bool monotone = false;
    double initial = 0.0;
    double final_value = 0.0;
    bool pass = false;
};

inline DecayCheck decay_check(const std::vector<SweepSample>& samples,
                              double noise_factor = 1.2,
                              double final_fraction = 0.25) {
    if (samples.size() < 2) throw DomainError("decay check needs >= 2 samples");
    DecayCheck c;
    c.monotone = true;
    for (std::size_t i = 1; i < samples.size(); ++i)
        if (samples[i].sup_defect > noise_factor * samples[i - 1].sup_defect)
            c.monotone = false;
    c.initial = samples.front().sup_defect;
    c.final_value = samples.back().sup_defect;
    c.pass = c.monotone && c.final_value < final_fraction * c.initial;
    return c;
}

// --------------------------------------------------------------------------
// Sweeps: propagate (U_eps, V_eps) or (U_eps, V_{0 eps}) per epsilon and
// collect the defect families. Failures are captured per epsilon rather than
// aborting the sweep. Jobs are pure, so fan-out never changes results.
// --------------------------------------------------------------------------
struct SweepResult {
    std::string scenario_id;
    std::string harness;      // "gap" | "nogap" | "superadiabatic" | "forms"
    std::string defect_kind;  // "UV" | "offdiag_1" | "offdiag_2" | "projection_drift"
    std::vector<SweepSample> samples;  // epsilon strictly decreasing
    std::optional<FitRecord> fit;
    double integrator_floor = 0.0;
    std::vector<std::pair<double, std::string>> failed;  // epsilon -> error
};

struct SweepOptions {
    std::vector<double> epsilons;  // strictly decreasing, in (0,1)
    int grid_points = 65;
    double tol = 1e-11;
    int workers = 1;
};

inline std::vector<double> default_epsilons() {
    std::vector<double> eps;
    for (int k = 3; k <= 10; ++k) eps.push_back(std::pow(2.0, -k));
    return eps;
}

namespace detail {

inline void check_sweep_options(const SweepOptions& opt) {
    if (opt.epsilons.empty()) throw ConfigError("epsilon list must not be empty");
    for (std::size_t i = 0; i < opt.epsilons.size(); ++i) {
        if (!(opt.epsilons[i] > 0.0 && opt.epsilons[i] < 1.0))
            throw ConfigError("epsilon values must lie in (0, 1)");
        if (i > 0 && !(opt.epsilons[i] < opt.epsilons[i - 1]))
            throw ConfigError("epsilon list must be strictly decreasing");
    }
    if (opt.grid_points < 33) throw ConfigError("grid needs at least 33 points");
    if (!(opt.tol > 0.0)) throw ConfigError("tolerance must be positive");
}

struct EpsilonDefects {
    bool ok = false;
    std::string error;
    double uv = 0.0;
    OffdiagDefect od;
};

template <typename JobFn>
std::vector<SweepResult> assemble_sweep(const SpectralScenario& s,
                                        const SweepOptions& opt,
                                        const std::string& harness, JobFn&& job,
                                        bool attach_fits) {
    check_sweep_options(opt);
    std::vector<EpsilonDefects> per_eps(opt.epsilons.size());
    parallel_for_index(opt.epsilons.size(), opt.workers, [&](std::size_t i) {
        EpsilonDefects& out = per_eps[i];
        try {
            out = job(opt.epsilons[i]);
            out.ok = true;
        } catch (const Error& e) {
            out.ok = false;
            out.error = e.what();
        }
    });

    const double floor = 100.0 * opt.tol;
    auto collect = [&](const std::string& kind, auto&& pick) {
        SweepResult r;
        r.scenario_id = s.id;
        r.harness = harness;
        r.defect_kind = kind;
        r.integrator_floor = floor;
        for (std::size_t i = 0; i < opt.epsilons.size(); ++i) {
            if (!per_eps[i].ok) {
                r.failed.emplace_back(opt.epsilons[i], per_eps[i].error);
                continue;
            }
            r.samples.push_back({opt.epsilons[i], pick(per_eps[i])});
        }
        if (attach_fits) {
            try {
                r.fit = fit_rate(r.samples, "power", floor);
            } catch (const Error&) {
                r.fit.reset();  // too few usable samples; leave the fit empty
            }
        }
        return r;
    };

    std::vector<SweepResult> out;
    out.push_back(collect("UV", [](const EpsilonDefects& d) { return d.uv; }));
    out.push_back(
        collect("offdiag_1", [](const EpsilonDefects& d) { return d.od.offdiag_1; }));
    out.push_back(
        collect("offdiag_2", [](const EpsilonDefects& d) { return d.od.offdiag_2; }));
    return out;
}

}  // namespace detail

// U_eps vs V_eps (generator (1/eps) A + [P', P]); power fits attached for
// uniform-gap scenarios, where the defect is O(eps).
inline std::vector<SweepResult> gap_sweep(const SpectralScenario& s,
                                          const SweepOptions& opt) {
    const auto grid = uniform_grid(opt.grid_points);
    return detail::assemble_sweep(
        s, opt, "gap",
        [&](double eps) {
            detail::EpsilonDefects d;
            const Propagator u = build_propagator(s.family, eps, grid, opt.tol);
            const Propagator v = comparison_propagator(s, eps, grid, opt.tol);
            d.uv = adiabatic_defect(u, v);
            d.od = offdiag_defect(u, s.projection_curve);
            return d;
        },
        /*attach_fits=*/s.gap_class == GapClass::uniform);
}

// U_eps vs V_{0 eps} (generator (1/eps) A P + [P', P]), compared on ran P(0).
// No rate fit: the conclusion is o(1), without a rate.
inline std::vector<SweepResult> nogap_sweep(const SpectralScenario& s,
                                            const SweepOptions& opt) {
    const auto grid = uniform_grid(opt.grid_points);
    return detail::assemble_sweep(
        s, opt, "nogap",
        [&](double eps) {
            detail::EpsilonDefects d;
            const Propagator u = build_propagator(s.family, eps, grid, opt.tol);
            const Propagator v0 = projected_comparison_propagator(s, eps, grid, opt.tol);
            d.uv = restricted_adiabatic_defect(u, v0, s.projection_curve);
            d.od = offdiag_defect(u, s.projection_curve);
            return d;
        },
        /*attach_fits=*/false);
}

// --------------------------------------------------------------------------
// Growth bound for the projected comparison evolution:
// |V_{0 eps}(t,s) P(s)| <= M c e^{M c (t-s)} with c = sup max(|P|, |P'|).
// --------------------------------------------------------------------------
struct ProjectedGrowthReport {
    double c = 0.0;
    double max_ratio = 0.0;
    bool pass = false;
};

inline ProjectedGrowthReport projected_growth_report(const Propagator& v0,
                                                     const OperatorFamily& p_curve,
                                                     double m_bound,
                                                     double slack = 1e-6) {
    ProjectedGrowthReport rep;
    for (double t : v0.grid())
        rep.c = std::max({rep.c, op_norm(p_curve.eval(t)),
                          op_norm(Matrix(p_curve.deriv(t, 1)))});
    const auto table = pair_table(v0);
    const auto& grid = v0.grid();
    const double mc = m_bound * rep.c;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const Matrix ps = p_curve.eval(grid[i]);
        for (std::size_t j = i; j < grid.size(); ++j) {
            const double bound = mc * std::exp(mc * (grid[j] - grid[i])) + slack;
            rep.max_ratio =
                std::max(rep.max_ratio,
                         op_norm(Matrix(table[i][j - i] * ps)) / bound);
        }
    }
    rep.pass = rep.max_ratio <= 1.0;
    return rep;
}

// --------------------------------------------------------------------------
// Partial-integration identity at fixed epsilon and uniform gap. Combining
// the commutator equation with integration by parts gives, for every t,
//   V(t) - U(t) = eps [U(t,s) B(s) V(s)]_{s=0}^{s=t}
//                 - eps int_0^t U(t,s) (B'(s) + B(s) [P'(s), P(s)]) V(s) ds,
// where B solves the commutator equation on the scenario's contours. Both
// sides are assembled independently (left from the two propagators, right
// from contour integrals, a finite-difference B', and Simpson quadrature) and
// compared in operator norm.
// --------------------------------------------------------------------------
struct IdentityCheck {
    double max_defect = 0.0;  // sup over probe times of |lhs - rhs|
    double lhs_scale = 0.0;   // sup over probe times of |lhs|
    double tolerance = 0.0;
    bool pass = false;
};

inline IdentityCheck partial_integration_check(const SpectralScenario& s,
                                               double epsilon, int grid_points,
                                               double tol, double check_tol = 2e-5) {
    if (!s.contour_at)
        throw CapabilityError("identity check needs contours around lambda(t)");
    if (grid_points < 5 || grid_points % 2 == 0)
        throw DomainError("identity check needs an odd grid of >= 5 points");
    const auto grid = uniform_grid(grid_points);
    const Propagator u = build_propagator(s.family, epsilon, grid, tol);
    const Propagator v = comparison_propagator(s, epsilon, grid, tol);

    auto b_at = [&](double t) {
        return commutator_B(s.family.eval(t), Matrix(s.projection_curve.deriv(t, 1)),
                            s.contour_at(t))
            .b;
    };
    const std::size_t n = grid.size();
    std::vector<Matrix> b(n), integrand(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double t = grid[k];
        b[k] = b_at(t);
        const Matrix bprime = fd_derivative(b_at, t, 1, 1e-4);
        integrand[k] =
            Matrix(bprime + b[k] * kato_generator(s.projection_curve, t).k) *
            v.from_start(k);
    }

    IdentityCheck rep;
    rep.tolerance = check_tol;
    // probe at the midpoint and the endpoint of the time interval
    for (std::size_t probe : {n / 2, n - 1}) {
        const Matrix lhs = v.from_start(probe) - u.from_start(probe);
        // Simpson over grid[0..probe] (probe is even for both choices)
        const double h = grid[1] - grid[0];
        Matrix integral = Matrix::Zero(lhs.rows(), lhs.cols());
        for (std::size_t k = 0; k <= probe; ++k) {
            const double w = (k == 0 || k == probe) ? 1.0 : (k % 2 == 1 ? 4.0 : 2.0);
            integral += w * Matrix(u.between(k, probe) * integrand[k]);
        }
        integral *= h / 3.0;
        const Matrix boundary = b[probe] * v.from_start(probe) -
                                u.from_start(probe) * b[0];
        const Matrix rhs = epsilon * (boundary - integral);
        rep.max_defect = std::max(rep.max_defect, op_norm(Matrix(lhs - rhs)));
        rep.lhs_scale = std::max(rep.lhs_scale, op_norm(lhs));
    }
    rep.pass = rep.max_defect <= check_tol;
    return rep;
}

}  // namespace adlab
