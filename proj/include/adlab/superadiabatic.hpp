#pragma once
// Iterative dressing of spectral projections (Joye-Pfister scheme) and the
// higher-order adiabatic harness built on it.  Level k replaces the generator
// by A_k(t) = A(t) - eps K_{k-1}(t), takes P_k(t) as the Riesz projection of
// A_k(t) over the scenario's contour band, and sets K_k = [P_k', P_k].  For a
// uniform gap the level differences sup_t |K_k - K_{k-1}| decay like
// (c d eps)^k k!, which yields O(eps^n) comparison defects at a fixed level n
// and exponentially small ones at the optimal truncation level
// n*(eps) = floor(1 / (e c d eps)).

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "adlab/adiabatic.hpp"

namespace adlab {

using ContourFn = std::function<Contour(double)>;
using MatrixCurve = std::function<Matrix(double)>;

namespace detail {

// Barycentric interpolation on Chebyshev-Lobatto nodes mapped to [0, 1],
// entrywise for matrix curves.  Each K-level curve is resampled this way so
// that level k+1 does not recursively re-evaluate the whole level-k tower.
struct ChebCurve {
    std::vector<double> nodes;
    std::vector<double> weights;
    std::vector<Matrix> values;

    Matrix operator()(double t) const {
        Matrix num = Matrix::Zero(values.front().rows(), values.front().cols());
        double den = 0.0;
        for (std::size_t j = 0; j < nodes.size(); ++j) {
            const double d = t - nodes[j];
            if (std::abs(d) < 1e-14) return values[j];
            const double w = weights[j] / d;
            num += w * values[j];
            den += w;
        }
        return Matrix(num / den);
    }
};

inline ChebCurve cheb_fit(int points, const MatrixCurve& f) {
    if (points < 2) throw DomainError("interpolation needs at least 2 nodes");
    ChebCurve c;
    const int m = points - 1;
    const double pi = std::acos(-1.0);
    for (int j = 0; j <= m; ++j) {
        c.nodes.push_back(0.5 * (1.0 - std::cos(pi * double(j) / m)));
        double w = (j % 2 == 0) ? 1.0 : -1.0;
        if (j == 0 || j == m) w *= 0.5;
        c.weights.push_back(w);
        c.values.push_back(f(c.nodes.back()));
    }
    return c;
}

// Evenly spread probe points on a contour, for resolvent-sup measurements.
inline std::vector<cplx> sample_contour(const Contour& k, int m) {
    std::vector<cplx> pts;
    const double pi = std::acos(-1.0);
    if (k.kind == Contour::Kind::circle) {
        for (int j = 0; j < m; ++j)
            pts.push_back(k.center +
                          k.radius * std::exp(cplx(0.0, 2.0 * pi * double(j) / m)));
        return pts;
    }
    const std::size_t edges = k.vertices.size();
    const int per_edge = std::max(1, int((m + int(edges) - 1) / int(edges)));
    for (std::size_t e = 0; e < edges; ++e) {
        const cplx a = k.vertices[e], b = k.vertices[(e + 1) % edges];
        for (int j = 0; j < per_edge; ++j)
            pts.push_back(a + (b - a) * (double(j) / per_edge));
    }
    return pts;
}

}  // namespace detail

// --------------------------------------------------------------------------
// One level of the iterative scheme.  `contour_margin` is the signed minimal
// clearance between the contours and sigma(A_k(t)) over the report grid: it
// is the plain distance while the contour encloses the same number of
// eigenvalues as at level 0, and turns negative once an eigenvalue has
// crossed to the wrong side.
// --------------------------------------------------------------------------
struct IterationState {
    int level = 0;
    double epsilon = 0.0;
    MatrixCurve a_curve;  // A_k(t) = A(t) - eps K_{k-1}(t)
    MatrixCurve p_curve;  // Riesz projection of A_k(t) over the contour at t
    MatrixCurve k_curve;  // [P_k'(t), P_k(t)], resampled on Chebyshev nodes
    bool well_defined = false;
    double contour_margin = 0.0;
    double diff_from_previous = 0.0;  // sup_t |K_k - K_{k-1}|, 0 at level 0
    double idempotency_defect = 0.0;  // max over the grid of |P_k^2 - P_k|
    double commutation_defect = 0.0;  // max over the grid of |[P_k, A_k]|
};

struct IterateOptions {
    int grid_points = 65;      // report grid for margins and sup norms
    int cheb_points = 33;      // interpolation nodes per K-level curve
    double fd_step = 1e-3;     // step for the order-4 differentiation of P_k
    double quad_tol = 1e-12;   // contour quadrature tolerance
    double margin_floor = 1e-6;  // clearance below which a level is rejected
};

inline std::vector<IterationState> iterate(const SpectralScenario& s,
                                           const ContourFn& contours, double epsilon,
                                           int levels,
                                           const IterateOptions& opt = {}) {
    if (s.gap_class != GapClass::uniform)
        throw CapabilityError("the iterative scheme needs a uniform spectral gap");
    if (!(epsilon > 0.0)) throw DomainError("epsilon must be positive");
    if (levels < 1) throw DomainError("need at least one iteration level");
    if (!contours) throw DomainError("contour map must be set");

    const auto grid = uniform_grid(opt.grid_points);
    RieszOptions ropts;
    ropts.quad_tol = opt.quad_tol;

    std::vector<IterationState> states;
    std::vector<Eigen::Index> expected(grid.size(), -1);  // enclosed count, level 0
    MatrixCurve k_prev;  // level k-1 interpolant, empty at level 0

    for (int level = 0; level <= levels; ++level) {
        IterationState st;
        st.level = level;
        st.epsilon = epsilon;
        st.a_curve = [fam = s.family, epsilon, shift = k_prev](double t) {
            Matrix a = fam.eval(t);
            if (shift) a -= epsilon * shift(t);
            return a;
        };

        double margin = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const Vector eigs = eigenvalues(st.a_curve(grid[i]));
            const Contour gamma = contours(grid[i]);
            Eigen::Index inside = 0;
            double dist = std::numeric_limits<double>::infinity();
            for (Eigen::Index j = 0; j < eigs.size(); ++j) {
                if (gamma.winding(eigs(j)) != 0) ++inside;
                dist = std::min(dist, gamma.distance(eigs(j)));
            }
            if (expected[i] < 0) expected[i] = inside;
            margin = std::min(margin, inside == expected[i] ? dist : -dist);
        }
        st.contour_margin = margin;
        st.well_defined = margin > opt.margin_floor;
        if (!st.well_defined) {  // abort at the first collision, keep the record
            states.push_back(std::move(st));
            break;
        }

        const MatrixCurve a_curve = st.a_curve;
        const MatrixCurve p_at = [a_curve, contours, ropts](double t) {
            return riesz_projection(a_curve(t), contours(t), ropts).mat;
        };
        st.p_curve = p_at;
        const MatrixCurve k_at = [p_at, h = opt.fd_step](double t) {
            return commutator(Matrix(fd_derivative(p_at, t, 1, h)), p_at(t));
        };
        st.k_curve = [kc = detail::cheb_fit(opt.cheb_points, k_at)](double t) {
            return kc(t);
        };

        for (double t : grid) {
            const Matrix p = p_at(t);
            st.idempotency_defect = std::max(st.idempotency_defect, idempotency_defect(p));
            st.commutation_defect =
                std::max(st.commutation_defect, max_abs(commutator(p, a_curve(t))));
            if (k_prev)
                st.diff_from_previous = std::max(
                    st.diff_from_previous, op_norm(Matrix(st.k_curve(t) - k_prev(t))));
        }

        k_prev = st.k_curve;
        states.push_back(std::move(st));
    }
    return states;
}

// --------------------------------------------------------------------------
// Contour band for the scheme: circles around lambda(t) with radius r0/2, the
// midpoint of the band [3 r0/7, 4 r0/7], where r0 is the measured minimal
// distance between the followed spectral subset and the rest of the spectrum.
// --------------------------------------------------------------------------
struct BandContours {
    ContourFn at;
    double r0 = 0.0;
};

inline BandContours make_band_contours(const SpectralScenario& s,
                                       int grid_points = 65) {
    if (s.gap_class != GapClass::uniform || !s.contour_at)
        throw CapabilityError("band contours need a uniform-gap scenario with contours");
    const auto grid = uniform_grid(grid_points);
    double r0 = std::numeric_limits<double>::infinity();
    double spread = 0.0;
    bool complement_seen = false;
    for (double t : grid) {
        const Vector eigs = eigenvalues(s.family.eval(t));
        const Contour base = s.contour_at(t);
        const cplx center = s.lambda_curve(t);
        std::vector<cplx> followed, others;
        for (Eigen::Index j = 0; j < eigs.size(); ++j)
            (base.winding(eigs(j)) != 0 ? followed : others).push_back(eigs(j));
        if (followed.empty())
            throw ContourError("scenario contour encloses no spectrum");
        for (cplx f : followed) {
            spread = std::max(spread, std::abs(f - center));
            for (cplx o : others) r0 = std::min(r0, std::abs(f - o));
        }
        complement_seen = complement_seen || !others.empty();
    }
    if (!complement_seen)
        throw CapabilityError("no complementary spectrum to measure the gap against");
    if (spread > r0 / 7.0 + 1e-9)
        throw ContourError("followed spectrum strays too far from lambda(t) "
                           "for the contour band geometry");
    BandContours band;
    band.r0 = r0;
    band.at = [lam = s.lambda_curve, radius = 0.5 * r0](double t) {
        return Contour::make_circle(lam(t), radius);
    };
    return band;
}

// --------------------------------------------------------------------------
// Operational estimate of the largest epsilon for which the scheme stays
// well-defined, via bisection, together with the measured constants entering
// the theoretical threshold: a = sup_{t, z on contour} |(z - A(t))^{-1}| and
// b = sup_t |[P'(t), P(t)]|.
// --------------------------------------------------------------------------
struct EpsilonStarEstimate {
    double epsilon_star = 0.0;
    double resolvent_sup = 0.0;   // a
    double commutator_sup = 0.0;  // b
    int levels = 0;               // probe depth used by the bisection
};

struct EpsilonStarOptions {
    int levels = 3;
    double upper = 0.5;
    int bisection_steps = 12;
    IterateOptions iterate;
};

inline EpsilonStarEstimate epsilon_star_estimate(const SpectralScenario& s,
                                                 const ContourFn& contours,
                                                 const EpsilonStarOptions& opt = {}) {
    if (s.gap_class != GapClass::uniform)
        throw CapabilityError("the iterative scheme needs a uniform spectral gap");
    EpsilonStarEstimate est;
    est.levels = opt.levels;
    const auto grid = uniform_grid(opt.iterate.grid_points);
    for (double t : grid) {
        for (cplx z : detail::sample_contour(contours(t), 16)) {
            try {
                est.resolvent_sup = std::max(
                    est.resolvent_sup, op_norm(resolvent(s.family.eval(t), z)));
            } catch (const Error&) {  // contour grazes the spectrum: a = infinity
                est.resolvent_sup = std::numeric_limits<double>::infinity();
            }
        }
        est.commutator_sup = std::max(
            est.commutator_sup, op_norm(kato_generator(s.projection_curve, t).k));
    }

    const auto ok = [&](double eps) {
        const auto states = iterate(s, contours, eps, opt.levels, opt.iterate);
        return int(states.size()) == opt.levels + 1 && states.back().well_defined;
    };
    if (ok(opt.upper)) {
        est.epsilon_star = opt.upper;
        return est;
    }
    double hi = opt.upper, lo = opt.upper;
    bool found = false;
    for (int i = 0; i < 40 && !found; ++i) {
        lo *= 0.5;
        found = ok(lo);
    }
    if (!found) return est;  // epsilon_star = 0: no usable epsilon located
    for (int i = 0; i < opt.bisection_steps; ++i) {
        const double mid = 0.5 * (lo + hi);
        (ok(mid) ? lo : hi) = mid;
    }
    est.epsilon_star = lo;
    return est;
}

// Optimal truncation level floor(1 / (e c d eps)).  The product c d is what
// matters; a few ulps of reciprocal roundoff are absorbed so that exact
// reciprocals of representable products land on the intended integer.
inline int n_star(double epsilon, double c, double d) {
    if (!(epsilon > 0.0) || !(c > 0.0) || !(d > 0.0))
        throw DomainError("n_star needs positive epsilon, c, d");
    const double raw = 1.0 / (std::exp(1.0) * c * d * epsilon);
    return int(std::floor(raw * (1.0 + 8.0 * std::numeric_limits<double>::epsilon())));
}

// --------------------------------------------------------------------------
// Single-epsilon higher-order run at a fixed dressing level: builds U_eps and
// the comparison evolution V_eps of (1/eps) A_n + K_n = (1/eps) A + (K_n -
// K_{n-1}) and measures all theorem quantities against the dressed
// projections.
// --------------------------------------------------------------------------
struct SuperadiabaticRun {
    int level = 0;
    double projection_drift = 0.0;  // sup_t |P_eps(t) - P(t)|
    double uv_defect = 0.0;         // sup_t |U_eps(t) - V_eps(t)|
    OffdiagDefect offdiag;          // w.r.t. the dressed projections
    double intertwining = 0.0;      // sup_t |P_eps(t) V(t) - V(t) P_eps(0)|
    std::vector<double> k_diffs;    // sup_t |K_k - K_{k-1}| for k = 1..level
};

inline SuperadiabaticRun superadiabatic_run_from_states(
    const SpectralScenario& s, const std::vector<IterationState>& states, int level,
    int grid_points, double tol) {
    if (level < 1) throw DomainError("dressing level must be >= 1");
    if (int(states.size()) <= level || !states[std::size_t(level)].well_defined)
        throw ConvergenceError(
            "iteration not well-defined at level " +
                std::to_string(int(states.size()) - 1) + " for epsilon = " +
                std::to_string(states.front().epsilon),
            states.back().contour_margin);
    const double epsilon = states.front().epsilon;

    const IterationState& top = states[std::size_t(level)];
    const MatrixCurve k_top = top.k_curve;
    const MatrixCurve k_prev = states[std::size_t(level) - 1].k_curve;
    const GeneratorFn gen = [fam = s.family, epsilon, k_top, k_prev](double t) {
        return Matrix(fam.eval(t) / epsilon + k_top(t) - k_prev(t));
    };
    const auto grid = uniform_grid(grid_points);
    const Propagator u = build_propagator(s.family, epsilon, grid, tol);
    const Propagator v =
        build_propagator(gen, grid, scaled_controls(epsilon, tol), epsilon);

    SuperadiabaticRun run;
    run.level = level;
    for (int k = 1; k <= level; ++k)
        run.k_diffs.push_back(states[std::size_t(k)].diff_from_previous);
    run.uv_defect = adiabatic_defect(u, v);

    const Matrix p0 = top.p_curve(grid.front());
    const Matrix one = identity(p0.rows());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const Matrix pt = top.p_curve(grid[i]);
        run.projection_drift =
            std::max(run.projection_drift,
                     op_norm(Matrix(pt - s.projection_curve.eval(grid[i]))));
        const Matrix& ut = u.from_start(i);
        run.offdiag.offdiag_1 =
            std::max(run.offdiag.offdiag_1, op_norm(Matrix((one - pt) * ut * p0)));
        run.offdiag.offdiag_2 =
            std::max(run.offdiag.offdiag_2, op_norm(Matrix(pt * ut * (one - p0))));
        const Matrix& vt = v.from_start(i);
        run.intertwining =
            std::max(run.intertwining, op_norm(Matrix(pt * vt - vt * p0)));
    }
    return run;
}

inline SuperadiabaticRun superadiabatic_run(const SpectralScenario& s,
                                            const ContourFn& contours,
                                            double epsilon, int level,
                                            int grid_points, double tol,
                                            const IterateOptions& iopt = {}) {
    if (level < 1) throw DomainError("dressing level must be >= 1");
    const auto states = iterate(s, contours, epsilon, level, iopt);
    if (int(states.size()) != level + 1 || !states.back().well_defined)
        throw ConvergenceError(
            "iteration not well-defined at level " +
                std::to_string(int(states.size()) - 1) + " for epsilon = " +
                std::to_string(epsilon),
            states.back().contour_margin);
    return superadiabatic_run_from_states(s, states, level, grid_points, tol);
}

// --------------------------------------------------------------------------
// Epsilon sweep at a fixed dressing level, or at the measured optimal
// truncation: the level of least |K_k - K_{k-1}| (summation to the least
// term), capped at level_cap.  The theoretical level n*(eps) is available
// separately through n_star(); the harness prefers the least term because it
// adapts to where the measured level decay actually bottoms out.
// --------------------------------------------------------------------------
enum class Truncation { fixed, optimal };

struct SuperadiabaticOptions {
    std::vector<double> epsilons;
    int grid_points = 65;
    double tol = 1e-11;
    int workers = 1;
    Truncation mode = Truncation::fixed;
    int level = 1;       // dressing level for fixed mode
    int level_cap = 12;  // truncation cap for optimal mode
    IterateOptions iterate;
};

inline std::vector<SweepResult> superadiabatic_harness(
    const SpectralScenario& s, const SuperadiabaticOptions& opt) {
    detail::check_sweep_options(
        SweepOptions{opt.epsilons, opt.grid_points, opt.tol, opt.workers});
    if (s.gap_class != GapClass::uniform)
        throw CapabilityError("the higher-order harness needs a uniform gap");
    if (opt.mode == Truncation::optimal && !s.family.analytic())
        throw CapabilityError("optimal truncation needs an analytic family");
    if (opt.level < 1) throw ConfigError("dressing level must be >= 1");
    if (opt.level_cap < 1) throw ConfigError("level cap must be >= 1");

    const BandContours band = make_band_contours(s, opt.grid_points);

    struct Slot {
        bool ok = false;
        std::string error;
        SuperadiabaticRun run;
    };
    std::vector<Slot> slots(opt.epsilons.size());
    parallel_for_index(opt.epsilons.size(), opt.workers, [&](std::size_t i) {
        try {
            if (opt.mode == Truncation::fixed) {
                slots[i].run =
                    superadiabatic_run(s, band.at, opt.epsilons[i], opt.level,
                                       opt.grid_points, opt.tol, opt.iterate);
            } else {
                const auto states = iterate(s, band.at, opt.epsilons[i],
                                            opt.level_cap, opt.iterate);
                int best = 0;
                for (std::size_t k = 1; k < states.size(); ++k)
                    if (states[k].well_defined &&
                        (best == 0 ||
                         states[k].diff_from_previous <
                             states[std::size_t(best)].diff_from_previous))
                        best = int(k);
                if (best == 0)
                    throw ConvergenceError("no well-defined dressing level for "
                                           "epsilon = " +
                                               std::to_string(opt.epsilons[i]),
                                           states.back().contour_margin);
                slots[i].run = superadiabatic_run_from_states(
                    s, states, best, opt.grid_points, opt.tol);
            }
            slots[i].ok = true;
        } catch (const Error& e) {
            slots[i].error = e.what();
        }
    });

    const double floor = 100.0 * opt.tol;
    std::vector<SweepResult> out;
    const auto collect = [&](const std::string& kind, auto&& pick,
                             const std::string& model) {
        SweepResult r;
        r.scenario_id = s.id;
        r.harness = "superadiabatic";
        r.defect_kind = kind;
        r.integrator_floor = floor;
        for (std::size_t i = 0; i < opt.epsilons.size(); ++i) {
            if (!slots[i].ok) {
                r.failed.emplace_back(opt.epsilons[i], slots[i].error);
                continue;
            }
            r.samples.push_back({opt.epsilons[i], pick(slots[i].run)});
        }
        try {
            r.fit = fit_rate(r.samples, model, floor);
        } catch (const Error&) {
            r.fit.reset();
        }
        out.push_back(std::move(r));
    };
    const std::string defect_model =
        opt.mode == Truncation::fixed ? "power" : "exponential";
    collect("projection_drift",
            [](const SuperadiabaticRun& r) { return r.projection_drift; }, "power");
    collect("UV", [](const SuperadiabaticRun& r) { return r.uv_defect; }, defect_model);
    collect("offdiag_1", [](const SuperadiabaticRun& r) { return r.offdiag.offdiag_1; },
            defect_model);
    collect("offdiag_2", [](const SuperadiabaticRun& r) { return r.offdiag.offdiag_2; },
            defect_model);
    return out;
}

}  // namespace adlab
