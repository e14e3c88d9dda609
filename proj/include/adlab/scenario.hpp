#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "adlab/contour.hpp"
#include "adlab/errors.hpp"
#include "adlab/frames.hpp"
#include "adlab/linalg.hpp"
#include "adlab/operator_family.hpp"
#include "adlab/smooth.hpp"
#include "adlab/spectral.hpp"

namespace adlab {

enum class GapClass { uniform, nonuniform, none };

inline std::string to_string(GapClass g) {
    switch (g) {
        case GapClass::uniform: return "uniform";
        case GapClass::nonuniform: return "nonuniform";
        default: return "none";
    }
}

// --------------------------------------------------------------------------
// A bundled experiment: a matrix family A(t) together with the spectral data
// the harnesses consume — the followed eigenvalue curve lambda(t), a smooth
// projection curve P(t) associated with it, the gap classification with its
// crossing set, the nilpotency bound m0, a resolvent ray angle for the
// crossing machinery, and the claimed propagator bound.
// --------------------------------------------------------------------------
struct SpectralScenario {
    std::string id;           // catalog key, e.g. "S1"
    std::string name;         // descriptive key, e.g. "gap_uniform_2level"
    std::string description;
    OperatorFamily family;
    OperatorFamily projection_curve;  // exact derivatives of every order
    std::function<cplx(double)> lambda_curve;
    GapClass gap_class = GapClass::uniform;
    std::vector<double> crossing_set;  // times where lambda meets the rest
    int m0 = 1;                        // nilpotency order of (A - lambda) on ran P
    int projection_rank = 1;
    std::function<double(double)> ray_angle;  // direction of resolvent probes
    double delta0 = 0.5;                      // probe scale: lambda + d e^{i angle}, d <= delta0
    double m_bound = 1.0;                     // claimed sup over eps, s<=t of |U_eps(t,s)|
    std::function<Contour(double)> contour_at;  // enclosing lambda(t) only; null if gap closes
    double min_gap = 0.0;                       // uniform lower bound; 0 when the gap closes
};

namespace detail {

inline Matrix rotation_generator_2d() {
    Matrix j(2, 2);
    j << 0.0, -1.0, 1.0, 0.0;
    return j;
}

inline Matrix diag_matrix(const std::vector<cplx>& entries) {
    const Eigen::Index n = Eigen::Index(entries.size());
    Matrix d = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) d(i, i) = entries[std::size_t(i)];
    return d;
}

// Projection curve sharing the family's frame: P(t) = e^{theta J} P0 e^{-theta J}.
inline FrameFamily frame_projection(const Matrix& j, const AngleCurve& angle,
                                    const Matrix& p0) {
    return FrameFamily(j, angle, {{SmoothScalar::constant(1.0), p0}});
}

// Two-level skew-Hermitian family: eigenvalues +- i e(t) with
// e(t) = 1 + 0.25 sin(pi t) >= 1, rotated by the given angle curve.
inline SpectralScenario two_level_uniform(std::string id, std::string name,
                                          const SmoothScalar& theta, bool analytic) {
    const Matrix j = rotation_generator_2d();
    const AngleCurve angle = AngleCurve::from(theta);
    const SmoothScalar eplus =
        SmoothScalar::constant(1.0) + SmoothScalar::sine(0.25, std::numbers::pi);
    FrameFamily fam(j, angle, {{eplus, diag_matrix({cplx(0, 1), cplx(0, -1)})}});
    FrameFamily proj = frame_projection(j, angle, diag_matrix({1.0, 0.0}));

    SpectralScenario s;
    s.id = std::move(id);
    s.name = std::move(name);
    s.family = fam.family(analytic ? -1 : 3);
    s.projection_curve = proj.family(analytic ? -1 : 3);
    s.lambda_curve = [eplus](double t) { return cplx(0, 1) * eplus.eval(t); };
    s.gap_class = GapClass::uniform;
    s.m0 = 1;
    s.projection_rank = 1;
    s.ray_angle = [](double) { return std::numbers::pi / 2.0; };
    s.delta0 = 0.5;
    s.m_bound = 1.0;  // skew-Hermitian family: the propagator is unitary
    s.contour_at = [eplus](double t) {
        const double e = eplus.eval(t).real();
        return Contour::make_circle(cplx(0, e), e);
    };
    s.min_gap = 2.0;  // |i e - (-i e)| = 2 e >= 2
    return s;
}

inline SpectralScenario make_s1() {
    SmoothScalar theta = SmoothScalar::poly({0.0, 0.35}) +
                         SmoothScalar::sine(0.1, std::numbers::pi);
    SpectralScenario s =
        two_level_uniform("S1", "gap_uniform_2level", theta, /*analytic=*/false);
    s.description =
        "two-level skew-Hermitian family with uniform gap >= 2; rotating frame "
        "with curved angle; adiabatic defect decays at first order";
    return s;
}

inline SpectralScenario make_s5() {
    SmoothScalar theta = SmoothScalar::poly({0.0, 0.4});
    SpectralScenario s =
        two_level_uniform("S5", "analytic_family", theta, /*analytic=*/true);
    s.description =
        "analytic two-level family with uniform gap; supports complex-time "
        "evaluation, so optimally truncated expansions reach exponential accuracy";
    return s;
}

inline SpectralScenario make_s2() {
    const Matrix j = rotation_generator_2d();
    SmoothScalar theta = SmoothScalar::poly({0.0, 0.8});
    const AngleCurve angle = AngleCurve::from(theta);
    // f(t) = 0.8 - 1.6 t changes sign at t = 1/2: the followed eigenvalue
    // i f(t) crosses the other branch -i f(t) there.
    SmoothScalar f = SmoothScalar::poly({0.8, -1.6});
    FrameFamily fam(j, angle, {{f, diag_matrix({cplx(0, 1), cplx(0, -1)})}});
    FrameFamily proj = frame_projection(j, angle, diag_matrix({1.0, 0.0}));

    SpectralScenario s;
    s.id = "S2";
    s.name = "gap_crossing";
    s.description =
        "two-level skew-Hermitian family whose followed eigenvalue crosses the "
        "other branch at t = 1/2; gap vanishes there, defects are o(1)";
    s.family = fam.family(3);
    s.projection_curve = proj.family(3);
    s.lambda_curve = [f](double t) { return cplx(0, 1) * f.eval(t); };
    s.gap_class = GapClass::nonuniform;
    s.crossing_set = {0.5};
    s.m0 = 1;
    s.projection_rank = 1;
    s.ray_angle = [](double) { return 0.0; };  // spectrum is purely imaginary
    s.delta0 = 0.5;
    s.m_bound = 1.0;
    return s;
}

inline SpectralScenario make_s3() {
    Matrix j(3, 3);
    j << 0.0, -1.0, 0.3,  //
        1.0, 0.0, -0.6,   //
        -0.3, 0.6, 0.0;
    SmoothScalar theta = SmoothScalar::poly({0.0, 0.9});
    const AngleCurve angle = AngleCurve::from(theta);
    // Eigenvalue branches 0, -1.5 i (t - 1/3), +1.8 i (t - 2/3): the followed
    // branch lambda = 0 is met by the second at t = 1/3 and the third at t = 2/3.
    SmoothScalar c2 = SmoothScalar::poly({cplx(0, 0.5), cplx(0, -1.5)});
    SmoothScalar c3 = SmoothScalar::poly({cplx(0, -1.2), cplx(0, 1.8)});
    FrameFamily fam(j, angle,
                    {{c2, diag_matrix({0.0, 1.0, 0.0})},
                     {c3, diag_matrix({0.0, 0.0, 1.0})}});
    FrameFamily proj = frame_projection(j, angle, diag_matrix({1.0, 0.0, 0.0}));

    SpectralScenario s;
    s.id = "S3";
    s.name = "nogap_crossing";
    s.description =
        "three-level skew-Hermitian family following the constant eigenvalue 0, "
        "which the two moving branches cross at t = 1/3 and t = 2/3";
    s.family = fam.family(3);
    s.projection_curve = proj.family(3);
    s.lambda_curve = [](double) { return cplx(0.0, 0.0); };
    s.gap_class = GapClass::nonuniform;
    s.crossing_set = {1.0 / 3.0, 2.0 / 3.0};
    s.m0 = 1;
    s.projection_rank = 1;
    s.ray_angle = [](double) { return 0.0; };  // spectrum is purely imaginary
    s.delta0 = 1.0;
    s.m_bound = 1.0;
    return s;
}

inline SpectralScenario make_s4() {
    Matrix j(3, 3);
    j << 0.0, -1.0, 0.3,  //
        1.0, 0.0, -0.6,   //
        -0.3, 0.6, 0.0;
    SmoothScalar theta = SmoothScalar::poly({0.0, 0.5}) +
                         SmoothScalar::sine(0.08, 2.0 * std::numbers::pi);
    const AngleCurve angle = AngleCurve::from(theta);
    // D(t) = [[l0, 1, 0], [0, l0, 0], [0, 0, mu]] with
    //   l0(t) = -0.6 + i (0.3 sin(pi t) - 0.15)   (Jordan block of size 2)
    //   mu(t) = -0.6 + i (0.3 sin(pi t) + 0.1 sin(2 pi t) + 1.3)
    // Gap |mu - l0| = |1.45 + 0.1 sin(2 pi t)| in [1.35, 1.55]. The Hermitian
    // part of D has eigenvalues {-0.1, -1.1, -0.6} < 0, so the scaled
    // propagator is a contraction for every eps.
    Matrix c0(3, 3);
    c0 << cplx(-0.6, -0.15), 1.0, 0.0,  //
        0.0, cplx(-0.6, -0.15), 0.0,    //
        0.0, 0.0, cplx(-0.6, 1.3);
    FrameFamily fam(
        j, angle,
        {{SmoothScalar::constant(1.0), c0},
         {SmoothScalar::sine(0.3, std::numbers::pi), cplx(0, 1) * Matrix::Identity(3, 3)},
         {SmoothScalar::sine(0.1, 2.0 * std::numbers::pi),
          diag_matrix({0.0, 0.0, cplx(0, 1)})}});
    Matrix p0 = diag_matrix({1.0, 1.0, 0.0});
    FrameFamily proj = frame_projection(j, angle, p0);

    SpectralScenario s;
    s.id = "S4";
    s.name = "jordan_dissipative";
    s.description =
        "dissipative three-level family with a non-semisimple followed eigenvalue "
        "(Jordan block, nilpotency order 2) and uniform gap >= 1.35";
    s.family = fam.family(3);
    s.projection_curve = proj.family(3);
    SmoothScalar l0 = SmoothScalar::constant(cplx(-0.6, -0.15)) +
                      SmoothScalar::sine(cplx(0, 0.3), std::numbers::pi);
    s.lambda_curve = [l0](double t) { return l0.eval(t); };
    s.gap_class = GapClass::uniform;
    s.m0 = 2;
    s.projection_rank = 2;
    s.ray_angle = [](double) { return -std::numbers::pi / 2.0; };  // away from mu
    s.delta0 = 0.5;
    s.m_bound = 1.0;
    s.contour_at = [l0](double t) { return Contour::make_circle(l0.eval(t), 0.65); };
    s.min_gap = 1.35;
    return s;
}

}  // namespace detail

struct ScenarioInfo {
    std::string id;
    std::string name;
    std::string kind;  // "spectral" or "form"
    std::string description;
};

inline SpectralScenario make_scenario(const std::string& key) {
    if (key == "S1" || key == "gap_uniform_2level") return detail::make_s1();
    if (key == "S2" || key == "gap_crossing") return detail::make_s2();
    if (key == "S3" || key == "nogap_crossing") return detail::make_s3();
    if (key == "S4" || key == "jordan_dissipative") return detail::make_s4();
    if (key == "S5" || key == "analytic_family") return detail::make_s5();
    if (key == "S6" || key == "form_crossing")
        throw ConfigError("scenario '" + key +
                          "' is form-based: load it through the forms harness");
    throw ConfigError("unknown scenario '" + key + "'");
}

inline std::vector<ScenarioInfo> scenario_catalog() {
    std::vector<ScenarioInfo> list;
    for (const char* id : {"S1", "S2", "S3", "S4", "S5"}) {
        const SpectralScenario s = make_scenario(id);
        list.push_back({s.id, s.name, "spectral", s.description});
    }
    list.push_back({"S6", "form_crossing", "form",
                    "sesquilinear-form family on 16 sine modes with a potential "
                    "switch that crosses two eigenvalue branches at t = 1/2"});
    return list;
}

// --------------------------------------------------------------------------
// Scenario validation: the loader refuses scenarios that fail any of these.
//   1. lambda(t) is an eigenvalue of A(t) on the grid.
//   2. P(t) passes association checks at every grid point away from crossings.
//   3. P(t) is twice continuously differentiable (finite-difference check),
//      including across the crossing set.
//   4. lambda(t) + d e^{i angle(t)} stays resolvable for d in (0, delta0].
//   5. declared uniform gap really holds on the grid.
// --------------------------------------------------------------------------
struct ScenarioValidation {
    double lambda_defect = 0.0;        // max over grid of dist(lambda, sigma)/scale
    double association_defect = 0.0;   // max verify_association defect off-crossing
    int association_points = 0;
    SmoothnessReport projection_smoothness;
    double ray_margin = 0.0;           // min over probes of dist(point, sigma)/delta
    double measured_min_gap = 0.0;     // only meaningful when min_gap > 0
    double contour_projection_match = 0.0;  // Riesz projection vs projection curve
    bool pass = false;
    std::vector<std::string> failures;  // named failing checks
};

inline ScenarioValidation validate_scenario(const SpectralScenario& s,
                                            const std::vector<double>& grid,
                                            double assoc_tol = 1e-8,
                                            double exclusion_radius = 0.02) {
    if (grid.size() < 2) throw DomainError("validate_scenario: grid too small");
    ScenarioValidation rep;

    auto near_crossing = [&](double t) {
        return std::any_of(s.crossing_set.begin(), s.crossing_set.end(), [&](double n) {
            return std::abs(t - n) <= exclusion_radius;
        });
    };

    // (1) lambda in spectrum + (5) gap measurement
    double min_gap = std::numeric_limits<double>::infinity();
    for (double t : grid) {
        const Matrix a = s.family.eval(t);
        const cplx lambda = s.lambda_curve(t);
        const Vector eigs = eigenvalues(a);
        double scale = 1.0, dist = std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < eigs.size(); ++i) {
            scale = std::max(scale, std::abs(eigs(i)));
            dist = std::min(dist, std::abs(eigs(i) - lambda));
        }
        rep.lambda_defect = std::max(rep.lambda_defect, dist / scale);
        if (s.min_gap > 0.0) {
            // distance from lambda to the eigenvalues outside its cluster
            double gap = std::numeric_limits<double>::infinity();
            for (Eigen::Index i = 0; i < eigs.size(); ++i) {
                const double d = std::abs(eigs(i) - lambda);
                if (d > 1e-3 * scale) gap = std::min(gap, d);
            }
            min_gap = std::min(min_gap, gap);
        }
    }
    if (rep.lambda_defect > 1e-6)
        rep.failures.push_back("eigenvalue check: lambda(t) not in the spectrum");
    if (s.min_gap > 0.0) {
        rep.measured_min_gap = min_gap;
        if (min_gap < 0.9 * s.min_gap)
            rep.failures.push_back("gap check: measured gap below the declared bound");
    }

    // (2) association away from crossings
    for (double t : grid) {
        if (near_crossing(t)) continue;
        const Matrix a = s.family.eval(t);
        const Matrix p = s.projection_curve.eval(t);
        VerifyOptions opt;
        opt.order = s.m0;
        opt.tolerance = assoc_tol;
        const AssociationReport ar = verify_association(a, p, s.lambda_curve(t), opt);
        const double worst =
            std::max({ar.idempotency, ar.commutation, ar.nilpotency, ar.direct_sum,
                      ar.projection_match});
        rep.association_defect = std::max(rep.association_defect, worst);
        ++rep.association_points;
        if (!ar.pass) {
            rep.failures.push_back("association check failed at t = " +
                                   std::to_string(t));
            break;
        }
        if (rank_svd(p) != s.projection_rank) {
            rep.failures.push_back("projection rank mismatch at t = " +
                                   std::to_string(t));
            break;
        }
    }

    // (3) projection curve twice continuously differentiable (across crossings)
    rep.projection_smoothness = validate_smoothness(s.projection_curve, 2, grid, 1e-6);
    if (!rep.projection_smoothness.pass)
        rep.failures.push_back("projection smoothness check failed");

    // (4) resolvent ray: lambda + d e^{i angle} resolvable for d down the scale
    rep.ray_margin = std::numeric_limits<double>::infinity();
    for (double t : grid) {
        const Vector eigs = eigenvalues(s.family.eval(t));
        const cplx lambda = s.lambda_curve(t);
        const double angle = s.ray_angle ? s.ray_angle(t) : 0.0;
        for (double delta : {s.delta0, s.delta0 / 4.0, s.delta0 / 16.0}) {
            const cplx point = lambda + delta * std::exp(cplx(0, angle));
            double dist = std::numeric_limits<double>::infinity();
            for (Eigen::Index i = 0; i < eigs.size(); ++i)
                dist = std::min(dist, std::abs(eigs(i) - point));
            rep.ray_margin = std::min(rep.ray_margin, dist / delta);
        }
    }
    if (!(rep.ray_margin > 1e-3))
        rep.failures.push_back("ray check: lambda + delta e^{i angle} hits the spectrum");

    // Contour consistency on a thinned grid (quadrature is the expensive part).
    if (s.contour_at) {
        const std::size_t stride = std::max<std::size_t>(1, grid.size() / 8);
        for (std::size_t k = 0; k < grid.size(); k += stride) {
            const double t = grid[k];
            const Matrix a = s.family.eval(t);
            const Projection pr = riesz_projection(a, s.contour_at(t));
            const double diff = op_norm(Matrix(pr.mat - s.projection_curve.eval(t)));
            rep.contour_projection_match = std::max(rep.contour_projection_match, diff);
            if (pr.rank != s.projection_rank) {
                rep.failures.push_back("contour encloses the wrong eigenvalue count");
                break;
            }
        }
        if (rep.contour_projection_match > 1e-8)
            rep.failures.push_back("contour projection does not match the curve");
    }

    rep.pass = rep.failures.empty();
    return rep;
}

// Loader used by the CLI: build + validate, naming the first failing check.
inline SpectralScenario load_spectral_scenario(const std::string& key,
                                               int grid_points = 65) {
    SpectralScenario s = make_scenario(key);
    const ScenarioValidation v = validate_scenario(s, uniform_grid(grid_points));
    if (!v.pass)
        throw ConfigError("scenario '" + key + "' failed validation: " + v.failures.front());
    return s;
}

}  // namespace adlab
