#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "adlab/evolution.hpp"
#include "adlab/experiment.hpp"
#include "adlab/frames.hpp"
#include "adlab/scenario.hpp"
#include "support/helpers.hpp"

using namespace adlab;
using Catch::Approx;

namespace {

Matrix rotation2(double th) {
    Matrix r(2, 2);
    r << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
    return r;
}

FrameFamily tilted_two_level() {
    Matrix j(2, 2);
    j << 0.0, -1.0, 1.0, 0.0;
    SmoothScalar theta =
        SmoothScalar::poly({0.0, 0.7}) + SmoothScalar::sine(0.2, std::numbers::pi);
    Matrix d1(2, 2), d2(2, 2);
    d1 << 1.0, 0.0, 0.0, -1.0;
    d2 << cplx(0, 1), 0.0, 0.0, cplx(0, -0.5);
    return FrameFamily(j, AngleCurve::from(theta),
                       {{SmoothScalar::poly({1.0, 0.5}), d1},
                        {SmoothScalar::sine(0.3, 2.0), d2}});
}

}  // namespace

TEST_CASE("frame families reproduce hand-computed conjugations") {
    Matrix j(2, 2);
    j << 0.0, -1.0, 1.0, 0.0;
    SmoothScalar theta = SmoothScalar::poly({0.0, 0.7});
    Matrix d0(2, 2);
    d0 << 1.0, 0.0, 0.0, -1.0;
    FrameFamily fam(j, AngleCurve::from(theta),
                    {{SmoothScalar::poly({1.0, 1.0}), d0}});

    for (double t : {0.0, 0.3, 0.8, 1.0}) {
        const Matrix r = rotation2(0.7 * t);
        const Matrix expected = (1.0 + t) * r * d0 * r.transpose();
        CHECK(max_abs(Matrix(fam.eval(t) - expected)) < 1e-13);
        CHECK(max_abs(Matrix(fam.frame(t) - r)) < 1e-13);
        CHECK(max_abs(Matrix(fam.diagonal_part(t) - (1.0 + t) * d0)) < 1e-13);
    }

    SECTION("construction guards") {
        Matrix sym(2, 2);
        sym << 0.0, 1.0, 1.0, 0.0;  // symmetric, not skew
        CHECK_THROWS_AS(FrameFamily(sym, AngleCurve::from(theta), {}), DomainError);
        Matrix wrong(3, 3);
        wrong.setZero();
        CHECK_THROWS_AS(FrameFamily(j, AngleCurve::from(theta),
                                    {{SmoothScalar::constant(1.0), wrong}}),
                        DomainError);
    }
}

TEST_CASE("frame family derivatives match finite differences") {
    const FrameFamily fam = tilted_two_level();
    const double tol[5] = {0.0, 1e-8, 1e-6, 1e-4, 3e-2};
    for (double t : {0.12, 0.5, 0.87}) {
        for (int order = 1; order <= 4; ++order) {
            const Matrix exact = fam.deriv(t, order);
            const Matrix fd = fd_derivative([&](double s) { return fam.eval(s); }, t,
                                            order, fd_default_step(order, t));
            const double scale = std::max(1.0, op_norm(exact));
            CHECK(op_norm(Matrix(exact - fd)) / scale < tol[order]);
        }
    }
    CHECK(max_abs(Matrix(fam.deriv(0.4, 0) - fam.eval(0.4))) == 0.0);
    CHECK_THROWS_AS(fam.deriv(0.4, -1), DomainError);
}

TEST_CASE("frame projection curves obey P' = theta' [J, P]") {
    Matrix j(3, 3);
    j << 0.0, -1.0, 0.3,  //
        1.0, 0.0, -0.6,   //
        -0.3, 0.6, 0.0;
    SmoothScalar theta =
        SmoothScalar::poly({0.0, 0.9}) + SmoothScalar::sine(-0.15, 3.0);
    Matrix p0 = Matrix::Zero(3, 3);
    p0(0, 0) = 1.0;
    FrameFamily proj(j, AngleCurve::from(theta), {{SmoothScalar::constant(1.0), p0}});

    for (double t : {0.0, 0.25, 0.6, 1.0}) {
        const Matrix p = proj.eval(t);
        const Matrix expected = theta.deriv(t, 1).real() * commutator(j, p);
        CHECK(max_abs(Matrix(proj.deriv(t, 1) - expected)) < 1e-12);
        CHECK(idempotency_defect(p) < 1e-13);
        // P P' P = 0, the algebraic consequence of P^2 = P
        CHECK(max_abs(Matrix(p * proj.deriv(t, 1) * p)) < 1e-12);
    }
}

TEST_CASE("frame families extend to complex time") {
    Matrix j(2, 2);
    j << 0.0, -1.0, 1.0, 0.0;
    SmoothScalar theta = SmoothScalar::poly({0.0, 0.4});
    Matrix d(2, 2);
    d << cplx(0, 1), 0.0, 0.0, cplx(0, -1);
    FrameFamily fam(j, AngleCurve::from(theta),
                    {{SmoothScalar::constant(1.0) +
                          SmoothScalar::sine(0.25, std::numbers::pi),
                      d}});
    REQUIRE(fam.analytic());

    SECTION("agrees with real evaluation on the real axis") {
        for (double t : {0.1, 0.55, 0.9})
            CHECK(max_abs(Matrix(fam.eval_complex(cplx(t, 0.0)) - fam.eval(t))) < 1e-13);
    }

    SECTION("satisfies the Cauchy-Riemann equations off the real axis") {
        const cplx z(0.45, 0.08);
        const double h = 1e-5;
        const Matrix dx =
            (fam.eval_complex(z + h) - fam.eval_complex(z - h)) / (2.0 * h);
        const Matrix dy = (fam.eval_complex(z + cplx(0, h)) -
                           fam.eval_complex(z - cplx(0, h))) /
                          cplx(0, 2.0 * h);
        CHECK(max_abs(Matrix(dx - dy)) < 1e-7);
    }

    SECTION("families without an analytic angle refuse complex arguments") {
        FlatStepAngle flat(0.5, 0.3, 0.9);
        FrameFamily frozen(j, AngleCurve::from(flat),
                           {{SmoothScalar::constant(1.0), d}});
        CHECK_FALSE(frozen.analytic());
        CHECK_THROWS_AS(frozen.eval_complex(cplx(0.5, 0.1)), CapabilityError);
        CHECK_THROWS_AS(frozen.family(-1), CapabilityError);
        // real-axis evaluation still works, and the angle is flat early on
        CHECK(max_abs(Matrix(frozen.eval(0.1) - d)) < 1e-13);
    }

    SECTION("export to an operator family preserves capabilities") {
        const OperatorFamily f = fam.family(-1);
        CHECK(f.analytic());
        CHECK(f.has_exact_derivative(5));
        CHECK(max_abs(Matrix(f.eval_complex(cplx(0.3, 0.05)) -
                             fam.eval_complex(cplx(0.3, 0.05)))) == 0.0);
        DerivativeInfo info;
        f.deriv(0.3, 3, &info);
        CHECK_FALSE(info.finite_difference);
    }
}

TEST_CASE("catalog lists six scenarios and builds the five spectral ones") {
    const auto catalog = scenario_catalog();
    REQUIRE(catalog.size() == 6);
    CHECK(catalog[0].id == "S1");
    CHECK(catalog[5].id == "S6");
    CHECK(catalog[5].kind == "form");

    const SpectralScenario s1 = make_scenario("S1");
    CHECK(s1.family.dim() == 2);
    CHECK(s1.projection_rank == 1);
    CHECK(s1.gap_class == GapClass::uniform);
    CHECK(s1.min_gap == Approx(2.0));

    const SpectralScenario s4 = make_scenario("jordan_dissipative");
    CHECK(s4.family.dim() == 3);
    CHECK(s4.m0 == 2);
    CHECK(s4.projection_rank == 2);

    const SpectralScenario s5 = make_scenario("S5");
    CHECK(s5.family.analytic());

    CHECK(make_scenario("S2").crossing_set ==
          std::vector<double>{0.5});
    CHECK(make_scenario("S3").crossing_set.size() == 2);

    CHECK_THROWS_AS(make_scenario("S6"), ConfigError);
    CHECK_THROWS_WITH(make_scenario("bogus"),
                      Catch::Matchers::ContainsSubstring("unknown scenario"));
}

TEST_CASE("built-in spectral scenarios pass validation") {
    const auto grid = uniform_grid(65);
    for (const char* key : {"S1", "S2", "S3", "S4", "S5"}) {
        INFO("scenario " << key);
        const SpectralScenario s = make_scenario(key);
        const ScenarioValidation v = validate_scenario(s, grid);
        for (const auto& f : v.failures) INFO("failure: " << f);
        CHECK(v.pass);
        CHECK(v.lambda_defect < 1e-6);
        CHECK(v.association_defect < 1e-8);
        CHECK(v.association_points > 50);
        CHECK(v.ray_margin > 0.5);
        if (s.contour_at) CHECK(v.contour_projection_match < 1e-8);
    }

    SECTION("declared gaps are measured on the grid") {
        CHECK(validate_scenario(make_scenario("S1"), grid).measured_min_gap >= 2.0 - 1e-9);
        CHECK(validate_scenario(make_scenario("S4"), grid).measured_min_gap >=
              1.35 - 1e-9);
    }
}

TEST_CASE("scenario validation catches dishonest inputs") {
    const auto grid = uniform_grid(33);

    SECTION("lambda outside the spectrum is named") {
        SpectralScenario s = make_scenario("S1");
        s.lambda_curve = [](double) { return cplx(3.0, 0.0); };
        const ScenarioValidation v = validate_scenario(s, grid);
        CHECK_FALSE(v.pass);
        REQUIRE_FALSE(v.failures.empty());
        CHECK_THAT(v.failures.front(),
                   Catch::Matchers::ContainsSubstring("eigenvalue check"));
        CHECK_THROWS_AS(
            [&] {
                SpectralScenario bad = make_scenario("S1");
                bad.lambda_curve = [](double) { return cplx(3.0, 0.0); };
                const ScenarioValidation rep = validate_scenario(bad, grid);
                if (!rep.pass) throw ConfigError(rep.failures.front());
            }(),
            ConfigError);
    }

    SECTION("a projection that ignores the frame fails association") {
        SpectralScenario s = make_scenario("S2");
        Matrix p0 = Matrix::Zero(2, 2);
        p0(0, 0) = 1.0;
        s.projection_curve =
            OperatorFamily(2, 3, [p0](double) { return p0; });
        const ScenarioValidation v = validate_scenario(s, grid);
        CHECK_FALSE(v.pass);
    }

    SECTION("loader surfaces the failing check by name") {
        CHECK_THROWS_WITH(load_spectral_scenario("nope"),
                          Catch::Matchers::ContainsSubstring("unknown scenario"));
        CHECK_NOTHROW(load_spectral_scenario("S1", 33));
    }
}

TEST_CASE("scenario stability claims hold under propagation") {
    // S4 claims |U_eps| <= 1 (contraction) even though it is not unitary.
    const SpectralScenario s4 = make_scenario("S4");
    const Propagator u = build_propagator(s4.family, 1.0 / 16.0, uniform_grid(17), 1e-9);
    CHECK(measured_stability_bound(u) <= s4.m_bound + 1e-8);

    // S1 is skew-Hermitian, so the propagator is unitary.
    const SpectralScenario s1 = make_scenario("S1");
    const Propagator v = build_propagator(s1.family, 1.0 / 16.0, uniform_grid(17), 1e-9);
    const Matrix full = v.from_start(16);
    CHECK(max_abs(Matrix(full.adjoint() * full - identity(2))) < 1e-8);
}

// ---------------------------------------------------------------------------
// Experiment layer: config parsing, inline scenarios, runs, reports, emission
// ---------------------------------------------------------------------------

namespace {

using Catch::Matchers::ContainsSubstring;

nlohmann::json base_config() {
    return {{"schema_version", 1},
            {"scenario", "S1"},
            {"harness", "gap"},
            {"epsilon_list", {0.25, 0.125}},
            {"tol", 1e-10}};
}

// A rotating two-level family given entirely inline: A(t) = -i (4 I - 3 P(t))
// with P(t) = I/2 + cos(2t) sz/2 + sin(2t) sx/2, so the followed eigenvalue is
// the constant -i, the other branch is -4i, and the gap is exactly 3.
nlohmann::json inline_rotating(double lam_im, double declared_gap = 3.0) {
    auto two_by_two = [](double a_re, double a_im, double b_re, double b_im,
                         double c_re, double c_im, double d_re, double d_im) {
        return nlohmann::json::array(
            {nlohmann::json::array({nlohmann::json::array({a_re, a_im}),
                                    nlohmann::json::array({b_re, b_im})}),
             nlohmann::json::array({nlohmann::json::array({c_re, c_im}),
                                    nlohmann::json::array({d_re, d_im})})});
    };
    return {
        {"id", "INL1"},
        {"name", "inline_rotating"},
        {"dim", 2},
        {"smoothness", 4},
        {"gap_class", "uniform"},
        {"min_gap", declared_gap},
        {"projection_rank", 1},
        {"m0", 1},
        {"delta0", 0.5},
        {"m_bound", 1.0},
        {"family",
         {{{"coef", {{"type", "constant"}, {"value", {1.0, 0.0}}}},
           {"matrix", two_by_two(0, -2.5, 0, 0, 0, 0, 0, -2.5)}},
          {{"coef", {{"type", "cos"}, {"amplitude", {1.0, 0.0}}, {"omega", 2.0}}},
           {"matrix", two_by_two(0, 1.5, 0, 0, 0, 0, 0, -1.5)}},
          {{"coef", {{"type", "sin"}, {"amplitude", {1.0, 0.0}}, {"omega", 2.0}}},
           {"matrix", two_by_two(0, 0, 0, 1.5, 0, 1.5, 0, 0)}}}},
        {"lambda", {{{"type", "constant"}, {"value", {0.0, lam_im}}}}},
        {"projection",
         {{{"coef", {{"type", "constant"}, {"value", {0.5, 0.0}}}},
           {"matrix", two_by_two(1, 0, 0, 0, 0, 0, 1, 0)}},
          {{"coef", {{"type", "cos"}, {"amplitude", {0.5, 0.0}}, {"omega", 2.0}}},
           {"matrix", two_by_two(1, 0, 0, 0, 0, 0, -1, 0)}},
          {{"coef", {{"type", "sin"}, {"amplitude", {0.5, 0.0}}, {"omega", 2.0}}},
           {"matrix", two_by_two(0, 0, 1, 0, 1, 0, 0, 0)}}}}};
}

std::vector<std::string> read_lines(const std::filesystem::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(line);
    return lines;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::istringstream in(s);
    for (std::string field; std::getline(in, field, sep);) out.push_back(field);
    return out;
}

}  // namespace

TEST_CASE("experiment configs are parsed strictly") {
    const ExperimentConfig cfg = parse_experiment_config(base_config());
    CHECK(cfg.grid_points == 65);   // default
    CHECK(cfg.workers == 0);        // default: resolve at run time
    CHECK(cfg.seed == 20260815u);   // default seed is pinned, not time-based
    CHECK_FALSE(cfg.output.enabled());

    SECTION("schema version is mandatory and pinned") {
        auto j = base_config();
        j.erase("schema_version");
        CHECK_THROWS_WITH(parse_experiment_config(j),
                          ContainsSubstring("schema_version"));
        j = base_config();
        j["schema_version"] = 2;
        CHECK_THROWS_WITH(parse_experiment_config(j),
                          ContainsSubstring("unsupported config schema_version 2"));
    }

    SECTION("unknown keys are rejected, not ignored") {
        auto j = base_config();
        j["tolerance"] = 1e-9;  // plausible typo for "tol"
        CHECK_THROWS_WITH(parse_experiment_config(j),
                          ContainsSubstring("unknown key 'tolerance'"));
        auto k = base_config();
        k["output"] = {{"directory", "/tmp/x"}, {"basenme", "r"}};
        CHECK_THROWS_WITH(parse_experiment_config(k),
                          ContainsSubstring("unknown key 'basenme'"));
    }

    SECTION("harness names form a closed set") {
        auto j = base_config();
        j["harness"] = "turbo";
        CHECK_THROWS_WITH(parse_experiment_config(j),
                          ContainsSubstring("unknown harness 'turbo'"));
    }

    SECTION("epsilon lists must be strictly decreasing inside (0, 1)") {
        auto j = base_config();
        j["epsilon_list"] = {0.125, 0.25};
        CHECK_THROWS_WITH(parse_experiment_config(j),
                          ContainsSubstring("strictly decreasing"));
        j["epsilon_list"] = {1.5, 0.5};
        CHECK_THROWS_WITH(parse_experiment_config(j), ContainsSubstring("(0, 1)"));
        j["epsilon_list"] = nlohmann::json::array();
        CHECK_THROWS_WITH(parse_experiment_config(j),
                          ContainsSubstring("must not be empty"));
        j.erase("epsilon_list");
        CHECK_THROWS_WITH(parse_experiment_config(j),
                          ContainsSubstring("must not be empty"));
        // the invariants harness runs no sweep, so it alone may omit the list
        j["harness"] = "invariants";
        CHECK_NOTHROW(parse_experiment_config(j));
    }

    SECTION("grid, tolerance, and worker bounds") {
        auto j = base_config();
        j["grid_points"] = 17;
        CHECK_THROWS_WITH(parse_experiment_config(j),
                          ContainsSubstring("at least 33"));
        j = base_config();
        j["tol"] = 0.0;
        CHECK_THROWS_WITH(parse_experiment_config(j),
                          ContainsSubstring("tol must be positive"));
        j = base_config();
        j["workers"] = -2;
        CHECK_THROWS_WITH(parse_experiment_config(j),
                          ContainsSubstring("workers must be non-negative"));
    }

    SECTION("truncation selectors are mutually exclusive") {
        auto j = base_config();
        j["harness"] = "superadiabatic";
        j["tol"] = 1e-8;
        j["fixed_n"] = 2;
        j["levels"] = 6;
        CHECK_THROWS_WITH(parse_experiment_config(j),
                          ContainsSubstring("not both"));
    }

    SECTION("the floor rule gates higher-order sweeps") {
        auto j = base_config();
        j["harness"] = "superadiabatic";
        j["fixed_n"] = 1;
        j["epsilon_list"] = {0.25, 0.125};
        j["tol"] = 1e-3;  // 1e-2 * 0.125^2 = 1.5625e-4 < 1e-3: too loose
        CHECK_THROWS_WITH(parse_experiment_config(j), ContainsSubstring("floor rule"));
        j["tol"] = 1e-4;
        CHECK_NOTHROW(parse_experiment_config(j));
    }

    SECTION("output formats form a closed set and default to all three") {
        auto j = base_config();
        j["output"] = {{"directory", "/tmp/x"}, {"formats", {"json", "xlsx"}}};
        CHECK_THROWS_WITH(parse_experiment_config(j),
                          ContainsSubstring("unknown output format 'xlsx'"));
        j["output"] = {{"directory", "/tmp/x"}};
        const ExperimentConfig with_out = parse_experiment_config(j);
        CHECK(with_out.output.formats ==
              std::vector<std::string>{"json", "csv", "plotdata"});
        CHECK(with_out.output.basename == "report");
    }

    SECTION("the normalized echo reparses to the same normal form") {
        auto j = base_config();
        j["scenario"] = inline_rotating(-1.0);
        j["workers"] = 2;
        const ExperimentConfig first = parse_experiment_config(j);
        const nlohmann::json echo = config_to_json(first);
        const nlohmann::json echo2 = config_to_json(parse_experiment_config(echo));
        CHECK(echo.dump() == echo2.dump());
    }
}

TEST_CASE("scenario and harness kinds must agree") {
    auto j = base_config();
    j["scenario"] = "S6";
    j["dim"] = 8;
    CHECK_THROWS_WITH(run_experiment(parse_experiment_config(j)),
                      ContainsSubstring("form-based"));

    auto k = base_config();
    k["harness"] = "forms";
    CHECK_THROWS_WITH(run_experiment(parse_experiment_config(k)),
                      ContainsSubstring("forms harness needs a form scenario"));

    SECTION("the invariants harness accepts both kinds and runs no sweep") {
        nlohmann::json inv = {{"schema_version", 1},
                              {"scenario", "S6"},
                              {"harness", "invariants"},
                              {"dim", 8}};
        const Report rep = run_experiment(parse_experiment_config(inv));
        CHECK(rep.pass);
        CHECK(rep.invariants.size() == 9);
        CHECK(rep.sweeps.empty());
        CHECK(rep.scenario_id == "S6");
    }
}

TEST_CASE("inline scenario definitions run the gap harness end to end") {
    nlohmann::json j = {{"schema_version", 1},
                        {"scenario", inline_rotating(-1.0)},
                        {"harness", "gap"},
                        {"epsilon_list", {0.25, 0.125, 0.0625, 0.03125}},
                        {"tol", 1e-11},
                        {"workers", 2}};
    const Report rep = run_experiment(parse_experiment_config(j));
    CHECK(rep.pass);
    CHECK(rep.scenario_id == "INL1");
    REQUIRE(rep.sweeps.size() == 3);
    for (const SweepResult& r : rep.sweeps) {
        INFO("sweep " << r.defect_kind);
        REQUIRE(r.fit.has_value());
        CHECK(r.fit->model == "power");
        CHECK(r.fit->slope_or_g > 0.85);
        CHECK(r.fit->slope_or_g < 1.15);
        CHECK(r.fit->r_squared > 0.995);
    }

    SECTION("a wrong inline eigenvalue curve fails at load, naming the check") {
        nlohmann::json bad = j;
        bad["scenario"] = inline_rotating(-2.0);  // -2i is not an eigenvalue
        CHECK_THROWS_WITH(run_experiment(parse_experiment_config(bad)),
                          ContainsSubstring("failed validation"));
        CHECK_THROWS_WITH(run_experiment(parse_experiment_config(bad)),
                          ContainsSubstring("eigenvalue check"));
    }

    SECTION("malformed inline definitions are named precisely") {
        nlohmann::json bad = inline_rotating(-1.0);
        bad.erase("lambda");
        CHECK_THROWS_WITH(scenario_from_inline(bad),
                          ContainsSubstring("needs a lambda field"));
        nlohmann::json odd = inline_rotating(-1.0);
        odd["family"][0]["coef"]["type"] = "sigmoid";
        CHECK_THROWS_WITH(scenario_from_inline(odd),
                          ContainsSubstring("unknown coefficient type 'sigmoid'"));
        nlohmann::json trunc = inline_rotating(-1.0);
        trunc["family"][0]["matrix"][0].erase(1);
        CHECK_THROWS_WITH(scenario_from_inline(trunc), ContainsSubstring("row 0"));
    }
}

TEST_CASE("invariant tables measure what the catalog declares") {
    SECTION("the uniform-gap scenario passes all six rows") {
        const auto rows = invariant_table(make_scenario("S1"), 65);
        REQUIRE(rows.size() == 6);
        for (const InvariantRow& r : rows) {
            INFO(r.check << ": value " << r.value << " threshold " << r.threshold);
            CHECK(r.pass);
        }
        CHECK(rows[4].check == "declared uniform gap holds (measured gap)");
        CHECK(rows[4].value == Approx(2.0));
    }

    SECTION("an inflated gap declaration is caught by measurement") {
        // true minimal gap is exactly 3; declaring 3.5 must fail the table
        const SpectralScenario s = scenario_from_inline(inline_rotating(-1.0, 3.5));
        const auto rows = invariant_table(s, 65);
        bool gap_row_failed = false;
        for (const InvariantRow& r : rows)
            if (r.check.find("declared uniform gap") != std::string::npos) {
                CHECK_FALSE(r.pass);
                CHECK(r.value == Approx(3.0).margin(1e-9));
                gap_row_failed = !r.pass;
            }
        CHECK(gap_row_failed);
    }

    SECTION("the form scenario passes all nine rows at reduced dimension") {
        const auto rows = invariant_table(load_form_scenario("S6", 8), 33, 20260815u);
        REQUIRE(rows.size() == 9);
        for (const InvariantRow& r : rows) {
            INFO(r.check << ": value " << r.value << " threshold " << r.threshold);
            CHECK(r.pass);
        }
    }
}

TEST_CASE("experiment runs are deterministic across worker counts") {
    nlohmann::json j = {{"schema_version", 1},
                        {"scenario", "S3"},
                        {"harness", "nogap"},
                        {"epsilon_list", {0.25, 0.125, 0.0625}},
                        {"tol", 1e-9},
                        {"workers", 1}};
    const Report serial = run_experiment(parse_experiment_config(j));
    j["workers"] = 4;
    const Report parallel = run_experiment(parse_experiment_config(j));

    REQUIRE(serial.sweeps.size() == parallel.sweeps.size());
    for (std::size_t i = 0; i < serial.sweeps.size(); ++i) {
        const SweepResult& a = serial.sweeps[i];
        const SweepResult& b = parallel.sweeps[i];
        CHECK(a.defect_kind == b.defect_kind);
        REQUIRE(a.samples.size() == b.samples.size());
        for (std::size_t s = 0; s < a.samples.size(); ++s) {
            // bitwise: the parallel schedule must not change a single ulp
            CHECK(a.samples[s].sup_defect == b.samples[s].sup_defect);
            CHECK(a.samples[s].epsilon == b.samples[s].epsilon);
        }
    }
    // no-gap sweeps carry no fitted rates, only raw decay data
    for (const SweepResult& r : serial.sweeps) CHECK_FALSE(r.fit.has_value());
}

TEST_CASE("worker resolution prefers the config, then the environment") {
    ExperimentConfig cfg;
    cfg.workers = 3;
    CHECK(resolve_workers(cfg) == 3);
    cfg.workers = 0;
    setenv("ADLAB_WORKERS", "5", 1);
    CHECK(resolve_workers(cfg) == 5);
    setenv("ADLAB_WORKERS", "not-a-number", 1);
    CHECK(resolve_workers(cfg) == 1);
    unsetenv("ADLAB_WORKERS");
    CHECK(resolve_workers(cfg) == 1);
}

TEST_CASE("experiment reports round-trip and emit the documented formats") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "adlab_emit_test";
    fs::remove_all(dir);

    nlohmann::json j = {{"schema_version", 1},
                        {"scenario", "S1"},
                        {"harness", "gap"},
                        {"epsilon_list", {0.25, 0.125, 0.0625, 0.03125}},
                        {"tol", 1e-10},
                        {"workers", 2},
                        {"output",
                         {{"directory", dir.string()},
                          {"basename", "trip"},
                          {"formats", {"json", "csv", "plotdata"}}}}};
    const ExperimentConfig cfg = parse_experiment_config(j);
    const Report rep = run_experiment(cfg);
    REQUIRE(rep.pass);
    REQUIRE(rep.sweeps.size() == 3);

    const auto written = emit_report(rep, cfg.output);
    // json + csv + (dat + fit) per fitted sweep
    CHECK(written.size() == 2 + 2 * rep.sweeps.size());

    SECTION("the json report reproduces every double bit for bit") {
        nlohmann::json loaded;
        std::ifstream in(dir / "trip.json");
        REQUIRE(in.good());
        in >> loaded;
        const Report back = loaded.get<Report>();
        CHECK(nlohmann::json(back).dump() == nlohmann::json(rep).dump());
        REQUIRE(back.sweeps.size() == rep.sweeps.size());
        for (std::size_t i = 0; i < rep.sweeps.size(); ++i)
            for (std::size_t s = 0; s < rep.sweeps[i].samples.size(); ++s)
                CHECK(back.sweeps[i].samples[s].sup_defect ==
                      rep.sweeps[i].samples[s].sup_defect);
        CHECK(back.seed == rep.seed);
        CHECK(back.config_echo.dump() == rep.config_echo.dump());
    }

    SECTION("the csv has the pinned header and one row per sample") {
        const auto lines = read_lines(dir / "trip.csv");
        REQUIRE(lines.size() == 1 + 3 * 4);
        CHECK(lines[0] == "scenario,harness,defect_kind,epsilon,sup_defect,floor");
        std::size_t row = 1;
        for (const SweepResult& r : rep.sweeps)
            for (const SweepSample& s : r.samples) {
                const auto fields = split(lines[row++], ',');
                REQUIRE(fields.size() == 6);
                CHECK(fields[0] == "S1");
                CHECK(fields[1] == "gap");
                CHECK(fields[2] == r.defect_kind);
                // %.17g prints doubles losslessly: strtod must invert exactly
                CHECK(std::strtod(fields[3].c_str(), nullptr) == s.epsilon);
                CHECK(std::strtod(fields[4].c_str(), nullptr) == s.sup_defect);
                CHECK(std::strtod(fields[5].c_str(), nullptr) ==
                      r.integrator_floor);
            }
        CHECK(rep.sweeps[0].integrator_floor == Approx(100.0 * cfg.tol));
    }

    SECTION("power-fit plot data uses log10(epsilon) abscissae") {
        for (const SweepResult& r : rep.sweeps) {
            const fs::path dat = dir / ("trip_S1_gap_" + r.defect_kind + ".dat");
            const auto lines = read_lines(dat);
            REQUIRE(lines.size() == r.samples.size());
            for (std::size_t i = 0; i < lines.size(); ++i) {
                const auto cols = split(lines[i], ' ');
                REQUIRE(cols.size() == 2);
                CHECK(std::strtod(cols[0].c_str(), nullptr) ==
                      std::log10(r.samples[i].epsilon));
                CHECK(std::strtod(cols[1].c_str(), nullptr) ==
                      r.samples[i].sup_defect);
            }

            const auto side = read_lines(dir / ("trip_S1_gap_" + r.defect_kind + ".fit"));
            REQUIRE(side.size() == 7);
            CHECK(side[0] == "model=power");
            CHECK(std::strtod(split(side[1], '=')[1].c_str(), nullptr) ==
                  r.fit->slope_or_g);
            CHECK(split(side[2], '=')[0] == "intercept");
            CHECK(split(side[3], '=')[0] == "r_squared");
            CHECK(split(side[4], '=')[0] == "floor");
            CHECK(side[5] == "used=" + std::to_string(r.fit->used));
            CHECK(split(side[6], '=')[0] == "excluded");
        }
    }

    SECTION("exponential fits switch the abscissa to 1/epsilon") {
        Report synth;
        synth.scenario_id = "SYN";
        synth.harness = "superadiabatic";
        SweepResult r;
        r.scenario_id = "SYN";
        r.harness = "superadiabatic";
        r.defect_kind = "UV";
        r.samples = {{0.25, 1e-3}, {0.125, 1e-5}, {0.0625, 1e-9}};
        r.integrator_floor = 1e-15;
        FitRecord fit;
        fit.model = "exponential";
        fit.slope_or_g = 1.0;
        fit.intercept = 0.0;
        fit.r_squared = 0.999;
        fit.floor = 1e-15;
        fit.used = 3;
        r.fit = fit;
        synth.sweeps = {r};
        OutputSpec spec;
        spec.directory = dir.string();
        spec.basename = "expo";
        spec.formats = {"plotdata"};
        const auto paths = emit_report(synth, spec);
        REQUIRE(paths.size() == 2);
        const auto lines = read_lines(dir / "expo_SYN_superadiabatic_UV.dat");
        REQUIRE(lines.size() == 3);
        CHECK(split(lines[0], ' ')[0] == "4");
        CHECK(split(lines[1], ' ')[0] == "8");
        CHECK(split(lines[2], ' ')[0] == "16");
    }

    SECTION("unwritable output directories fail loudly") {
        OutputSpec spec;
        spec.directory = "/proc/adlab_forbidden";
        spec.basename = "x";
        spec.formats = {"csv"};
        CHECK_THROWS_AS(emit_report(rep, spec), Error);
    }
}

TEST_CASE("config files load with precise diagnostics") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "adlab_cfg_test";
    fs::create_directories(dir);

    const fs::path good = dir / "good.json";
    std::ofstream(good) << base_config().dump(2);
    const ExperimentConfig cfg = load_config_file(good.string());
    CHECK(cfg.harness == "gap");
    CHECK(cfg.epsilon_list.size() == 2);

    CHECK_THROWS_WITH(load_config_file((dir / "absent.json").string()),
                      ContainsSubstring("cannot read config file"));

    const fs::path broken = dir / "broken.json";
    std::ofstream(broken) << "{ not json";
    CHECK_THROWS_WITH(load_config_file(broken.string()),
                      ContainsSubstring("not valid JSON"));
}
