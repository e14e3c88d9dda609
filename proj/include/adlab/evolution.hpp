#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <utility>
#include <vector>

// algebra_dispatcher must come before the Eigen adapters
#include <boost/numeric/odeint/algebra/algebra_dispatcher.hpp>
#include <boost/numeric/odeint/external/eigen/eigen.hpp>
#include <boost/numeric/odeint/stepper/runge_kutta_fehlberg78.hpp>

#include "adlab/errors.hpp"
#include "adlab/linalg.hpp"
#include "adlab/operator_family.hpp"

namespace adlab {

// The effective right-hand side of a transition-matrix ODE  U' = G(t) U.
using GeneratorFn = std::function<Matrix(double)>;

struct StepControls {
    double tol = 1e-10;  // local error budget per unit time
    double max_step = std::numeric_limits<double>::infinity();
    double underflow = 1e-14;  // throw when dt falls below underflow * span
};

// --------------------------------------------------------------------------
// Adaptive 8th-order integration of Y' = G(t) Y from s to t, evolving the
// given initial matrix. The embedded RKF78 error estimate is held below
// tol * dt (error per unit time), so the global error over [s,t] is of order
// tol * (t - s) times the problem's stability factor.
// --------------------------------------------------------------------------
template <class Rhs>
Matrix integrate_transition(const Rhs& rhs, Matrix y, double s, double t,
                            const StepControls& c) {
    if (t < s) throw DomainError("integration runs forward in time only");
    const double span = t - s;
    if (span == 0.0) return y;
    boost::numeric::odeint::runge_kutta_fehlberg78<
        Matrix, double, Matrix, double, boost::numeric::odeint::vector_space_algebra>
        stepper;
    double time = s;
    double dt = std::min(c.max_step, span / 16.0);
    Matrix out(y.rows(), y.cols());
    Matrix err(y.rows(), y.cols());
    const double finish_cut = t - 1e-15 * std::max(1.0, std::abs(t));
    while (time < finish_cut) {
        dt = std::min(dt, t - time);
        stepper.do_step(rhs, y, time, out, dt, err);
        const double e = max_abs(err);
        const double bound = c.tol * dt;
        if (e <= bound) {
            y.swap(out);
            time += dt;
        }
        double factor = 0.9 * std::pow(bound / std::max(e, 1e-300), 1.0 / 8.0);
        dt *= std::clamp(factor, 0.2, 5.0);
        dt = std::min(dt, c.max_step);
        if (dt < c.underflow * span) {
            std::ostringstream msg;
            msg << "adaptive step underflow near t=" << time << " (dt=" << dt
                << ", local error " << e << ")";
            throw ConvergenceError(msg.str(), e);
        }
    }
    return y;
}

// U(t,s) for the system x' = G(t) x, started from the identity.
inline Matrix propagate(const GeneratorFn& gen, double s, double t,
                        const StepControls& c = {}) {
    if (s < 0.0 || t > 1.0) throw DomainError("propagation window must lie in [0,1]");
    const Matrix probe = gen(s);
    auto rhs = [&gen](const Matrix& x, Matrix& dxdt, double tt) { dxdt = gen(tt) * x; };
    return integrate_transition(rhs, identity(probe.rows()), s, t, c);
}

// Wraps a family as the epsilon-scaled generator (1/eps) A(t) and picks the
// step ceiling eps/4 that resolves the fast phase.
inline GeneratorFn scaled_generator(const OperatorFamily& family, double epsilon) {
    if (!(epsilon > 0.0)) throw DomainError("epsilon must be positive");
    return [family, inv = 1.0 / epsilon](double t) { return Matrix(inv * family.eval(t)); };
}

inline StepControls scaled_controls(double epsilon, double tol) {
    StepControls c;
    c.tol = tol;
    c.max_step = epsilon / 4.0;
    return c;
}

// --------------------------------------------------------------------------
// Tabulated evolution system on a grid. Two independent tables are kept:
//   segment(k)    = U(t_{k+1}, t_k), each integrated fresh from the identity;
//   from_start(k) = U(t_k, t_0), one continuous sweep of the same ODE.
// Any U(t_j, t_i) is a product of segments; comparing that against the sweep
// makes the cocycle law a genuine test of two different step sequences, not
// an algebraic identity. Off-grid values are always integrated fresh --
// never assembled by inverting table entries, which would wreck the error
// contract for non-unitary problems.
// --------------------------------------------------------------------------
class Propagator {
  public:
    Propagator(GeneratorFn gen, std::vector<double> grid, StepControls controls,
               double epsilon)
        : gen_(std::move(gen)),
          grid_(std::move(grid)),
          controls_(controls),
          epsilon_(epsilon) {
        if (grid_.size() < 2) throw DomainError("propagator grid needs >= 2 points");
        if (grid_.front() != 0.0 || grid_.back() != 1.0)
            throw DomainError("propagator grid must start at 0 and end at 1");
        for (std::size_t k = 1; k < grid_.size(); ++k)
            if (!(grid_[k] > grid_[k - 1]))
                throw DomainError("propagator grid must be strictly increasing");
        const Eigen::Index n = gen_(grid_.front()).rows();
        dim_ = n;
        auto rhs = [this](const Matrix& x, Matrix& dxdt, double tt) {
            dxdt = gen_(tt) * x;
        };
        segment_.reserve(grid_.size() - 1);
        for (std::size_t k = 0; k + 1 < grid_.size(); ++k)
            segment_.push_back(integrate_transition(rhs, identity(n), grid_[k],
                                                    grid_[k + 1], controls_));
        from_start_.reserve(grid_.size());
        from_start_.push_back(identity(n));
        Matrix sweep = identity(n);
        for (std::size_t k = 0; k + 1 < grid_.size(); ++k) {
            sweep = integrate_transition(rhs, std::move(sweep), grid_[k],
                                         grid_[k + 1], controls_);
            from_start_.push_back(sweep);
        }
    }

    Eigen::Index dim() const { return dim_; }
    const std::vector<double>& grid() const { return grid_; }
    double tol() const { return controls_.tol; }
    const StepControls& controls() const { return controls_; }
    double epsilon() const { return epsilon_; }
    const GeneratorFn& generator() const { return gen_; }

    const Matrix& from_start(std::size_t k) const { return from_start_.at(k); }
    const Matrix& segment(std::size_t k) const { return segment_.at(k); }

    // U(t_to, t_from) as a product of stored segments.
    Matrix between(std::size_t from, std::size_t to) const {
        if (to < from || to >= grid_.size())
            throw DomainError("between: need from <= to within the grid");
        Matrix u = identity(dim_);
        for (std::size_t k = from; k < to; ++k) u = segment_[k] * u;
        return u;
    }

    Vector apply(std::size_t from, std::size_t to, const Vector& x) const {
        return between(from, to) * x;
    }

    // Freshly integrated U(t,s) for arbitrary 0 <= s <= t <= 1.
    Matrix fresh(double s, double t) const {
        if (s < 0.0 || t > 1.0 || t < s)
            throw DomainError("fresh: need 0 <= s <= t <= 1");
        auto rhs = [this](const Matrix& x, Matrix& dxdt, double tt) {
            dxdt = gen_(tt) * x;
        };
        return integrate_transition(rhs, identity(dim_), s, t, controls_);
    }

  private:
    GeneratorFn gen_;
    std::vector<double> grid_;
    StepControls controls_;
    double epsilon_ = 0.0;  // 0 means "unscaled"
    Eigen::Index dim_ = 0;
    std::vector<Matrix> segment_;
    std::vector<Matrix> from_start_;
};

inline Propagator build_propagator(const GeneratorFn& gen, std::vector<double> grid,
                                   const StepControls& controls,
                                   double epsilon = 0.0) {
    return Propagator(gen, std::move(grid), controls, epsilon);
}

inline Propagator build_propagator(const OperatorFamily& family, double epsilon,
                                   std::vector<double> grid, double tol) {
    return Propagator(scaled_generator(family, epsilon), std::move(grid),
                      scaled_controls(epsilon, tol), epsilon);
}

// All stored U(t_j, t_i), built once by prefix products (row i = source index).
inline std::vector<std::vector<Matrix>> pair_table(const Propagator& u) {
    const std::size_t k = u.grid().size();
    std::vector<std::vector<Matrix>> table(k);
    for (std::size_t i = 0; i < k; ++i) {
        table[i].resize(k - i);
        table[i][0] = identity(u.dim());
        for (std::size_t j = i + 1; j < k; ++j)
            table[i][j - i] = u.segment(j - 1) * table[i][j - i - 1];
    }
    return table;
}

// --------------------------------------------------------------------------
// Cocycle consistency: U(t,s)U(s,r) = U(t,r) over grid triples, plus the
// cross-check of the two independent tables (segment products vs the
// continuous sweep). Defects are relative to max(1, |reference|).
// --------------------------------------------------------------------------
struct CocycleReport {
    double sweep_vs_segments = 0.0;  // max_k |U_sweep(t_k,0) - prod segments|
    double triple_defect = 0.0;      // max over sampled (r,s,t) grid triples
    double max_defect = 0.0;
};

inline CocycleReport cocycle_report(const Propagator& u) {
    const auto table = pair_table(u);
    const std::size_t k = u.grid().size();
    CocycleReport rep;
    for (std::size_t j = 0; j < k; ++j) {
        const double scale = std::max(1.0, max_abs(u.from_start(j)));
        rep.sweep_vs_segments = std::max(
            rep.sweep_vs_segments, max_abs(table[0][j] - u.from_start(j)) / scale);
    }
    const std::size_t stride = std::max<std::size_t>(1, k / 64);
    for (std::size_t r = 0; r < k; r += stride) {
        for (std::size_t s = r; s < k; s += stride) {
            for (std::size_t t = s; t < k; t += stride) {
                const Matrix& whole = table[r][t - r];
                const double scale = std::max(1.0, max_abs(whole));
                const Matrix stitched = table[s][t - s] * table[r][s - r];
                rep.triple_defect = std::max(rep.triple_defect,
                                             max_abs(whole - stitched) / scale);
            }
        }
        // mixed route: segments above, sweep below
        const Matrix mixed = table[r][k - 1 - r] * u.from_start(r);
        const double scale = std::max(1.0, max_abs(u.from_start(k - 1)));
        rep.triple_defect = std::max(
            rep.triple_defect, max_abs(mixed - u.from_start(k - 1)) / scale);
    }
    rep.max_defect = std::max(rep.sweep_vs_segments, rep.triple_defect);
    return rep;
}

// --------------------------------------------------------------------------
// Right-derivative probe at s: the evolution system definition demands
//   d/ds U(t,s)x = -U(t,s) G(s) x   (one-sided),
// so the forward quotient ((U(t,s+h) - U(t,s))/h) x + U(t,s) G(s) x must
// vanish as h -> 0, at first order for smooth generators.
// --------------------------------------------------------------------------
inline double right_derivative_defect(const Propagator& u, double s, double t,
                                      const Vector& x, double h) {
    if (!(h > 0.0)) throw DomainError("probe step h must be positive");
    if (s < 0.0 || s + h > t || t > 1.0)
        throw DomainError("right-derivative probe needs 0 <= s < s+h <= t <= 1");
    const Matrix u_ts = u.fresh(s, t);
    const Matrix u_tsh = u.fresh(s + h, t);
    const Vector quotient = (u_tsh * x - u_ts * x) / h;
    return (quotient + u_ts * (u.generator()(s) * x)).norm();
}

// --------------------------------------------------------------------------
// Perturbed evolution V' = (G + B) V two ways: direct propagation, and the
// iterated-integral series V = sum_n V_n with
//   V_0 = U,   V_{n+1}(t,0) = integral_0^t U(t,r) B(r) V_n(r,0) dr.
// The terms satisfy the triangular ODE system  V_n' = G V_n + B V_{n-1},
// which is integrated as one stacked matrix ODE so no quadrature-in-time
// error enters; truncation stops at the first term below term_tol.
// --------------------------------------------------------------------------
inline Propagator perturbed_propagator(const Propagator& base, const GeneratorFn& pert) {
    GeneratorFn gen = base.generator();
    GeneratorFn sum = [gen, pert](double t) { return Matrix(gen(t) + pert(t)); };
    return Propagator(sum, base.grid(), base.controls(), base.epsilon());
}

struct PerturbationSeries {
    std::vector<double> grid;
    std::vector<std::vector<Matrix>> terms;  // terms[n][k] = V_n(t_k, 0)
    std::vector<Matrix> sum;                 // sum over stored terms, per grid point
    double last_term_sup = 0.0;              // sup_k |terms.back()[k]|
    bool truncated_by_tolerance = false;
};

inline PerturbationSeries perturbation_series(const GeneratorFn& gen,
                                              const GeneratorFn& pert,
                                              const std::vector<double>& grid,
                                              const StepControls& controls,
                                              double term_tol, int max_terms = 16) {
    if (grid.size() < 2) throw DomainError("perturbation series needs a grid");
    if (max_terms < 2) throw DomainError("perturbation series needs >= 2 terms");
    const Eigen::Index n = gen(grid.front()).rows();
    const int blocks = max_terms;
    Matrix stack = Matrix::Zero(Eigen::Index(blocks) * n, n);
    stack.topRows(n) = identity(n);  // V_0(0,0) = I, all higher terms start at 0
    auto rhs = [&](const Matrix& s, Matrix& d, double tt) {
        const Matrix g = gen(tt);
        const Matrix b = pert(tt);
        d.middleRows(0, n) = g * s.middleRows(0, n);
        for (int j = 1; j < blocks; ++j)
            d.middleRows(Eigen::Index(j) * n, n) =
                g * s.middleRows(Eigen::Index(j) * n, n) +
                b * s.middleRows(Eigen::Index(j - 1) * n, n);
    };

    std::vector<Matrix> snapshots;
    snapshots.reserve(grid.size());
    snapshots.push_back(stack);
    for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
        stack = integrate_transition(rhs, std::move(stack), grid[k], grid[k + 1],
                                     controls);
        snapshots.push_back(stack);
    }

    // per-term sup norms over the grid, then truncate at the first small term
    std::vector<double> sup(std::size_t(blocks), 0.0);
    for (const Matrix& snap : snapshots)
        for (int j = 0; j < blocks; ++j)
            sup[std::size_t(j)] = std::max(sup[std::size_t(j)],
                                           max_abs(snap.middleRows(Eigen::Index(j) * n, n)));
    int used = blocks;
    for (int j = 1; j < blocks; ++j) {
        if (sup[std::size_t(j)] < term_tol) {
            used = j + 1;  // keep the first sub-tolerance term as the tail witness
            break;
        }
    }
    if (sup[std::size_t(used - 1)] >= term_tol)
        throw ConvergenceError(
            "perturbation series did not reach the term tolerance within max_terms",
            sup[std::size_t(used - 1)]);

    PerturbationSeries out;
    out.grid = grid;
    out.terms.resize(std::size_t(used));
    for (int j = 0; j < used; ++j) {
        out.terms[std::size_t(j)].reserve(grid.size());
        for (const Matrix& snap : snapshots)
            out.terms[std::size_t(j)].push_back(snap.middleRows(Eigen::Index(j) * n, n));
    }
    out.sum.assign(grid.size(), Matrix::Zero(n, n));
    for (std::size_t k = 0; k < grid.size(); ++k)
        for (int j = 0; j < used; ++j) out.sum[k] += out.terms[std::size_t(j)][k];
    out.last_term_sup = sup[std::size_t(used - 1)];
    out.truncated_by_tolerance = true;
    return out;
}

// --------------------------------------------------------------------------
// Growth-bound audit: |V(t,s)| <= M e^{(omega + M b)(t-s)} over all grid
// pairs, where M, omega bound the unperturbed evolution and b = sup|B|.
// --------------------------------------------------------------------------
struct GrowthReport {
    double max_ratio = 0.0;  // worst |V(t,s)| / bound(t,s)
    double at_s = 0.0;
    double at_t = 0.0;
    bool pass = false;
};

inline GrowthReport growth_report(const Propagator& v, double m_bound, double omega,
                                  double b, double slack = 1e-6) {
    const auto table = pair_table(v);
    const auto& grid = v.grid();
    GrowthReport rep;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        for (std::size_t j = i; j < grid.size(); ++j) {
            const double bound =
                m_bound * std::exp((omega + m_bound * b) * (grid[j] - grid[i]));
            const double ratio = op_norm(table[i][j - i]) / bound;
            if (ratio > rep.max_ratio) {
                rep.max_ratio = ratio;
                rep.at_s = grid[i];
                rep.at_t = grid[j];
            }
        }
    }
    rep.pass = rep.max_ratio <= 1.0 + slack;
    return rep;
}

// sup over grid pairs of |U(t,s)| -- the measured stability constant M.
inline double measured_stability_bound(const Propagator& u) {
    const auto table = pair_table(u);
    double m = 0.0;
    for (std::size_t i = 0; i < table.size(); ++i)
        for (std::size_t j = 0; j < table[i].size(); ++j)
            m = std::max(m, op_norm(table[i][j]));
    return m;
}

}  // namespace adlab
