#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "adlab/linalg.hpp"

namespace adlab {

// --------------------------------------------------------------------------
// Finite differences: Fornberg weights for the m-th derivative at x0 on an
// arbitrary node set. Exact for polynomials up to degree nodes.size()-1, so
// m+4 nodes give a 4th-order formula on a uniform stencil, one-sided included.
// --------------------------------------------------------------------------
inline std::vector<double> fd_weights(int m, double x0, const std::vector<double>& x) {
    const int n = int(x.size());
    if (m < 0 || n < m + 1) throw DomainError("fd_weights: need at least m+1 nodes");
    // B. Fornberg, "Generation of finite difference formulas on arbitrarily
    // spaced grids", Math. Comp. 51 (1988).
    std::vector<std::vector<double>> c(n, std::vector<double>(m + 1, 0.0));
    double c1 = 1.0;
    double c4 = x[0] - x0;
    c[0][0] = 1.0;
    for (int i = 1; i < n; ++i) {
        const int mn = std::min(i, m);
        double c2 = 1.0;
        const double c5 = c4;
        c4 = x[i] - x0;
        for (int j = 0; j < i; ++j) {
            const double c3 = x[i] - x[j];
            c2 *= c3;
            if (j == i - 1) {
                for (int k = mn; k >= 1; --k)
                    c[i][k] = c1 * (k * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for (int k = mn; k >= 1; --k)
                c[j][k] = (c4 * c[j][k] - k * c[j][k - 1]) / c3;
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    std::vector<double> w(n);
    for (int i = 0; i < n; ++i) w[i] = c[i][m];
    return w;
}

// Default step for order-4 differencing of the m-th derivative, balancing
// truncation against roundoff amplification 1/h^m; scaled by max(1,|t|).
inline double fd_default_step(int order, double t) {
    double base = 1e-4;
    if (order == 2) base = 1e-3;
    if (order >= 3) base = 1e-2;
    return base * std::max(1.0, std::abs(t));
}

// Order-4 stencil for d^m/dt^m f at t, with all evaluation points kept inside
// [lo, hi] (stencil slides to one-sided near the ends).
template <typename F>
auto fd_derivative(F&& f, double t, int m, double h, double lo = 0.0, double hi = 1.0)
    -> decltype(f(t)) {
    if (m < 1) throw DomainError("fd_derivative: order must be >= 1");
    const int npts = m + 4;  // order-4 accuracy
    const int half = npts / 2;
    // centered window, shifted to fit in [lo, hi]
    double start = t - half * h;
    if (start < lo) start = lo;
    if (start + (npts - 1) * h > hi) start = hi - (npts - 1) * h;
    if (start < lo - 1e-15)
        throw DomainError("fd_derivative: stencil does not fit in the domain");
    std::vector<double> nodes(npts);
    for (int i = 0; i < npts; ++i) nodes[i] = start + i * h;
    const auto w = fd_weights(m, t, nodes);
    auto acc = decltype(f(t))(w[0] * f(nodes[0]));
    for (int i = 1; i < npts; ++i) acc += w[i] * f(nodes[i]);
    return acc;
}

// --------------------------------------------------------------------------
// A time-dependent matrix family A : [0,1] -> C^{d x d} with declared
// smoothness, optional exact derivative maps, and optional analytic extension.
// --------------------------------------------------------------------------
struct DerivativeInfo {
    bool finite_difference = false;  // fell back to numerical differentiation
    bool beyond_declared = false;    // requested order exceeds declared smoothness
    double step = 0.0;               // step used when finite differencing
};

class OperatorFamily {
  public:
    using EvalFn = std::function<Matrix(double)>;
    using DerivFn = std::function<Matrix(double, int)>;  // (t, order>=1)
    using ComplexFn = std::function<Matrix(cplx)>;

    OperatorFamily() = default;
    OperatorFamily(int dim, int smoothness, EvalFn eval)
        : dim_(dim), smoothness_(smoothness), eval_(std::move(eval)) {}

    OperatorFamily& with_derivatives(DerivFn d, int max_exact_order /* -1 == any */) {
        deriv_ = std::move(d);
        exact_orders_ = max_exact_order;
        return *this;
    }
    OperatorFamily& with_analytic_extension(ComplexFn f) {
        complex_ = std::move(f);
        analytic_ = true;
        return *this;
    }

    int dim() const { return dim_; }
    int smoothness() const { return smoothness_; }
    bool analytic() const { return analytic_; }
    bool has_exact_derivative(int order) const {
        return deriv_ && (exact_orders_ < 0 || order <= exact_orders_);
    }

    Matrix eval(double t) const {
        check_time(t);
        Matrix a = eval_(t);
        if (a.rows() != dim_ || a.cols() != dim_)
            throw DomainError("operator family produced a matrix of wrong dimension");
        return a;
    }

    Matrix deriv(double t, int order, DerivativeInfo* info = nullptr) const {
        check_time(t);
        if (order == 0) return eval(t);
        if (order < 0) throw DomainError("derivative order must be >= 0");
        DerivativeInfo local;
        local.beyond_declared = order > smoothness_;
        Matrix result;
        if (has_exact_derivative(order)) {
            result = deriv_(t, order);
        } else {
            local.finite_difference = true;
            local.step = fd_default_step(order, t);
            result = fd_derivative([this](double s) { return eval_(s); }, t, order,
                                   local.step);
        }
        if (info) *info = local;
        return result;
    }

    Matrix eval_complex(cplx z) const {
        if (!complex_)
            throw CapabilityError("operator family has no analytic extension");
        return complex_(z);
    }

  private:
    static void check_time(double t) {
        if (!(t >= 0.0 && t <= 1.0))
            throw DomainError("time argument outside [0, 1]");
    }

    int dim_ = 0;
    int smoothness_ = 0;
    bool analytic_ = false;
    EvalFn eval_;
    DerivFn deriv_;
    int exact_orders_ = 0;
    ComplexFn complex_;
};

// --------------------------------------------------------------------------
// Smoothness validation: compare declared derivatives against finite
// differences (or finite differences at two steps when no exact map exists).
// Defects are relative to max(1, scale of the derivative being checked).
// --------------------------------------------------------------------------
struct SmoothnessReport {
    struct PerOrder {
        int order;
        double max_defect;
        double at_t;
    };
    std::vector<PerOrder> orders;
    double max_defect = 0.0;
    bool pass = false;
    double tolerance = 0.0;
};

inline SmoothnessReport validate_smoothness(const OperatorFamily& fam, int n,
                                            const std::vector<double>& grid,
                                            double tol = 1e-6) {
    if (n < 1) throw DomainError("validate_smoothness: n must be >= 1");
    if (grid.empty()) throw DomainError("validate_smoothness: empty grid");
    SmoothnessReport rep;
    rep.tolerance = tol;
    for (int order = 1; order <= n; ++order) {
        double worst = 0.0, worst_t = grid.front();
        for (double t : grid) {
            const double h = fd_default_step(order, t);
            Matrix fd = fd_derivative([&fam](double s) { return fam.eval(s); }, t,
                                      order, h);
            Matrix ref;
            if (fam.has_exact_derivative(order)) {
                ref = fam.deriv(t, order);
            } else {
                // self-consistency: order-4 differences at h and h/2
                ref = fd_derivative([&fam](double s) { return fam.eval(s); }, t,
                                    order, h / 2.0);
            }
            const double scale = std::max(1.0, op_norm(ref));
            const double defect = op_norm(fd - ref) / scale;
            if (defect > worst) {
                worst = defect;
                worst_t = t;
            }
        }
        rep.orders.push_back({order, worst, worst_t});
        rep.max_defect = std::max(rep.max_defect, worst);
    }
    rep.pass = rep.max_defect <= tol;
    return rep;
}

inline std::vector<double> uniform_grid(int points) {
    if (points < 2) throw DomainError("grid needs at least 2 points");
    std::vector<double> g(points);
    for (int i = 0; i < points; ++i) g[i] = double(i) / double(points - 1);
    return g;
}

}  // namespace adlab
