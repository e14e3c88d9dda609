#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "adlab/linalg.hpp"

namespace adlab {

// --------------------------------------------------------------------------
// Scalar functions of t that know their derivatives in closed form and extend
// to complex arguments: finite sums of  c * t^k  and  c * cos(w t + phi).
// Sines are stored as cosines with a -pi/2 phase. Closed under d/dt.
// --------------------------------------------------------------------------
class SmoothScalar {
  public:
    struct PolyTerm {
        cplx coef;
        int power = 0;
    };
    struct TrigTerm {
        cplx coef;
        double omega = 0.0;
        double phase = 0.0;  // evaluates coef * cos(omega * t + phase)
    };

    SmoothScalar() = default;

    static SmoothScalar constant(cplx c) {
        SmoothScalar s;
        if (c != cplx(0.0)) s.poly_.push_back({c, 0});
        return s;
    }
    // coefficients low order first: c0 + c1 t + c2 t^2 + ...
    static SmoothScalar poly(std::vector<cplx> coeffs) {
        SmoothScalar s;
        for (std::size_t k = 0; k < coeffs.size(); ++k)
            if (coeffs[k] != cplx(0.0)) s.poly_.push_back({coeffs[k], int(k)});
        return s;
    }
    static SmoothScalar cosine(cplx amp, double omega, double phase = 0.0) {
        SmoothScalar s;
        s.trig_.push_back({amp, omega, phase});
        return s;
    }
    static SmoothScalar sine(cplx amp, double omega, double phase = 0.0) {
        return cosine(amp, omega, phase - std::numbers::pi / 2.0);
    }

    SmoothScalar& operator+=(const SmoothScalar& o) {
        poly_.insert(poly_.end(), o.poly_.begin(), o.poly_.end());
        trig_.insert(trig_.end(), o.trig_.begin(), o.trig_.end());
        return *this;
    }
    friend SmoothScalar operator+(SmoothScalar a, const SmoothScalar& b) {
        a += b;
        return a;
    }
    friend SmoothScalar operator*(cplx c, SmoothScalar s) {
        for (auto& p : s.poly_) p.coef *= c;
        for (auto& t : s.trig_) t.coef *= c;
        return s;
    }

    cplx eval(double t) const { return eval_impl<double>(t); }
    cplx eval_complex(cplx z) const { return eval_impl<cplx>(z); }

    // d^order/dt^order, exact.
    cplx deriv(double t, int order) const {
        if (order < 0) throw DomainError("derivative order must be >= 0");
        if (order == 0) return eval(t);
        cplx acc = 0.0;
        for (const auto& p : poly_) {
            if (p.power < order) continue;
            double fac = 1.0;
            for (int j = 0; j < order; ++j) fac *= double(p.power - j);
            acc += p.coef * fac * std::pow(t, p.power - order);
        }
        const double half_pi = std::numbers::pi / 2.0;
        for (const auto& tr : trig_) {
            const double scale = std::pow(tr.omega, order);
            acc += tr.coef * scale * std::cos(tr.omega * t + tr.phase + order * half_pi);
        }
        return acc;
    }

    bool empty() const { return poly_.empty() && trig_.empty(); }
    const std::vector<PolyTerm>& poly_terms() const { return poly_; }
    const std::vector<TrigTerm>& trig_terms() const { return trig_; }

  private:
    template <typename T>
    cplx eval_impl(T t) const {
        cplx acc = 0.0;
        for (const auto& p : poly_) acc += p.coef * pow_int(t, p.power);
        for (const auto& tr : trig_)
            acc += tr.coef * std::cos(cplx(tr.omega) * cplx(t) + cplx(tr.phase));
        return acc;
    }
    template <typename T>
    static cplx pow_int(T base, int n) {
        cplx r = 1.0, b = cplx(base);
        for (int i = 0; i < n; ++i) r *= b;
        return r;
    }

    std::vector<PolyTerm> poly_;
    std::vector<TrigTerm> trig_;
};

// --------------------------------------------------------------------------
// A scalar angle that is exactly flat near the interval ends: theta(t) climbs
// from 0 to `total` across [t0, t1] through the C^inf transition
//   s(x) = f(x) / (f(x) + f(1-x)),  f(x) = exp(-1/x)  (x > 0).
// Derivatives are closed-form up to order 2 and finite-difference beyond;
// used by test scenarios that need P' to vanish on a neighborhood.
// --------------------------------------------------------------------------
class FlatStepAngle {
  public:
    FlatStepAngle(double total, double t0, double t1) : total_(total), t0_(t0), t1_(t1) {}

    double eval(double t) const { return total_ * s(x(t)); }
    double deriv(double t, int order) const {
        switch (order) {
            case 0: return eval(t);
            case 1: return total_ * s1(x(t)) / (t1_ - t0_);
            case 2: return total_ * s2(x(t)) / ((t1_ - t0_) * (t1_ - t0_));
            default: {
                // central difference of the (order-2)nd derivative
                const double h = 1e-3;
                return (deriv(t + h, order - 1) - deriv(t - h, order - 1)) / (2 * h);
            }
        }
    }

  private:
    double x(double t) const { return (t - t0_) / (t1_ - t0_); }
    static double f(double u) { return u > 0.0 ? std::exp(-1.0 / u) : 0.0; }
    static double f1(double u) { return u > 0.0 ? f(u) / (u * u) : 0.0; }
    static double f2(double u) {
        return u > 0.0 ? f(u) * (1.0 - 2.0 * u) / (u * u * u * u) : 0.0;
    }
    static double s(double u) {
        if (u <= 0.0) return 0.0;
        if (u >= 1.0) return 1.0;
        return f(u) / (f(u) + f(1.0 - u));
    }
    static double s1(double u) {
        if (u <= 0.0 || u >= 1.0) return 0.0;
        const double a = f(u), b = f(1.0 - u), da = f1(u), db = -f1(1.0 - u);
        const double den = a + b;
        return (da * den - a * (da + db)) / (den * den);
    }
    static double s2(double u) {
        if (u <= 0.0 || u >= 1.0) return 0.0;
        const double a = f(u), b = f(1.0 - u);
        const double da = f1(u), db = -f1(1.0 - u);
        const double dda = f2(u), ddb = f2(1.0 - u);
        const double den = a + b, dden = da + db, ddden = dda + ddb;
        const double num = da * den - a * dden;  // s' = num / den^2
        const double dnum = dda * den - a * ddden;
        return (dnum * den - 2.0 * num * dden) / (den * den * den);
    }

    double total_, t0_, t1_;
};

}  // namespace adlab
