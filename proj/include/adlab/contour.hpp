#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <vector>

#include "adlab/linalg.hpp"

namespace adlab {

// --------------------------------------------------------------------------
// Closed integration contours in the complex plane: circles (the workhorse;
// trapezoidal quadrature converges geometrically for analytic integrands) and
// polygons (piecewise Gauss-Legendre).
// --------------------------------------------------------------------------
struct Contour {
    enum class Kind { circle, polygon };

    Kind kind = Kind::circle;
    cplx center{0.0, 0.0};
    double radius = 1.0;
    std::vector<cplx> vertices;  // polygon only; closed implicitly
    int min_nodes = 32;

    static Contour make_circle(cplx c, double r, int min_nodes = 32) {
        if (!(r > 0.0)) throw DomainError("contour radius must be positive");
        Contour k;
        k.kind = Kind::circle;
        k.center = c;
        k.radius = r;
        k.min_nodes = min_nodes;
        return k;
    }

    static Contour make_polygon(std::vector<cplx> verts, int min_nodes = 32) {
        if (verts.size() < 3) throw DomainError("polygon contour needs >= 3 vertices");
        Contour k;
        k.kind = Kind::polygon;
        k.vertices = std::move(verts);
        k.min_nodes = min_nodes;
        return k;
    }

    // Winding number of the contour around z.
    int winding(cplx z) const {
        if (kind == Kind::circle) return std::abs(z - center) < radius ? 1 : 0;
        double angle = 0.0;
        const std::size_t n = vertices.size();
        for (std::size_t i = 0; i < n; ++i) {
            const cplx a = vertices[i] - z;
            const cplx b = vertices[(i + 1) % n] - z;
            angle += std::arg(b / a);
        }
        return int(std::lround(angle / (2.0 * std::numbers::pi)));
    }

    // Distance from z to the contour curve itself.
    double distance(cplx z) const {
        if (kind == Kind::circle) return std::abs(std::abs(z - center) - radius);
        double best = std::numeric_limits<double>::infinity();
        const std::size_t n = vertices.size();
        for (std::size_t i = 0; i < n; ++i) {
            const cplx a = vertices[i];
            const cplx b = vertices[(i + 1) % n];
            const cplx ab = b - a;
            const double len2 = std::norm(ab);
            double s = len2 > 0 ? std::clamp(((z - a) * std::conj(ab)).real() / len2,
                                             0.0, 1.0)
                                : 0.0;
            best = std::min(best, std::abs(z - (a + s * ab)));
        }
        return best;
    }
};

struct QuadratureResult {
    Matrix value;
    int nodes = 0;
    double last_delta = 0.0;
};

// (1/2*pi*i) * closed contour integral of a matrix-valued integrand, refined
// (node doubling) until successive values differ by less than tol in the
// max-abs norm, starting at contour.min_nodes and giving up past max_nodes.
inline QuadratureResult contour_integral(const Contour& k,
                                         const std::function<Matrix(cplx)>& f,
                                         double tol, int max_nodes = 4096) {
    QuadratureResult out;
    if (k.kind == Contour::Kind::circle) {
        const double two_pi = 2.0 * std::numbers::pi;
        int n = std::max(4, k.min_nodes);
        // trapezoid on the periodic parametrization; reuse samples on doubling
        std::vector<Matrix> samples(static_cast<std::size_t>(n));
        for (int j = 0; j < n; ++j) {
            const double th = two_pi * j / n;
            samples[std::size_t(j)] = std::polar(1.0, th) *
                                      f(k.center + std::polar(k.radius, th));
        }
        auto sum_to_value = [&](const std::vector<Matrix>& s) {
            Matrix acc = Matrix::Zero(s[0].rows(), s[0].cols());
            for (const auto& m : s) acc += m;
            return Matrix((k.radius / double(s.size())) * acc);
        };
        Matrix value = sum_to_value(samples);
        while (true) {
            if (2 * n > max_nodes)
                throw ConvergenceError(
                    "contour quadrature did not converge within the node budget",
                    out.last_delta);
            std::vector<Matrix> refined(static_cast<std::size_t>(2 * n));
            for (int j = 0; j < n; ++j) {
                refined[std::size_t(2 * j)] = samples[std::size_t(j)];
                const double th = two_pi * (2 * j + 1) / (2 * n);
                refined[std::size_t(2 * j + 1)] =
                    std::polar(1.0, th) * f(k.center + std::polar(k.radius, th));
            }
            Matrix next = sum_to_value(refined);
            out.last_delta = max_abs(next - value);
            samples.swap(refined);
            value.swap(next);
            n *= 2;
            if (out.last_delta <= tol) break;
        }
        out.value = value;
        out.nodes = n;
        return out;
    }

    // polygon: composite 8-point Gauss-Legendre per edge, subdivision doubling
    static const double gl_x[4] = {0.1834346424956498, 0.5255324099163290,
                                   0.7966664774136267, 0.9602898564975363};
    static const double gl_w[4] = {0.3626837833783620, 0.3137066458778873,
                                   0.2223810344533745, 0.1012285362903763};
    const std::size_t nv = k.vertices.size();
    auto integrate = [&](int splits) {
        Matrix acc;
        bool first = true;
        for (std::size_t e = 0; e < nv; ++e) {
            const cplx a = k.vertices[e];
            const cplx b = k.vertices[(e + 1) % nv];
            for (int s = 0; s < splits; ++s) {
                const cplx p = a + (b - a) * (double(s) / splits);
                const cplx q = a + (b - a) * (double(s + 1) / splits);
                const cplx mid = 0.5 * (p + q), half = 0.5 * (q - p);
                for (int j = 0; j < 4; ++j) {
                    for (double sgn : {-1.0, 1.0}) {
                        Matrix term = gl_w[j] * half * f(mid + sgn * gl_x[j] * half);
                        if (first) {
                            acc = term;
                            first = false;
                        } else {
                            acc += term;
                        }
                    }
                }
            }
        }
        const cplx inv_2pii = cplx(0.0, -1.0 / (2.0 * std::numbers::pi));
        return Matrix(inv_2pii * acc);
    };
    int splits = std::max(1, k.min_nodes / int(8 * nv));
    Matrix value = integrate(splits);
    int nodes = splits * 8 * int(nv);
    while (true) {
        if (2 * nodes > max_nodes)
            throw ConvergenceError(
                "contour quadrature did not converge within the node budget",
                out.last_delta);
        Matrix next = integrate(2 * splits);
        out.last_delta = max_abs(next - value);
        value.swap(next);
        splits *= 2;
        nodes *= 2;
        if (out.last_delta <= tol) break;
    }
    out.value = value;
    out.nodes = nodes;
    return out;
}

}  // namespace adlab
