#pragma once

#include <stdexcept>
#include <string>

namespace adlab {

// Base for everything this library throws on purpose.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Precondition violations: t outside [0,1], dimension mismatch, empty grids, ...
struct DomainError : Error {
    using Error::Error;
};

// A linear solve hit (numerical) spectrum: carries the achieved distance estimate.
struct NearSingularError : Error {
    double distance_estimate;
    explicit NearSingularError(const std::string& what, double dist)
        : Error(what), distance_estimate(dist) {}
};

// Contour passes through / winds improperly around spectrum.
struct ContourError : Error {
    using Error::Error;
};

// An iterative process (quadrature refinement, adaptive stepping, series) failed
// to meet its tolerance within its resource budget.
struct ConvergenceError : Error {
    double achieved;
    explicit ConvergenceError(const std::string& what, double got = 0.0)
        : Error(what), achieved(got) {}
};

// A capability (analytic extension, exact derivative) was requested but the
// object does not provide it.
struct CapabilityError : Error {
    using Error::Error;
};

// Malformed configuration / scenario description.
struct ConfigError : Error {
    using Error::Error;
};

}  // namespace adlab
