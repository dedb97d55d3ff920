#pragma once

#include <stdexcept>
#include <string>

namespace mvlab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid argument value (negative step, empty set, mismatched dimension...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Inconsistent configuration (grid not divisible, unknown key, violated gate).
class ConfigurationError : public Error {
public:
    explicit ConfigurationError(const std::string& what, std::string key = {})
        : Error(what), key_(std::move(key)) {}
    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

/// A particle or state left the admissible region (NaN, overflow or guard radius).
class SimulationDiverged : public Error {
public:
    SimulationDiverged(const std::string& what, double time)
        : Error(what + " (t=" + std::to_string(time) + ")"), time_(time) {}
    double time() const noexcept { return time_; }

private:
    double time_;
};

/// A model does not provide a closure required by the requested operation.
class CapabilityError : public Error {
public:
    using Error::Error;
};

/// Jacobian of the conjugation map became singular.
class DiffeomorphismError : public Error {
public:
    using Error::Error;
};

/// Diffusion vector fields do not commute within tolerance.
class CommutativityError : public Error {
public:
    using Error::Error;
};

/// Newton / root finding failed while inverting the conjugation map.
class InversionError : public Error {
public:
    using Error::Error;
};

}  // namespace mvlab
