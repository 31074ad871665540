#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace subflow {

/// Base class for all subflow errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Linear solver failed to reach the requested residual.
class SolveError : public Error {
public:
    SolveError(const std::string& msg, int iterations, double residual)
        : Error(msg + " (iterations=" + std::to_string(iterations) +
                ", relative_residual=" + std::to_string(residual) + ")"),
          iterations(iterations),
          residual(residual) {}

    int iterations;
    double residual;
};

/// Explicit saturation update left [0,1]; the timestep violated the CFL bound.
class CflError : public Error {
public:
    CflError(const std::string& msg, int cell, double value)
        : Error(msg + " (cell=" + std::to_string(cell) + ", saturation=" + std::to_string(value) + ")"),
          cell(cell),
          value(value) {}

    int cell;
    double value;
};

/// Configuration file could not be parsed or failed validation.
/// Collects every problem found so users can fix them in one pass.
class ConfigError : public Error {
public:
    explicit ConfigError(std::vector<std::string> issues)
        : Error(join(issues)), issues(std::move(issues)) {}

    std::vector<std::string> issues;

private:
    static std::string join(const std::vector<std::string>& v) {
        std::string out = "invalid configuration:";
        for (const auto& s : v) {
            out += "\n  - " + s;
        }
        return out;
    }
};

/// Checkpoint file missing, malformed, or incompatible with the active setup.
class CheckpointError : public Error {
public:
    explicit CheckpointError(const std::string& msg) : Error(msg) {}
};

}  // namespace subflow
