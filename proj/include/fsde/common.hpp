#pragma once

#include <stdexcept>
#include <string>

namespace fsde {

// Error taxonomy. Everything user-facing maps onto CLI exit codes:
// ConfigError -> 2, NumericError/TrainingError/StepError -> 3.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& m) : std::runtime_error(m) {}
};

struct CapabilityError : std::runtime_error {
    explicit CapabilityError(const std::string& m) : std::runtime_error(m) {}
};

// Simulation step failure; carries the offending state in the message.
struct StepError : std::runtime_error {
    explicit StepError(const std::string& m) : std::runtime_error(m) {}
};

// Optimization failure; carries the epoch at which it happened.
struct TrainingError : std::runtime_error {
    long epoch;
    TrainingError(const std::string& m, long ep)
        : std::runtime_error(m + " (epoch " + std::to_string(ep) + ")"), epoch(ep) {}
};

} // namespace fsde
