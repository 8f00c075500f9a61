#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mcd {

enum class ErrorKind {
    NonSymmetric,
    ConvergenceFailure,
    DomainError,
    NegativeEigenvalue,
    DimensionMismatch,
    SingularDesign,
    Separation,
    NoConvergence,
    SingularFisher,
    UnresolvedThreshold,
    RootBracketFailure,
    SingularCovariance,
    ModelFitFailure,
    ParseError,
    ConfigError,
};

inline constexpr std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::NonSymmetric: return "NonSymmetric";
        case ErrorKind::ConvergenceFailure: return "ConvergenceFailure";
        case ErrorKind::DomainError: return "DomainError";
        case ErrorKind::NegativeEigenvalue: return "NegativeEigenvalue";
        case ErrorKind::DimensionMismatch: return "DimensionMismatch";
        case ErrorKind::SingularDesign: return "SingularDesign";
        case ErrorKind::Separation: return "Separation";
        case ErrorKind::NoConvergence: return "NoConvergence";
        case ErrorKind::SingularFisher: return "SingularFisher";
        case ErrorKind::UnresolvedThreshold: return "UnresolvedThreshold";
        case ErrorKind::RootBracketFailure: return "RootBracketFailure";
        case ErrorKind::SingularCovariance: return "SingularCovariance";
        case ErrorKind::ModelFitFailure: return "ModelFitFailure";
        case ErrorKind::ParseError: return "ParseError";
        case ErrorKind::ConfigError: return "ConfigError";
    }
    return "Unknown";
}

/// Input errors (bad files, bad configuration, shape mismatches) map to CLI
/// exit code 2; everything numerical maps to 3.
inline constexpr bool is_input_error(ErrorKind kind) noexcept {
    return kind == ErrorKind::ParseError || kind == ErrorKind::ConfigError ||
           kind == ErrorKind::DimensionMismatch;
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Failure of one Monte Carlo replication, tagged with where it happened.
class TrialError : public Error {
public:
    TrialError(ErrorKind cause, std::size_t grid_index, std::size_t trial_index,
               const std::string& message)
        : Error(ErrorKind::ModelFitFailure,
                "grid point " + std::to_string(grid_index) + ", trial " +
                    std::to_string(trial_index) + ": " + message),
          cause_(cause), grid_index_(grid_index), trial_index_(trial_index) {}

    ErrorKind cause() const noexcept { return cause_; }
    std::size_t grid_index() const noexcept { return grid_index_; }
    std::size_t trial_index() const noexcept { return trial_index_; }

private:
    ErrorKind cause_;
    std::size_t grid_index_;
    std::size_t trial_index_;
};

}  // namespace mcd
