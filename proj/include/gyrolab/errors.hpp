#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>
#include <string_view>

namespace gyrolab {

enum class ErrorCode {
    DimensionMismatch,
    NotPositiveDefinite,
    NotStable,
    InvalidArgument,
    InconsistentSteadyState,
    UnstableIntegration,
    StepTooLarge,
    NoConvergence,
    NotSkewRealizable,
    DomainTooSmall,
    SolverSingular,
    SchemaError,
    RangeError,
    IoError,
};

/// Compact rendering of a number for error messages.
inline std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

constexpr std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::NotStable: return "NotStable";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InconsistentSteadyState: return "InconsistentSteadyState";
    case ErrorCode::UnstableIntegration: return "UnstableIntegration";
    case ErrorCode::StepTooLarge: return "StepTooLarge";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::NotSkewRealizable: return "NotSkewRealizable";
    case ErrorCode::DomainTooSmall: return "DomainTooSmall";
    case ErrorCode::SolverSingular: return "SolverSingular";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::RangeError: return "RangeError";
    case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

/// Every failure raised by the toolkit carries a stable code so front-ends
/// can map it to exit statuses without parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace gyrolab
