#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

namespace coreflow {

// Two failure families, mapped to CLI exit codes: DataError -> 3, NumericError -> 4.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : Error {
    using Error::Error;
};

struct NumericError : Error {
    using Error::Error;
};

struct ShapeMismatch : DataError {
    explicit ShapeMismatch(const std::string& msg) : DataError("ShapeMismatch: " + msg) {}
};

struct BadMagic : DataError {
    explicit BadMagic(const std::string& msg) : DataError("BadMagic: " + msg) {}
};

struct VersionMismatch : DataError {
    explicit VersionMismatch(const std::string& msg) : DataError("VersionMismatch: " + msg) {}
};

struct TruncatedPayload : DataError {
    explicit TruncatedPayload(const std::string& msg) : DataError("TruncatedPayload: " + msg) {}
};

struct IoFailure : DataError {
    explicit IoFailure(const std::string& msg) : DataError("IoFailure: " + msg) {}
};

struct ConfigError : DataError {
    explicit ConfigError(const std::string& msg) : DataError("ConfigError: " + msg) {}
};

struct IncompleteData : DataError {
    explicit IncompleteData(const std::string& msg) : DataError("IncompleteData: " + msg) {}
};

struct PriorInvalid : DataError {
    explicit PriorInvalid(const std::string& msg) : DataError("PriorInvalid: " + msg) {}
};

struct BatchTooSmall : DataError {
    explicit BatchTooSmall(const std::string& msg) : DataError("BatchTooSmall: " + msg) {}
};

struct RankDeficient : NumericError {
    explicit RankDeficient(const std::string& msg) : NumericError("RankDeficient: " + msg) {}
};

struct NotSymmetric : NumericError {
    explicit NotSymmetric(const std::string& msg) : NumericError("NotSymmetric: " + msg) {}
};

struct BoundInapplicable : NumericError {
    explicit BoundInapplicable(const std::string& msg) : NumericError("BoundInapplicable: " + msg) {}
};

struct NonFiniteLoss : NumericError {
    explicit NonFiniteLoss(const std::string& msg) : NumericError("NonFiniteLoss: " + msg) {}
};

struct NonFiniteState : NumericError {
    explicit NonFiniteState(const std::string& msg) : NumericError("NonFiniteState: " + msg) {}
};

struct CholeskyFailure : NumericError {
    explicit CholeskyFailure(const std::string& msg) : NumericError("CholeskyFailure: " + msg) {}
};

// Non-fatal diagnostics (degenerate masks, rank warnings, loose checkpoints).
inline void warn(const std::string& msg) {
    std::fprintf(stderr, "[coreflow] warning: %s\n", msg.c_str());
}

}  // namespace coreflow
