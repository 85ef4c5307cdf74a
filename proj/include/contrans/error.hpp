#pragma once

#include <stdexcept>
#include <string>

namespace contrans {

/// Broad failure classes; the CLI maps these onto process exit codes.
enum class ErrorCategory {
    usage,     // bad flags, bad config, missing input files
    runtime,   // model, data or numerical failures
    external,  // an external service (classifier) failed
};

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& what)
        : std::runtime_error(what), category_(category) {}

    ErrorCategory category() const noexcept { return category_; }

private:
    ErrorCategory category_;
};

class UsageError : public Error {
public:
    explicit UsageError(const std::string& what) : Error(ErrorCategory::usage, what) {}
};

/// Input that violates a documented precondition (empty sets, mismatched
/// dimensions or model ids, malformed metadata).
class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& what) : Error(ErrorCategory::runtime, what) {}
};

class CheckpointError : public Error {
public:
    enum class Kind { io, corrupt_header, unsupported_dtype, missing_tensor, shape_mismatch, bad_config };

    CheckpointError(Kind kind, const std::string& what)
        : Error(ErrorCategory::runtime, what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

class ContextOverflowError : public Error {
public:
    ContextOverflowError(std::size_t length, std::size_t limit)
        : Error(ErrorCategory::runtime, "sequence of " + std::to_string(length) +
                                            " tokens exceeds context length " + std::to_string(limit)) {}
};

/// Non-finite values or degenerate inputs to a numerical routine.
class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what) : Error(ErrorCategory::runtime, what) {}
};

class ServiceError : public Error {
public:
    explicit ServiceError(const std::string& what) : Error(ErrorCategory::external, what) {}
};

}  // namespace contrans
