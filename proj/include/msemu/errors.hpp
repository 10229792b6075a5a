#pragma once

#include <stdexcept>
#include <string>

namespace msemu {

/// Base class for all library errors.
class error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid argument or violated precondition.
class argument_error : public error {
public:
    using error::error;
};

/// Malformed file, unsupported schema version, or parse failure.
class format_error : public error {
public:
    using error::error;
};

/// Factorization failure, iterative-solver non-convergence, or a
/// numerically indefinite matrix.
class conditioning_error : public error {
public:
    using error::error;
};

/// Operation not available in the requested mode (e.g. dense-only
/// shortcut requested for a problem past the dense cutoff).
class capability_error : public error {
public:
    using error::error;
};

/// Estimated memory use exceeds the configured budget.
class resource_error : public error {
public:
    using error::error;
};

/// Bound preconditions cannot hold (e.g. conditioning slack r >= 1).
class infeasibility_error : public error {
public:
    using error::error;
};

/// Every candidate in a parameter search failed.
class selection_error : public error {
public:
    using error::error;
};

/// A stage of the multi-step fit failed.
class fit_error : public error {
public:
    fit_error(int stage, const std::string& what)
        : error("stage " + std::to_string(stage) + ": " + what), stage_(stage) {}
    int stage() const { return stage_; }

private:
    int stage_;
};

/// Object used before it was put in a valid state (e.g. unfitted model).
class state_error : public error {
public:
    using error::error;
};

} // namespace msemu
