#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace wpfs {

/// Shape mismatch between matrices (names both shapes in the message).
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Violated precondition on values (negative entries, labels out of range, ...).
class ValueError : public std::runtime_error {
public:
    explicit ValueError(const std::string& msg) : std::runtime_error(msg) {}
};

/// API misuse (backward on a consumed tape, mismatched fold plans, ...).
class UsageError : public std::runtime_error {
public:
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Bad external input (unparseable CSV, missing column, ...). Maps to exit code 2.
class InputError : public std::runtime_error {
public:
    explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Training batch too small for batch normalisation; the caller skips the batch.
class SmallBatchError : public std::runtime_error {
public:
    explicit SmallBatchError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Non-finite training loss. Carries the loss curves recorded up to the abort
/// so partial diagnostics can still be written. Maps to exit code 3.
class DivergenceError : public std::runtime_error {
public:
    struct CurvePoint {
        long iteration;
        double train_loss;
        double val_loss;
    };

    DivergenceError(const std::string& msg, std::vector<CurvePoint> curves)
        : std::runtime_error(msg), curves_(std::move(curves)) {}

    const std::vector<CurvePoint>& curves() const { return curves_; }

private:
    std::vector<CurvePoint> curves_;
};

}  // namespace wpfs
