#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gpdnn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or ranks.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A forward op produced NaN/Inf, or an input was outside an op's domain.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Cholesky hit a non-positive pivot.
class FactorizationError : public NumericError {
public:
    FactorizationError(std::size_t pivot, double value, const std::string& context = {})
        : NumericError("cholesky: non-positive pivot " + std::to_string(value) + " at index " +
                       std::to_string(pivot) + (context.empty() ? "" : " (" + context + ")")),
          pivot_(pivot),
          value_(value) {}

    std::size_t pivot() const noexcept { return pivot_; }
    double value() const noexcept { return value_; }

private:
    std::size_t pivot_;
    double value_;
};

/// Malformed or missing input data (files, labels, checkpoints).
class DataError : public Error {
public:
    using Error::Error;
};

/// A caller violated an operation's contract (bad configuration, wrong architecture, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

}  // namespace gpdnn
