#pragma once

#include <stdexcept>
#include <string>

namespace kdtl {

// Exception hierarchy. The CLI maps these onto its exit codes:
// ValidationError -> 2, IoError -> 3, NumericalError (and subclasses) -> 4.

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration, including insufficient numerical sampling.
class ConfigurationError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class IoError : public Error {
public:
    using Error::Error;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

class FitError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class ExtractionError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class CalibrationError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class AggregationError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

namespace detail {

inline void require_domain(bool ok, const std::string& what) {
    if (!ok) throw DomainError(what);
}

} // namespace detail

} // namespace kdtl
