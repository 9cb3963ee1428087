#pragma once

#include <stdexcept>
#include <string>

namespace bae {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class GeometryError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

class StatisticsError : public Error {
public:
    using Error::Error;
};

class StoreError : public Error {
public:
    using Error::Error;
};

class FitError : public Error {
public:
    using Error::Error;
};

class FactorizationError : public Error {
public:
    using Error::Error;
};

class DegenerateSensitivityError : public Error {
public:
    using Error::Error;
};

class LowAmplitudeError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Linear solve failed to reach the contractual relative residual.
class NumericError : public Error {
public:
    NumericError(const std::string& what, double residual)
        : Error(what + " (relative residual " + std::to_string(residual) + ")"),
          residual_(residual) {}

    [[nodiscard]] double residual() const noexcept { return residual_; }

private:
    double residual_;
};

}  // namespace bae
