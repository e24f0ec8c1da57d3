#pragma once

#include <stdexcept>
#include <string>

namespace mmcda {

/// Operand shapes do not conform.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Argument outside the mathematical domain of an operation (log of a non-positive value, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A loss or gradient became NaN/Inf during training.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace mmcda
