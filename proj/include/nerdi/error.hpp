#pragma once

#include <stdexcept>
#include <string>

namespace nerdi {

/// Operand shapes do not satisfy an op's broadcasting or contraction rules.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A value left the domain where an op is defined (log of non-positive, division by zero, NaN).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Malformed or incompatible file contents (bad magic, version, header, channel count).
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A denoiser backend failed to produce a prediction (remote timeout, HTTP error, ...).
class PriorError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Optimization produced a non-finite loss or gradient.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, long step) : std::runtime_error(what), step_(step) {}
    long step() const { return step_; }

private:
    long step_;
};

}  // namespace nerdi
