#pragma once

#include <stdexcept>
#include <string>

namespace m2s {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible with the requested operation.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A value is out of its documented domain (bad config, empty input, ...).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// A numerical computation produced NaN or infinity.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Reading or writing a file failed.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace m2s
