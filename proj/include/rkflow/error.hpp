#pragma once

#include <stdexcept>
#include <string>

namespace rkflow {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Unknown registry name (tableau, field kind, command).
class LookupError : public Error {
public:
    using Error::Error;
};

/// Malformed input file; message carries line/field diagnostics.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Inconsistent run or solver configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// An operation was called with arguments violating its precondition.
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// Tensor or latent shapes do not agree.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A velocity evaluation or intermediate state became non-finite.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Attention cache lookup failed.
class CacheMissError : public Error {
public:
    using Error::Error;
};

/// Editing and inversion attention quadrants disagree in shape.
class ManipulationError : public Error {
public:
    using Error::Error;
};

} // namespace rkflow
