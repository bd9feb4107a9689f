#pragma once

#include <stdexcept>
#include <string>

namespace lbt {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Mismatched tensor/matrix dimensions; message names the offending shapes.
class ShapeError : public Error {
public:
    using Error::Error;
};

class ArgumentError : public Error {
public:
    using Error::Error;
};

// Axis or element index out of range.
class IndexError : public Error {
public:
    using Error::Error;
};

// Illegal object state, e.g. backward on a consumed tape.
class StateError : public Error {
public:
    using Error::Error;
};

// Raised in strict-finite mode when an op produces NaN/Inf; names the op.
class NumericError : public Error {
public:
    using Error::Error;
};

// Unsupported or corrupt image data.
class DecodeError : public Error {
public:
    using Error::Error;
};

// Directory name not covered by the dataset taxonomy.
class TaxonomyError : public Error {
public:
    using Error::Error;
};

// Checkpoint parse/digest/compatibility failures.
class CheckpointError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace lbt
