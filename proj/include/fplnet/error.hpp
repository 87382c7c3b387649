#pragma once

#include <stdexcept>
#include <string>

namespace fplnet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes or channel counts do not line up.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A configuration record violates one of its invariants.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Checkpoint file is malformed, truncated or of the wrong version.
class CheckpointError : public Error {
public:
    using Error::Error;
};

/// Dataset or image file problems (missing pairs, unknown label ids, bad headers).
class DataError : public Error {
public:
    using Error::Error;
};

} // namespace fplnet
