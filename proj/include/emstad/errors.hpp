#pragma once

#include <stdexcept>
#include <string>

namespace emstad {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A Cholesky pivot was not strictly positive: the covariance is degenerate.
class NotPositiveDefinite : public Error {
public:
    using Error::Error;
};

/// Two targets were placed in the same range bin.
class DuplicateBin : public Error {
public:
    using Error::Error;
};

/// Every class of a responsibility row underflowed, even in the log domain.
class DegeneratePosterior : public Error {
public:
    using Error::Error;
};

/// The angle PMF update has no target mass to normalize.
class NoTargetMass : public Error {
public:
    using Error::Error;
};

/// A rate was requested over zero trials.
class EmptyBatch : public Error {
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

} // namespace emstad
