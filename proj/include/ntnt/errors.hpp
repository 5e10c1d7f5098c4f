#pragma once

#include <stdexcept>
#include <string>

namespace ntnt {

/// Shape algebra violation: mismatched dimensions, invalid axis, bad rank.
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Misuse of a gradient tape (non-scalar loss, tensor not on tape, ...).
class TapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration (model/train/run specs). CLI exit 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Missing or malformed input data (datasets, checkpoints). CLI exit 3.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Numerical failure: NaN loss, failed gradient check. CLI exit 4.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace ntnt
