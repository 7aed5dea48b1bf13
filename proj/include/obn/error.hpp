#pragma once

#include <stdexcept>
#include <string>

namespace obn {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/geometry disagreement between tensors or a tensor and a kernel.
struct DimensionError : Error {
    explicit DimensionError(const std::string& msg) : Error(msg) {}
};

// Invalid configuration values (ranks, strides, unparsable names/keys).
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Malformed external files (datasets, checkpoints).
struct FormatError : Error {
    explicit FormatError(const std::string& msg) : Error(msg) {}
};

// Missing/unreadable data files.
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// Non-finite values during training.
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Inconsistent internal state (tape misuse and similar).
struct InternalError : Error {
    explicit InternalError(const std::string& msg) : Error(msg) {}
};

} // namespace obn
