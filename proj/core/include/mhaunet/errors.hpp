#pragma once

#include <stdexcept>
#include <string>

namespace mha {

// Error taxonomy mirrored by the CLI exit codes:
// ConfigError -> 1, DataError/ShapeError -> 2, NumericError -> 3.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct ShapeError : Error {
    using Error::Error;
};

struct DataError : Error {
    using Error::Error;
};

struct NumericError : Error {
    using Error::Error;
};

inline void check_shape(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

inline void check_config(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
}

inline void check_data(bool ok, const std::string& msg) {
    if (!ok) throw DataError(msg);
}

}  // namespace mha
