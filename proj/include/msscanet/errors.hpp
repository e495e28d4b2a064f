#pragma once

#include <stdexcept>
#include <string>

namespace msscanet {

// Error taxonomy mirrors the CLI exit codes:
//   UsageError/ShapeError -> 2, DataError -> 3, NumericError -> 4.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : UsageError {
    using UsageError::UsageError;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace msscanet
