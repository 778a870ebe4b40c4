#pragma once

#include <stdexcept>

namespace debiaslab {

// Error categories that map to distinct CLI exit codes.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MissingFileError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DigestMismatchError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace debiaslab
